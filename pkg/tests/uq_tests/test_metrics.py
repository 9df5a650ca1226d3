import numpy as np
import pytest
from parameterized import parameterized

from hydraens.errors import ContractError, DimensionError
from hydraens.testing import hand_binned_ece, pairwise_auroc, scan_fpr95
from hydraens.uq import (PredictionSet, accuracy, aece, aupr, auroc, brier,
                         calibration_error, ece, fpr95, msp, nll,
                         predictive_entropy)

PROBS = np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.45, 0.55],
                  [0.8, 0.2]])
LABELS = np.array([0, 1, 1, 0, 0])


@pytest.mark.parametrize('seed', range(30))
def test_auroc_and_fpr95_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = np.round(rng.random(int(rng.integers(5, 40))), 2)
    b = np.round(rng.random(int(rng.integers(5, 40))), 2)
    assert auroc(a, b) == pytest.approx(pairwise_auroc(a, b), abs=1e-12)
    assert fpr95(a, b) == scan_fpr95(a, b)


def test_perfect_separation():
    ids = [0.9, 0.8, 0.95, 0.85]
    oods = [0.1, 0.2]
    assert auroc(ids, oods) == 1.0
    assert fpr95(ids, oods) == 0.0
    assert aupr(ids, oods) == pytest.approx(1.0)


def test_reversed_and_tied_scores():
    assert auroc([0.1, 0.2], [0.8, 0.9]) == 0.0
    assert auroc([0.5, 0.5], [0.5]) == 0.5
    assert fpr95([0.5] * 20, [0.5, 0.4]) == 0.5


def test_fpr95_threshold():
    ids = np.arange(1, 21) / 20.0
    # keeping 19 of 20 IDs puts the threshold at 0.1
    assert fpr95(ids, [0.1, 0.09, 0.5, 0.0]) == 0.5


def test_aupr_staircase():
    # precision 1 up to recall 0.5, drops to 1/2, ends at 2/3
    assert aupr([0.9, 0.5], [0.7]) == pytest.approx(
        0.5 + 0.5 * (0.5 + 2 / 3) / 2)


def test_accuracy_brier_nll():
    assert accuracy(PROBS, LABELS) == 0.6
    onehot = np.eye(2)[LABELS]
    assert brier(PROBS, LABELS) == pytest.approx(
        ((PROBS - onehot) ** 2).sum(axis=1).mean())
    assert nll(PROBS, LABELS) == pytest.approx(
        -np.log(PROBS[np.arange(5), LABELS]).mean())


def test_nll_is_clamped():
    assert nll([[1.0, 0.0]], [1]) == pytest.approx(-np.log(1e-12))


def test_accuracy_ties_go_to_lowest_class():
    assert accuracy([[0.5, 0.5]], [0]) == 1.0


def test_ece_matches_hand_binning():
    edges = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    conf = msp(PROBS)
    correct = PROBS.argmax(axis=1) == LABELS
    assert ece(PROBS, LABELS, bins=5) == pytest.approx(
        hand_binned_ece(conf, correct, edges), abs=1e-12)


def test_aece_equal_mass_bins():
    conf = [0.55, 0.6, 0.7, 0.9, 0.95]
    correct = [1, 0, 1, 1, 0]
    # bins {0.55, 0.6, 0.7} and {0.9, 0.95}
    expected = (abs(2 - 1.85) + abs(1 - 1.85)) / 5
    assert calibration_error(conf, correct, 2, adaptive=True) == \
        pytest.approx(expected)


def test_perfect_calibration():
    conf = np.full(10, 0.7)
    correct = np.array([1] * 7 + [0] * 3)
    assert calibration_error(conf, correct, 15) == pytest.approx(0.0,
                                                                 abs=1e-15)


def test_calibration_is_a_fraction():
    probs = np.tile([[1.0, 0.0]], (4, 1))
    assert ece(probs, [1, 1, 1, 1]) == 1.0
    assert aece(probs, [1, 1, 1, 1]) == 1.0


def test_confidence_zero_goes_to_first_bin():
    assert calibration_error([0.0], [0], 3) == 0.0


def test_msp_and_entropy():
    np.testing.assert_array_equal(msp(PROBS), [0.9, 0.6, 0.7, 0.55, 0.8])
    assert predictive_entropy([0.5, 0.5]) == pytest.approx(np.log(2))
    assert predictive_entropy([1.0, 0.0]) == pytest.approx(0.0)


@parameterized.expand([
    ('auroc_empty', lambda: auroc([], [0.1]), ContractError),
    ('fpr95_empty', lambda: fpr95([0.1], []), ContractError),
    ('aupr_empty', lambda: aupr([], []), ContractError),
    ('accuracy_empty', lambda: accuracy(np.zeros((0, 2)), []),
     ContractError),
    ('bins', lambda: calibration_error([0.5], [1], 0), ContractError),
    ('labels', lambda: accuracy(PROBS, [0, 1]), DimensionError),
    ('flags', lambda: calibration_error([0.5, 0.2], [1], 3),
     DimensionError),
])
def test_errors(_, f, error):
    with pytest.raises(error):
        f()


class TestPredictionSet:

    def test_ood_set(self):
        s = PredictionSet(PROBS)
        assert s.is_ood
        assert len(s) == 5

    def test_labels(self):
        s = PredictionSet(PROBS, [0, 1, 1, 0, 0])
        assert not s.is_ood
        assert s.labels.dtype == np.int64

    def test_simplex(self):
        with pytest.raises(ContractError):
            PredictionSet([[0.5, 0.6]])
        with pytest.raises(ContractError):
            PredictionSet([[1.2, -0.2]])

    def test_shapes(self):
        with pytest.raises(DimensionError):
            PredictionSet([0.5, 0.5])
        with pytest.raises(DimensionError):
            PredictionSet(PROBS, [0, 1])
        with pytest.raises(IndexError):
            PredictionSet(PROBS, [0, 1, 2, 0, 0])
