import numpy as np
import pytest
from parameterized import parameterized

from hydraens.data import TaskSpec, generate
from hydraens.errors import ConfigError, ContractError
from hydraens.pruning import (ablate_perm, ablate_temp, ablated,
                              eval_score, eval_threads, extract_circuit,
                              output_block, tie_order)
from hydraens.testing import exhaustive_step, random_model
from hydraens.transformer import (HeadMask, TransformerConfig, apply_mask,
                                  predict_proba)
from hydraens.uq import accuracy, auroc, msp

SPEC = TaskSpec(seed=5, vocab_size=16, n_classes=2, seq_len=6, ood_vocab=4)
CFG = TransformerConfig(n_layers=2, d_model=8, n_heads=4, d_ff=16,
                        seq_len=6, vocab_size=16, n_classes=2)
MODEL = random_model(np.random.default_rng(1), CFG, perturb=0.3)
ID = generate(SPEC, 40, 'test')
OOD = generate(SPEC, 40, 'ood')


def test_ablate_temp_restores():
    before = {n: t.numpy() for n, t in MODEL.parameters().items()}
    with ablate_temp(MODEL, 1, 2) as m:
        np.testing.assert_array_equal(output_block(m, 1, 2), 0.0)
        assert np.abs(output_block(MODEL, 1, 2)).max() > 0
    for name, t in MODEL.parameters().items():
        assert t.data.tobytes() == before[name].tobytes()


def test_ablate_perm_is_idempotent():
    once = ablate_perm(MODEL, 0, 1)
    twice = ablate_perm(once, 0, 1)
    np.testing.assert_array_equal(once.layers[0].w_o.data,
                                  twice.layers[0].w_o.data)
    np.testing.assert_array_equal(once.layers[0].w_o.data[:2],
                                  MODEL.layers[0].w_o.data[:2])


def test_ablation_equals_mask():
    mask = HeadMask.from_text('0110,1001')
    tokens = ID.tokens[:8]
    np.testing.assert_allclose(
        predict_proba(ablated(MODEL, mask.removed()), tokens),
        predict_proba(MODEL, tokens, mask), rtol=0, atol=1e-12)


def test_ablation_of_absent_head():
    pruned = apply_mask(MODEL, HeadMask.from_text('1011,1111'))
    assert output_block(pruned, 0, 1) is None
    same = ablate_perm(pruned, 0, 1)
    np.testing.assert_array_equal(same.layers[0].w_o.data,
                                  pruned.layers[0].w_o.data)
    with pytest.raises(IndexError):
        ablate_perm(MODEL, 0, 4)


def test_eval_score_kinds():
    probs = predict_proba(MODEL, ID.tokens)
    s_acc = accuracy(probs, ID.labels)
    s_ood = auroc(msp(probs), msp(predict_proba(MODEL, OOD.tokens)))
    assert eval_score(MODEL, 'acc', ID) == s_acc
    assert eval_score(MODEL, 'ood', ID, OOD) == pytest.approx(s_ood)
    assert eval_score(MODEL, 'avg', ID, OOD) == \
        pytest.approx((s_acc + s_ood) / 2)


def test_eval_score_errors():
    with pytest.raises(ConfigError):
        eval_score(MODEL, 'f1', ID)
    with pytest.raises(ContractError):
        eval_score(MODEL, 'ood', ID)


@parameterized.expand([('acc',), ('ood',), ('avg',)])
def test_first_step_matches_exhaustive_search(kind):
    ranking = extract_circuit(MODEL, 1, kind, ID, OOD, threads=2)
    best, value, _ = exhaustive_step(MODEL, MODEL.mask(), kind, ID, OOD)
    assert ranking.removals[0] == best
    assert ranking.trace[0] == value


def test_greedy_path_matches_exhaustive_search():
    ranking = extract_circuit(MODEL, 4, 'avg', ID, OOD, threads=3)
    current, mask = MODEL, MODEL.mask()
    for step in range(4):
        best, value, _ = exhaustive_step(current, mask, 'avg', ID, OOD)
        assert ranking.removals[step] == best
        assert ranking.trace[step] == value
        current = ablate_perm(current, *best)
        mask = mask.without(*best)


def test_ranking_respects_survivor_rule():
    ranking = extract_circuit(MODEL, 6, 'acc', ID, threads=2)
    assert len(ranking) == 6
    assert ranking.mask(2, 4).counts == (1, 1)
    assert ranking.mask(2, 4, depth=2) == \
        HeadMask.from_removed(2, 4, ranking.removals[:2])


def test_thread_count_does_not_change_ranking():
    a = extract_circuit(MODEL, 3, 'avg', ID, OOD, threads=1)
    b = extract_circuit(MODEL, 3, 'avg', ID, OOD, threads=4)
    assert a == b


def test_base_score_and_zero_budget():
    ranking = extract_circuit(MODEL, 0, 'acc', ID, threads=1)
    assert len(ranking) == 0
    assert ranking.base_score == eval_score(MODEL, 'acc', ID)


def test_seeded_tie_order():
    # two samples and accuracy leave most candidates tied
    tiny = ID.subset([0, 1])
    for seed in (None, 3, 8):
        order = tie_order(2, 4, seed)
        ranked = sorted(order, key=order.get)
        ranking = extract_circuit(MODEL, 1, 'acc', tiny, seed=seed,
                                  threads=2)
        best, _, _ = exhaustive_step(MODEL, MODEL.mask(), 'acc', tiny,
                                     order=ranked)
        assert ranking.removals[0] == best
        assert ranking.seed == seed


def test_subsample():
    ranking = extract_circuit(MODEL, 2, 'avg', ID, OOD, subsample=10,
                              threads=2)
    assert len(ranking) == 2


@pytest.mark.parametrize('budget', [-1, 7])
def test_budget_out_of_range(budget):
    with pytest.raises(ConfigError):
        extract_circuit(MODEL, budget, 'acc', ID)


def test_eval_threads(monkeypatch):
    monkeypatch.setenv('HYDRA_THREADS', '3')
    assert eval_threads() == 3
    monkeypatch.setenv('HYDRA_THREADS', 'many')
    with pytest.raises(ConfigError):
        eval_threads()
    monkeypatch.delenv('HYDRA_THREADS')
    assert eval_threads() >= 1
