import dataclasses
import unittest

import numpy as np
import pytest
from parameterized import parameterized

from hydraens.errors import ConfigError, ContractError, DimensionError
from hydraens.numerics import Tensor
from hydraens.testing import (random_config, random_mask, random_model,
                              random_tokens, straight_line_proba)
from hydraens.transformer import (HeadMask, TransformerConfig, apply_mask,
                                  check_tokens, forward_layer, forward_model,
                                  head_outputs, init_model, predict_proba,
                                  slice_layer)


class TestTransformerConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = TransformerConfig()
        self.assertEqual(8, cfg.d_head)
        self.assertEqual(cfg, TransformerConfig.from_dict(cfg.to_dict()))

    def test_heads_divide_width(self):
        with self.assertRaises(ConfigError):
            TransformerConfig(d_model=30, n_heads=4)

    def test_positive_ints(self):
        with self.assertRaises(ConfigError):
            TransformerConfig(n_layers=0)
        with self.assertRaises(ConfigError):
            TransformerConfig(d_ff=2.0)
        with self.assertRaises(ConfigError):
            TransformerConfig(n_classes=True)

    def test_unknown_field(self):
        d = TransformerConfig().to_dict()
        d['dropout'] = 0.1
        with self.assertRaises(ConfigError):
            TransformerConfig.from_dict(d)

    def test_config_error_is_value_error(self):
        with self.assertRaises(ValueError):
            TransformerConfig(ln_eps=-1.0)


class TestHeadMask(unittest.TestCase):

    def test_full(self):
        mask = HeadMask.full(2, 3)
        self.assertEqual((3, 3), mask.counts)
        self.assertEqual([], mask.removed())
        self.assertEqual('111,111', mask.to_text())

    def test_from_removed(self):
        mask = HeadMask.from_removed(2, 3, [(0, 1), (1, 0), (1, 2)])
        self.assertEqual('101,010', mask.to_text())
        self.assertEqual([(0, 1), (1, 0), (1, 2)], mask.removed())
        self.assertEqual((0, 2), mask.survivors(0))
        self.assertFalse(mask.can_remove(1, 1))
        self.assertFalse(mask.can_remove(0, 1))
        self.assertTrue(mask.can_remove(0, 0))

    def test_text_round_trip(self):
        mask = HeadMask.from_text('1001,0110\n')
        self.assertEqual(mask, HeadMask.from_text(mask.to_text()))
        self.assertEqual(hash(mask), hash(HeadMask.from_text('1001,0110')))

    def test_empty_layer(self):
        with self.assertRaises(ContractError):
            HeadMask([[1, 0], [0, 0]])
        with self.assertRaises(ContractError):
            HeadMask.full(1, 2).without(0, 0).without(0, 1)

    def test_bad_text(self):
        with self.assertRaises(ContractError):
            HeadMask.from_text('10,1x')
        with self.assertRaises(ContractError):
            HeadMask.from_text('10,111')

    def test_without(self):
        mask = HeadMask.full(2, 2).without(1, 0)
        self.assertEqual('11,01', mask.to_text())
        with self.assertRaises(IndexError):
            mask.without(2, 0)

    def test_hamming(self):
        a = HeadMask.from_text('110,011')
        b = HeadMask.from_text('101,011')
        self.assertEqual(2, a.hamming(b))
        with self.assertRaises(DimensionError):
            a.hamming(HeadMask.full(2, 2))

    def test_immutable(self):
        mask = HeadMask.full(1, 2)
        with self.assertRaises(ValueError):
            mask.bits[0, 0] = False


@pytest.mark.parametrize('seed', range(10))
def test_forward_matches_straight_line(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    cfg = model.config
    tokens = random_tokens(rng, cfg, 3)
    mask = random_mask(rng, cfg.n_layers, cfg.n_heads)
    np.testing.assert_allclose(predict_proba(model, tokens),
                               straight_line_proba(model, tokens),
                               rtol=0, atol=1e-10)
    np.testing.assert_allclose(predict_proba(model, tokens, mask),
                               straight_line_proba(model, tokens, mask),
                               rtol=0, atol=1e-10)


@pytest.mark.parametrize('seed', range(10))
def test_structural_equals_ablation(seed):
    rng = np.random.default_rng(100 + seed)
    model = random_model(rng)
    cfg = model.config
    tokens = random_tokens(rng, cfg, 4)
    mask = random_mask(rng, cfg.n_layers, cfg.n_heads)
    a = forward_model(tokens, model, mask, realization='structural')
    b = forward_model(tokens, model, mask, realization='ablation')
    np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-12)


def test_apply_mask_is_structural():
    rng = np.random.default_rng(3)
    cfg = random_config(rng, n_layers=2, n_heads=4, d_model=8)
    model = random_model(rng, cfg)
    mask = HeadMask.from_text('1010,0001')
    pruned = apply_mask(model, mask)
    assert pruned.is_pruned
    assert pruned.heads == ((0, 2), (3,))
    assert pruned.mask() == mask
    assert pruned.layers[0].w_q.shape == (8, 4)
    assert pruned.layers[0].w_o.shape == (4, 8)
    assert pruned.layers[1].w1.shape == model.layers[1].w1.shape
    tokens = random_tokens(rng, cfg, 5)
    np.testing.assert_allclose(predict_proba(pruned, tokens),
                               predict_proba(model, tokens, mask),
                               rtol=0, atol=1e-12)
    assert apply_mask(model, None) is model


def test_apply_mask_on_pruned_model():
    rng = np.random.default_rng(4)
    cfg = random_config(rng, n_layers=1, n_heads=4, d_model=8)
    model = random_model(rng, cfg)
    pruned = apply_mask(model, HeadMask.from_text('1110'))
    again = apply_mask(pruned, HeadMask.from_text('0110'))
    assert again.heads == ((1, 2),)
    with pytest.raises(ContractError):
        apply_mask(pruned, HeadMask.from_text('0001'))


def test_mask_shape_mismatch():
    model = init_model(TransformerConfig(n_layers=2, n_heads=4))
    tokens = np.zeros((1, 16), dtype=np.int64)
    with pytest.raises(DimensionError):
        forward_model(tokens, model, HeadMask.full(3, 4))


@parameterized.expand([
    ('too_short', np.zeros((2, 3), dtype=np.int64), DimensionError),
    ('floats', np.zeros((2, 16)), DimensionError),
    ('negative', np.full((2, 16), -1), IndexError),
    ('too_large', np.full((2, 16), 64), IndexError),
])
def test_check_tokens(_, tokens, error):
    with pytest.raises(error):
        check_tokens(tokens, TransformerConfig())


def test_single_sequence():
    rng = np.random.default_rng(5)
    model = random_model(rng)
    tokens = random_tokens(rng, model.config, 2)
    one = predict_proba(model, tokens[0])
    assert one.shape == (model.config.n_classes,)
    np.testing.assert_allclose(one, predict_proba(model, tokens)[0],
                               atol=1e-12)


def test_predict_proba_batching():
    rng = np.random.default_rng(6)
    model = random_model(rng)
    tokens = random_tokens(rng, model.config, 7)
    np.testing.assert_allclose(predict_proba(model, tokens, batch_size=3),
                               predict_proba(model, tokens),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(predict_proba(model, tokens).sum(axis=1), 1.0)


def test_head_outputs():
    rng = np.random.default_rng(7)
    cfg = random_config(rng, n_layers=2, n_heads=3, d_model=6)
    model = apply_mask(random_model(rng, cfg), HeadMask.from_text('111,101'))
    tokens = random_tokens(rng, cfg, 4)
    assert head_outputs(model, tokens, 0).shape == (4, 3, 2)
    assert head_outputs(model, tokens, 1).shape == (4, 2, 2)
    with pytest.raises(IndexError):
        head_outputs(model, tokens, 2)


def test_init_model_is_deterministic():
    cfg = TransformerConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8,
                            seq_len=4, vocab_size=6, n_classes=2)
    a, b = init_model(cfg, 3), init_model(cfg, 3)
    for (na, ta), (nb, tb) in zip(a.parameters().items(),
                                  b.parameters().items()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    c = init_model(cfg, 4)
    assert not np.array_equal(a.token_embedding.data, c.token_embedding.data)


def test_model_rejects_wrong_shapes():
    model = init_model(TransformerConfig(n_layers=1))
    with pytest.raises((DimensionError, ConfigError)):
        dataclasses.replace(model, layers=model.layers * 2)


@pytest.mark.parametrize('seed', range(5))
def test_head_order_does_not_matter(seed):
    rng = np.random.default_rng(200 + seed)
    cfg = random_config(rng, n_layers=2, n_heads=4, d_model=8)
    model = random_model(rng, cfg)
    pruned = apply_mask(model, random_mask(rng, cfg.n_layers, cfg.n_heads))
    x = Tensor(rng.standard_normal((3, cfg.seq_len, cfg.d_model)))
    layers = []
    for w in pruned.layers:
        order = [int(h) for h in rng.permutation(w.heads)]
        shuffled = slice_layer(w, order)
        assert shuffled.heads == tuple(order)
        np.testing.assert_allclose(
            forward_layer(x, shuffled, eps=cfg.ln_eps).data,
            forward_layer(x, w, eps=cfg.ln_eps).data, rtol=0, atol=1e-10)
        layers.append(shuffled)
    shuffled_model = dataclasses.replace(pruned, layers=tuple(layers))
    tokens = random_tokens(rng, cfg, 4)
    np.testing.assert_allclose(predict_proba(shuffled_model, tokens),
                               predict_proba(pruned, tokens),
                               rtol=0, atol=1e-10)
