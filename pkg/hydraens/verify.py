'''Programmatic oracle suites

Each suite raises ``AssertionError`` on the first violated check.
:func:`run` times them and reports one ``suite<TAB>PASS|FAIL<TAB>seconds``
line per suite.

'''
import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hydraens import testing
from hydraens.data import TaskSpec, generate
from hydraens.errors import (BadMagicError, OffsetOverlapError,
                             TruncatedPayloadError)
from hydraens.fusion import (cost_report, fuse, hydra_layer_weights,
                             hydra_predict, standard_layer_weights)
from hydraens.io import dumps, loads
from hydraens.numerics import precision
from hydraens.pruning import (PruneBudget, ablate_perm, extract_circuit,
                              make_members, taylor_scores)
from hydraens.pruning.taylor import (HeadScore, head_block_score,
                                     scores_from_gradients)
from hydraens.theory import proposition1_trial, sweep
from hydraens.transformer import (HeadMask, TransformerConfig, apply_mask,
                                  forward_model, init_model, loss_and_grads,
                                  train_steps)
from hydraens.uq import (aece, aupr, auroc, centroid_distances, ece,
                         evaluate_model, fpr95)

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())

VIT = TransformerConfig(n_layers=12, d_model=768, n_heads=12, d_ff=3072,
                        seq_len=197, vocab_size=768, n_classes=1000)
VIT_TOTALS = (86.57e6, 116.31e6, 259.7e6)


def check_fusion(cases: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    for i in range(cases):
        m = 1 + i % 4
        hm = testing.random_hydra(rng, m)
        tokens = testing.random_tokens(rng, hm.config, 3)
        got = hydra_predict(tokens, hm)
        want = testing.member_oracle(hm, tokens)
        err = float(np.abs(got - want).max())
        assert err <= 1e-10, 'case {} (M={}): max-abs {}'.format(i, m, err)


def check_ablation(cases: int = 200, seed: int = 1):
    rng = np.random.default_rng(seed)
    for i in range(cases):
        model = testing.random_model(rng)
        mask = testing.random_mask(rng, model.config.n_layers,
                                   model.config.n_heads)
        tokens = testing.random_tokens(rng, model.config, 2)
        a = forward_model(tokens, model, mask, 'structural').data
        b = forward_model(tokens, model, mask, 'ablation').data
        err = float(np.abs(a - b).max())
        assert err <= 1e-12, 'case {}: max-abs {}'.format(i, err)


def check_greedy(budget: int = 6, seed: int = 2):
    spec = TaskSpec(seed=seed)
    cfg = TransformerConfig(n_layers=2, n_heads=4, d_model=8, d_ff=16)
    model = init_model(cfg, seed)
    id_data = generate(spec, 48, 'test')
    ood_data = generate(spec, 48, 'ood')
    ranking = extract_circuit(model, budget, 'avg', id_data, ood_data,
                              threads=2)
    current = model
    mask = model.mask()
    for step, (removal, score) in enumerate(zip(ranking.removals,
                                                ranking.trace)):
        best, value, _ = testing.exhaustive_step(current, mask, 'avg',
                                                 id_data, ood_data)
        assert best == removal and value == score, \
            'step {}: greedy {} ({}) vs exhaustive {} ({})'.format(
                step, removal, score, best, value)
        current = ablate_perm(current, *best)
        mask = mask.without(*best)


def check_gradients(seeds: Sequence[int] = range(20)):
    for seed in seeds:
        rng = np.random.default_rng([3, seed])
        model = testing.random_model(rng)
        tokens = testing.random_tokens(rng, model.config, 2)
        labels = rng.integers(model.config.n_classes, size=2)
        _, grads = loss_and_grads(model, tokens, labels)
        fd = testing.fd_gradients(model, tokens, labels)
        for name, g in fd.items():
            err = testing.relative_error(grads[name].data, g)
            assert err < 1e-4, 'seed {} {}: relative error {}'.format(
                seed, name, err)


def check_taylor(seed: int = 4):
    w = np.zeros((4, 4))
    w[:, :2] = 0.5
    g = np.zeros((4, 4))
    g[:, :2] = 1.0
    q = head_block_score(w, g, 0, 2)
    assert q == 0.5, 'hand instance: q_0 = {}'.format(q)
    assert HeadScore(0, 0, q, 0.0, 0.0).score == 0.5 / 3

    rng = np.random.default_rng(seed)
    cfg = testing.random_config(rng, n_layers=2)
    model = testing.random_model(rng, cfg)
    tokens = testing.random_tokens(rng, cfg, 4)
    labels = rng.integers(cfg.n_classes, size=4)
    got = taylor_scores(model, [(tokens, labels)])
    want = scores_from_gradients(
        model, testing.fd_gradients(model, tokens, labels))
    for a, b in zip(got, want):
        err = testing.relative_error([a.q, a.k, a.v], [b.q, b.k, b.v],
                                     floor=1e-8)
        assert err < 1e-3, 'head ({}, {}): relative error {}'.format(
            a.layer, a.head, err)


def check_cost(seed: int = 5):
    for d in (8, 64, 768):
        cfg = TransformerConfig(d_model=d, n_heads=4, d_ff=4 * d)
        assert standard_layer_weights(cfg) == 12 * d * d
        assert hydra_layer_weights(cfg, [d]) == 12 * d * d
    assert hydra_layer_weights(VIT, [8 * 64] * 3) == 9437184

    rng = np.random.default_rng(seed)
    for _ in range(50):
        cfg = testing.random_config(rng)
        m = int(rng.integers(1, 5))
        masks = [testing.random_mask(rng, cfg.n_layers, cfg.n_heads)
                 for _ in range(m)]
        report = cost_report(cfg, masks)
        assert report.within_upper_bound
        covered = all(sum(mk.counts[l] for mk in masks) >= cfg.n_heads
                      for l in range(cfg.n_layers))
        assert report.within_lower_bound == covered

    keep = HeadMask.from_removed(12, 12, [(l, h) for l in range(12)
                                          for h in range(8, 12)])
    report = cost_report(VIT, [keep] * 3)
    for got, want in zip((report.params_standard, report.params_hydra,
                          report.params_deep), VIT_TOTALS):
        assert abs(got - want) / want < 0.03, \
            'total {} vs {}'.format(got, want)


def check_metrics(seed: int = 6):
    rng = np.random.default_rng(seed)
    for i in range(50):
        a = np.round(rng.random(int(rng.integers(5, 40))), 2)
        b = np.round(rng.random(int(rng.integers(5, 40))), 2)
        assert abs(auroc(a, b) - testing.pairwise_auroc(a, b)) < 1e-12, \
            'fixture {}: AUROC'.format(i)
        assert fpr95(a, b) == testing.scan_fpr95(a, b), \
            'fixture {}: FPR95'.format(i)

    probs = np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.45, 0.55],
                      [0.8, 0.2]])
    labels = np.array([0, 1, 1, 0, 0])
    conf = probs.max(axis=1)
    hit = (probs.argmax(axis=1) == labels).astype(float)
    want = testing.hand_binned_ece(conf.tolist(), hit.tolist(),
                                   [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert abs(ece(probs, labels, bins=5) - want) < 1e-12
    # equal-mass bins of three and two samples after sorting
    order = np.argsort(conf, kind='stable')
    halves = [order[:3], order[3:]]
    want = sum(abs(hit[h].sum() - conf[h].sum()) for h in halves) / 5
    assert abs(aece(probs, labels, bins=2) - want) < 1e-12

    ids, oods = np.array([0.9, 0.8, 0.95, 0.85]), np.array([0.1, 0.2])
    got = (auroc(ids, oods), fpr95(ids, oods), aupr(ids, oods))
    assert got == (1.0, 0.0, 1.0), 'perfect separation: {}'.format(got)


def check_proposition(trials: int = 1000, n: int = 8):
    for r in sweep(range(trials), n, 'holds'):
        assert r.held, 'seed {}: gap shrank'.format(r.seed)
        assert r.clean_increase <= r.noisy_increase
        tol = 1e-12 * max(1.0, abs(r.gap_before), abs(r.gap_after),
                          abs(r.noisy_increase))
        assert abs(r.predicted - r.measured) <= tol, \
            'seed {}: predicted {} measured {}'.format(
                r.seed, r.predicted, r.measured)
    for regime in ('violated-hessian', 'violated-alignment'):
        r = proposition1_trial(0, n, regime)
        assert not r.held, '{} counterexample held'.format(regime)
    r = proposition1_trial(0, n, 'holds', delta_scale=0.0)
    assert r.gap_before == r.gap_after


def check_geometry(seed: int = 7):
    rng = np.random.default_rng(seed)
    dk, n = 3, 200
    z = rng.standard_normal((n, dk))
    z -= z.mean(axis=0)
    chol = np.linalg.cholesky(z.T @ z / (n - 1))
    white = np.linalg.solve(chol, z.T).T
    id_v = white[:, None, :]
    shift = np.zeros(dk)
    shift[0] = 1.0
    ood_v = (white + shift)[:, None, :]
    report = centroid_distances(id_v, ood_v)
    assert abs(report.euclidean[0] - 1.0) < 1e-9
    assert abs(report.mahalanobis[0] - 1.0) < 1e-5

    n = 10000
    a = rng.standard_normal((dk, dk))
    cov = a @ a.T + 0.5 * np.eye(dk)
    mu_id, mu_ood = rng.standard_normal(dk), rng.standard_normal(dk)
    chol = np.linalg.cholesky(cov)
    id_v = mu_id + rng.standard_normal((n, dk)) @ chol.T
    ood_v = mu_ood + rng.standard_normal((n, dk)) @ chol.T
    report = centroid_distances(id_v[:, None, :], ood_v[:, None, :])
    eu, ma = testing.closed_form_distances(mu_id, mu_ood, cov)
    assert abs(report.euclidean[0] - eu) / eu < 0.05
    assert abs(report.mahalanobis[0] - ma) / ma < 0.05


def check_serialization(cases: int = 100, seed: int = 8):
    rng = np.random.default_rng(seed)
    blob = None
    for i in range(cases):
        if i % 2:
            obj = testing.random_hydra(rng, 1 + i % 3)
        else:
            obj = testing.random_model(rng)
            if i % 4 == 2:
                obj = apply_mask(obj, testing.random_mask(
                    rng, obj.config.n_layers, obj.config.n_heads))
        blob = dumps(obj)
        assert dumps(loads(blob)) == blob, 'case {}: not bitwise'.format(i)

    for data, error in ((b'X' + blob[1:], BadMagicError),
                        (blob[:-1], TruncatedPayloadError),
                        (testing.rewrite_manifest(
                            blob, _overlap_second), OffsetOverlapError)):
        try:
            loads(data)
        except error:
            continue
        raise AssertionError('corruption did not raise {}'
                             .format(error.__name__))


def _overlap_second(manifest):
    manifest['tensors'][1]['offset'] = 0


E2E_BUNDLES = 20
E2E_STEPS = 400


def e2e_bundle(seed: int, steps: int = E2E_STEPS,
               members: int = 3, budget: int = 2) -> Tuple[float, float]:
    '''Single-model and fused-model OOD AUROC of one seed bundle'''
    spec = TaskSpec(seed=seed)
    train = generate(spec, 2048, 'train')
    test = generate(spec, 512, 'test')
    ood = generate(spec, 512, 'ood')
    cfg = TransformerConfig(vocab_size=spec.vocab_size,
                            n_classes=spec.n_classes, seq_len=spec.seq_len)
    model = train_steps(init_model(cfg, seed), train.batches(64, seed),
                        lr=0.05, steps=steps, momentum=0.9)
    pruned = make_members(model, members, 'circuit',
                          [seed * members + m for m in range(members)],
                          PruneBudget(total=budget),
                          train.subset(np.arange(256)),
                          generate(spec, 256, 'ood'))
    hm = fuse(model, pruned)
    return (evaluate_model(model, test, ood).auroc,
            evaluate_model(hm, test, ood).auroc)


def check_e2e(bundles: int = E2E_BUNDLES, steps: int = E2E_STEPS):
    wins = 0
    for seed in range(bundles):
        single, hydra = e2e_bundle(seed, steps)
        logger.info('bundle %d: single %.4f hydra %.4f', seed, single, hydra)
        wins += hydra >= single
    assert wins >= math.ceil(0.8 * bundles), \
        'hydra AUROC >= single in {} of {} bundles'.format(wins, bundles)


SUITES: Dict[str, Callable[[], None]] = {
    'fusion': check_fusion,
    'ablation': check_ablation,
    'greedy': check_greedy,
    'gradients': check_gradients,
    'taylor': check_taylor,
    'cost': check_cost,
    'metrics': check_metrics,
    'proposition': check_proposition,
    'geometry': check_geometry,
    'serialization': check_serialization,
}
EXTRA_SUITES: Dict[str, Callable[[], None]] = {'e2e': check_e2e}


def run(names: Optional[Sequence[str]] = None,
        out=print) -> List[Tuple[str, bool, float]]:
    '''Runs the named suites (all but ``e2e`` by default) in 64-bit
    precision'''
    every = dict(SUITES, **EXTRA_SUITES)
    names = list(SUITES) if not names else list(names)
    for name in names:
        if name not in every:
            raise KeyError('unknown suite {}: choose from {}'
                           .format(name, sorted(every)))
    results = []
    for name in names:
        start = time.perf_counter()
        try:
            with precision('verify'):
                every[name]()
            ok = True
        except AssertionError as e:
            logger.warning('%s: %s', name, e)
            ok = False
        elapsed = time.perf_counter() - start
        out('{}\t{}\t{:.2f}'.format(name, 'PASS' if ok else 'FAIL', elapsed))
        results.append((name, ok, elapsed))
    return results
