'''Brute-force oracles and fixtures shared by the tests and ``verify``

Everything here is written for clarity, not speed: loops over heads,
pairs and thresholds that the library computes in closed or vectorized
form.

'''
import json
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from hydraens.fusion import HydraModel, fuse, member_model
from hydraens.io.container import MAGIC
from hydraens.numerics import Tensor, numerical_gradient, ops
from hydraens.pruning import eval_score
from hydraens.pruning.ablation import ablate_perm
from hydraens.transformer import (HeadMask, LayerWeights, Model,
                                  TransformerConfig, forward_model,
                                  init_model, predict_proba)


def pairwise_auroc(id_scores, ood_scores) -> float:
    "Fraction of (ID, OOD) pairs ordered correctly, ties counting half."
    wins = 0.0
    for a in np.asarray(id_scores, dtype=np.float64):
        for b in np.asarray(ood_scores, dtype=np.float64):
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def scan_fpr95(id_scores, ood_scores) -> float:
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    for t in sorted(set(id_scores.tolist()), reverse=True):
        if np.mean(id_scores >= t) >= 0.95:
            return float(np.mean(ood_scores >= t))
    raise AssertionError('unreachable: the lowest ID score has TPR 1')


def hand_binned_ece(confidences, correct, edges) -> float:
    total = 0.0
    n = len(confidences)
    for lo, hi in zip(edges[:-1], edges[1:]):
        idx = [i for i, c in enumerate(confidences)
               if (lo < c <= hi) or (lo == 0 and c == 0)]
        if idx:
            acc = sum(correct[i] for i in idx) / len(idx)
            conf = sum(confidences[i] for i in idx) / len(idx)
            total += len(idx) / n * abs(acc - conf)
    return total


def _layernorm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def straight_line_layer(x: np.ndarray, w: LayerWeights, row=None,
                        eps: float = 1e-5) -> np.ndarray:
    '''One encoder layer on a single ``T x d`` sequence, head by head'''
    x = np.asarray(x, dtype=np.float64)
    keep = np.ones(w.n_heads, dtype=bool) if row is None \
        else np.asarray(row, dtype=bool)
    dk = w.d_head
    xh = _layernorm(x, w.ln1_gamma.data, w.ln1_beta.data, eps)
    att = np.tile(w.b_o.data, (x.shape[0], 1))
    for i in range(w.n_heads):
        if not keep[i]:
            continue
        cols = slice(i * dk, (i + 1) * dk)
        q = xh @ w.w_q.data[:, cols] + w.b_q.data[cols]
        k = xh @ w.w_k.data[:, cols] + w.b_k.data[cols]
        v = xh @ w.w_v.data[:, cols] + w.b_v.data[cols]
        a = _softmax(q @ k.T / math.sqrt(dk))
        att = att + (a @ v) @ w.w_o.data[cols, :]
    y = x + att
    h = _layernorm(y, w.ln2_gamma.data, w.ln2_beta.data, eps)
    u = h @ w.w1.data + w.b1.data
    u = 0.5 * u * (1.0 + erf(u / math.sqrt(2.0)))
    return y + u @ w.w2.data + w.b2.data


def straight_line_proba(model: Model, tokens,
                        mask: Optional[HeadMask] = None) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens))
    eps = model.config.ln_eps
    out = []
    for seq in tokens:
        x = model.token_embedding.data[seq] + model.pos_embedding.data
        for l, w in enumerate(model.layers):
            row = None if mask is None else mask.row(l)[list(w.heads)]
            x = straight_line_layer(x, w, row, eps)
        x = _layernorm(x, model.lnf_gamma.data, model.lnf_beta.data, eps)
        out.append(_softmax(x[0] @ model.w_cls.data + model.b_cls.data))
    return np.stack(out)


def member_oracle(hm: HydraModel, tokens) -> np.ndarray:
    "Mean softmax of the standalone member models."
    return np.mean([predict_proba(member_model(hm, m), tokens)
                    for m in range(hm.n_members)], axis=0)


def exhaustive_step(model: Model, mask: HeadMask, kind: str, id_data,
                    ood_data=None,
                    order: Optional[Sequence[Tuple[int, int]]] = None
                    ) -> Tuple[Tuple[int, int], float, List[float]]:
    '''Scores every removable head one after another and returns the
    first best one in ``order`` (lexicographic by default)'''
    if order is None:
        order = [(l, h) for l in range(mask.n_layers)
                 for h in range(mask.n_heads)]
    candidates = [c for c in order if mask.can_remove(*c)]
    values = [eval_score(ablate_perm(model, *c), kind, id_data, ood_data)
              for c in candidates]
    best = int(np.argmax(values))
    return candidates[best], values[best], values


def fd_gradients(model: Model, tokens, labels,
                 names: Optional[Sequence[str]] = None,
                 eps: float = 1e-5) -> Dict[str, np.ndarray]:
    '''Central-difference gradients of the mean cross-entropy'''
    params = model.parameters()
    out = {}
    for name in names or list(params):
        arr = params[name].numpy()

        def loss():
            m = model.with_parameters({name: Tensor.wrap(arr.copy())})
            return ops.cross_entropy(forward_model(tokens, m),
                                     labels).item()
        out[name] = numerical_gradient(loss, arr, eps)
    return out


def relative_error(a, b, floor: float = 1e-5) -> float:
    "Max-abs difference over the larger max-abs value, at least ``floor``."
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0),
                floor)
    return float(np.abs(a - b).max() / scale)


def random_config(rng: np.random.Generator, **overrides) -> TransformerConfig:
    n_heads = int(rng.integers(2, 5))
    d_head = int(rng.integers(1, 4))
    fields = dict(n_layers=int(rng.integers(1, 4)), n_heads=n_heads,
                  d_model=n_heads * d_head, d_ff=int(rng.integers(2, 9)),
                  seq_len=int(rng.integers(2, 6)),
                  vocab_size=int(rng.integers(4, 10)),
                  n_classes=int(rng.integers(2, 5)))
    fields.update(overrides)
    return TransformerConfig(**fields)


def random_model(rng: np.random.Generator, cfg: TransformerConfig = None,
                 perturb: float = 0.1) -> Model:
    '''Random model whose biases and norms are not at their initial
    constants'''
    if cfg is None:
        cfg = random_config(rng)
    model = init_model(cfg, seed=int(rng.integers(1 << 31)))
    return model.with_parameters({
        name: Tensor(t.data + perturb * rng.standard_normal(t.shape))
        for name, t in model.parameters().items()})


def random_mask(rng: np.random.Generator, n_layers: int,
                n_heads: int) -> HeadMask:
    bits = rng.random((n_layers, n_heads)) < 0.5
    for row in bits:
        if not row.any():
            row[rng.integers(n_heads)] = True
    return HeadMask(bits)


def random_tokens(rng: np.random.Generator, cfg: TransformerConfig,
                  n: int) -> np.ndarray:
    tokens = rng.integers(1, cfg.vocab_size, size=(n, cfg.seq_len))
    tokens[:, 0] = 0
    return tokens


def closed_form_distances(mu_id, mu_ood, cov) -> Tuple[float, float]:
    "Euclidean and Mahalanobis distance of two means under ``cov``."
    diff = np.asarray(mu_id, dtype=np.float64) - np.asarray(mu_ood)
    return (float(np.linalg.norm(diff)),
            float(np.sqrt(diff @ np.linalg.solve(cov, diff))))


def rewrite_manifest(data: bytes, edit) -> bytes:
    '''Applies ``edit`` to the parsed manifest of a container and
    re-encodes it, payload untouched'''
    rest = data[len(MAGIC):]
    line, _, rest = rest.partition(b'\n')
    length = int(line)
    manifest = json.loads(rest[:length].decode('utf-8'))
    edit(manifest)
    raw = json.dumps(manifest, sort_keys=True,
                     separators=(',', ':')).encode('utf-8')
    return MAGIC + b'%d\n' % len(raw) + raw + rest[length:]


def random_hydra(rng: np.random.Generator, n_members: int,
                 cfg: TransformerConfig = None) -> HydraModel:
    '''Fuses ``n_members`` independent random models with random masks'''
    if cfg is None:
        cfg = random_config(rng)
    base = random_model(rng, cfg)
    members = [(random_mask(rng, cfg.n_layers, cfg.n_heads),
                random_model(rng, cfg)) for _ in range(n_members)]
    return fuse(base, members)
