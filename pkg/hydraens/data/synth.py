'''Synthetic sequence-classification tasks

Every sequence starts with the classification token (id 0). An
in-distribution sequence of class ``y`` then holds one class-signature
token (ids ``1..C``) at a uniform position, and background tokens drawn
iid from a class-peaked unigram mixture over the background pool. With
a small probability the signature names another class, so the Bayes
rate stays below 1.

Out-of-distribution sequences carry no signature and draw their tokens
from a mixture of a reserved OOD-only pool and the background pool.

'''
import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from hydraens.errors import ConfigError, ContractError

CLS_TOKEN = 0
SPLITS = ('train', 'test', 'noisy', 'ood', 'bayes')
_SPLIT_IDS = {name: i for i, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class TaskSpec:
    '''Generator parameters

    Arguments:
        seed (int): Root seed of every split.
        vocab_size (int): ``V``, classification token included.
        n_classes (int): ``C``.
        seq_len (int): ``T``, classification token included.
        class_mix (float): Weight of the class chunk in the background
            mixture; the rest is uniform over the background pool.
        signature_flip (float): Probability that the signature token
            names a different class.
        ood_vocab (int): Size of the OOD-only pool (the highest ids).
        ood_mix (float): Weight of the OOD-only pool in OOD sequences.
        substitution (float): Noisy split: per-token probability of
            replacement by a uniform background token.
        label_flip (float): Noisy split: probability of relabeling a
            sample to a uniform other class.
        jitter (float): Noisy split: standard deviation of Gaussian
            noise added to token embeddings.
        tv_margin (float): Minimum total-variation distance between the
            ID and OOD token marginals.

    '''
    seed: int = 0
    vocab_size: int = 64
    n_classes: int = 4
    seq_len: int = 16
    class_mix: float = 0.5
    signature_flip: float = 0.1
    ood_vocab: int = 16
    ood_mix: float = 0.7
    substitution: float = 0.2
    label_flip: float = 0.0
    jitter: float = 0.0
    tv_margin: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError('n_classes has to be >= 2: {}'
                              .format(self.n_classes))
        if self.seq_len < 2:
            raise ConfigError('seq_len has to be >= 2: {}'
                              .format(self.seq_len))
        if self.ood_vocab < 1:
            raise ConfigError('ood_vocab has to be >= 1: {}'
                              .format(self.ood_vocab))
        n_background = self.vocab_size - 1 - self.n_classes - self.ood_vocab
        if n_background < self.n_classes:
            raise ConfigError(
                'vocab_size {} leaves {} background tokens for {} classes'
                .format(self.vocab_size, n_background, self.n_classes))
        for name in ('class_mix', 'signature_flip', 'ood_mix',
                     'substitution', 'label_flip'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError('{} has to be in [0, 1]: {}'
                                  .format(name, value))
        if self.class_mix >= 1.0:
            raise ConfigError('class_mix has to be < 1 to keep every '
                              'background token possible')
        if self.jitter < 0:
            raise ConfigError('jitter has to be >= 0: {}'
                              .format(self.jitter))
        tv = self.total_variation()
        if tv < self.tv_margin:
            raise ConfigError('ID/OOD total variation {:.4f} is below the '
                              'margin {}'.format(tv, self.tv_margin))

    @property
    def signature_ids(self) -> np.ndarray:
        return np.arange(1, self.n_classes + 1)

    @property
    def background_ids(self) -> np.ndarray:
        return np.arange(self.n_classes + 1,
                         self.vocab_size - self.ood_vocab)

    @property
    def ood_ids(self) -> np.ndarray:
        return np.arange(self.vocab_size - self.ood_vocab, self.vocab_size)

    def class_chunks(self) -> List[np.ndarray]:
        return np.array_split(self.background_ids, self.n_classes)

    def background_distribution(self) -> np.ndarray:
        "``C x V`` unigram distribution of background tokens per class."
        bg = self.background_ids
        dist = np.zeros((self.n_classes, self.vocab_size))
        for c, chunk in enumerate(self.class_chunks()):
            dist[c, bg] = (1.0 - self.class_mix) / bg.size
            dist[c, chunk] += self.class_mix / chunk.size
        return dist

    def signature_distribution(self) -> np.ndarray:
        "``C x V`` distribution of the signature token per class."
        c = self.n_classes
        dist = np.zeros((c, self.vocab_size))
        dist[:, self.signature_ids] = self.signature_flip / (c - 1)
        dist[np.arange(c), self.signature_ids] = 1.0 - self.signature_flip
        return dist

    def ood_distribution(self) -> np.ndarray:
        dist = np.zeros(self.vocab_size)
        dist[self.ood_ids] = self.ood_mix / self.ood_vocab
        bg = self.background_ids
        dist[bg] += (1.0 - self.ood_mix) / bg.size
        return dist

    def id_marginal(self) -> np.ndarray:
        '''Token distribution of a uniform content position, classes
        uniform'''
        content = self.seq_len - 1
        sig = self.signature_distribution().mean(axis=0)
        bg = self.background_distribution().mean(axis=0)
        return (sig + (content - 1) * bg) / content

    def total_variation(self) -> float:
        return float(0.5 * np.abs(self.id_marginal()
                                  - self.ood_distribution()).sum())

    def log_posterior(self, tokens) -> np.ndarray:
        '''Closed-form ``log P(y | tokens)`` under uniform class priors

        Sequences without exactly one signature token, or with tokens
        no class can emit, get the uniform posterior.

        '''
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        content = tokens[:, 1:]
        with np.errstate(divide='ignore'):
            log_bg = np.log(self.background_distribution())
            log_sig = np.log(self.signature_distribution())
        is_sig = (content >= 1) & (content <= self.n_classes)
        n = tokens.shape[0]
        out = np.full((n, self.n_classes), -np.log(self.n_classes))
        valid = is_sig.sum(axis=1) == 1
        if not valid.any():
            return out
        rows = np.flatnonzero(valid)
        sig_tok = content[rows][is_sig[rows]]
        loglik = log_sig[:, sig_tok].T
        bg_tokens = np.where(is_sig[rows], -1, content[rows])
        for c in range(self.n_classes):
            per_tok = np.where(bg_tokens >= 0,
                               log_bg[c][np.maximum(bg_tokens, 0)], 0.0)
            loglik[:, c] = loglik[:, c] + per_tok.sum(axis=1)
        finite = np.isfinite(loglik).any(axis=1)
        norm = loglik[finite] - logsumexp(loglik[finite], axis=1,
                                          keepdims=True)
        out[rows[finite]] = norm
        return out

    def bayes_rate(self, n: int = 20000) -> float:
        '''Expected accuracy of the Bayes classifier

        Estimated as the mean maximum posterior over ``n`` fresh
        in-distribution samples from a stream no split shares.

        '''
        data = generate(self, n, 'bayes')
        return float(np.exp(self.log_posterior(data.tokens)).max(axis=1)
                     .mean())

    def replace(self, **changes) -> 'TaskSpec':
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d) -> 'TaskSpec':
        if not isinstance(d, dict):
            raise ConfigError('task has to be an object: {!r}'.format(d))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError('unknown task fields: {}'
                              .format(sorted(unknown)))
        return cls(**d)


@dataclass(frozen=True)
class Dataset:
    '''Token sequences with labels (``None`` for OOD)

    ``jitter`` and ``jitter_seed`` describe Gaussian noise added to the
    token embeddings at inference; see :meth:`embedding_noise`.

    '''
    tokens: np.ndarray
    labels: Optional[np.ndarray]
    split: str
    seed: int
    vocab_size: int
    n_classes: int
    jitter: float = 0.0
    jitter_seed: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ContractError('tokens have to be N x T: {}'
                                .format(self.tokens.shape))
        if self.labels is not None and \
                self.labels.shape != (self.tokens.shape[0],):
            raise ContractError('{} labels for {} sequences'
                                .format(self.labels.shape,
                                        self.tokens.shape[0]))

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def embedding_noise(self, d_model: int) -> Optional[np.ndarray]:
        '''``N x T x d_model`` jitter to add to embeddings, or ``None``'''
        if self.jitter == 0:
            return None
        rng = np.random.default_rng([self.jitter_seed, d_model])
        return rng.standard_normal(
            (len(self), self.seq_len, d_model)) * self.jitter

    def subset(self, index) -> 'Dataset':
        index = np.asarray(index, dtype=np.int64)
        labels = None if self.labels is None else self.labels[index]
        if self.jitter:
            raise ContractError('subsets of jittered datasets would change '
                                'their noise; subset before jittering')
        return dataclasses.replace(self, tokens=self.tokens[index],
                                   labels=labels)

    def batches(self, size: int = 64,
                seed: Optional[int] = None
                ) -> List[Tuple[np.ndarray, np.ndarray]]:
        '''Splits the labelled data into ``(tokens, labels)`` batches

        ``seed`` shuffles the order first; ``None`` keeps it.

        '''
        if self.labels is None:
            raise ContractError('{} split has no labels'.format(self.split))
        if size < 1:
            raise ConfigError('batch size has to be >= 1: {}'.format(size))
        order = np.arange(len(self))
        if seed is not None:
            order = np.random.default_rng(seed).permutation(len(self))
        return [(self.tokens[order[i:i + size]],
                 self.labels[order[i:i + size]])
                for i in range(0, len(self), size)]

    def to_text(self) -> str:
        n, t = self.tokens.shape
        lines = ['{} {} {} {} {} {}'.format(self.vocab_size, self.n_classes,
                                            t, n, self.split, self.seed)]
        if self.jitter:
            lines.append('# jitter={!r} jitter_seed={}'
                         .format(float(self.jitter), self.jitter_seed))
        for i in range(n):
            label = '-' if self.labels is None else str(int(self.labels[i]))
            lines.append('{}\t{}'.format(
                ' '.join(str(int(x)) for x in self.tokens[i]), label))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'Dataset':
        lines = text.splitlines()
        try:
            v, c, t, n, split, seed = lines[0].split()
            v, c, t, n, seed = int(v), int(c), int(t), int(n), int(seed)
        except (IndexError, ValueError):
            raise ContractError('bad dataset header: {!r}'
                                .format(lines[0] if lines else ''))
        body = lines[1:]
        jitter, jitter_seed = 0.0, 0
        if body and body[0].startswith('#'):
            fields = dict(f.split('=') for f in body[0][1:].split())
            jitter = float(fields['jitter'])
            jitter_seed = int(fields['jitter_seed'])
            body = body[1:]
        if len(body) != n:
            raise ContractError('dataset header says {} samples, found {}'
                                .format(n, len(body)))
        tokens = np.zeros((n, t), dtype=np.int64)
        labels = []
        for i, line in enumerate(body):
            seq, _, label = line.partition('\t')
            row = [int(x) for x in seq.split()]
            if len(row) != t:
                raise ContractError('sample {} has {} tokens, expected {}'
                                    .format(i, len(row), t))
            tokens[i] = row
            labels.append(label.strip())
        if all(x == '-' for x in labels):
            label_arr = None
        else:
            label_arr = np.array([int(x) for x in labels], dtype=np.int64)
        return cls(tokens=tokens, labels=label_arr, split=split, seed=seed,
                   vocab_size=v, n_classes=c, jitter=jitter,
                   jitter_seed=jitter_seed)


def _rng(spec: TaskSpec, split: str, n: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, _SPLIT_IDS[split], n])


def _sample_rows(rng, dists, cls, width):
    '''Draws ``width`` tokens per row from ``dists[cls[row]]``'''
    cdf = np.cumsum(dists, axis=1)
    u = rng.random((cls.size, width))
    out = np.empty((cls.size, width), dtype=np.int64)
    for c in range(dists.shape[0]):
        rows = cls == c
        out[rows] = np.searchsorted(cdf[c], u[rows], side='right')
    return np.minimum(out, dists.shape[1] - 1)


def _in_distribution(spec: TaskSpec, rng, n: int):
    c, t = spec.n_classes, spec.seq_len
    labels = rng.integers(c, size=n)
    background = _sample_rows(rng, spec.background_distribution(), labels,
                              t - 2)
    flip = rng.random(n) < spec.signature_flip
    other = (labels + rng.integers(1, c, size=n)) % c
    signature = 1 + np.where(flip, other, labels)
    position = rng.integers(t - 1, size=n)

    content = np.empty((n, t - 1), dtype=np.int64)
    slot = np.ones((n, t - 1), dtype=bool)
    slot[np.arange(n), position] = False
    content[~slot] = signature
    content[slot] = background.reshape(-1)
    tokens = np.concatenate([np.full((n, 1), CLS_TOKEN), content], axis=1)
    return tokens, labels.astype(np.int64)


def _ood(spec: TaskSpec, rng, n: int):
    dist = spec.ood_distribution()[None]
    content = _sample_rows(rng, dist, np.zeros(n, dtype=np.int64),
                           spec.seq_len - 1)
    return np.concatenate([np.full((n, 1), CLS_TOKEN), content], axis=1)


def generate(spec: TaskSpec, n: int, split: str) -> Dataset:
    '''Draws ``n`` samples of ``split``

    The output depends only on ``(spec, split, n)``. The noisy split
    corrupts exactly the samples ``generate(spec, n, "test")`` returns.

    '''
    if n < 1:
        raise ConfigError('n has to be >= 1: {}'.format(n))
    if split not in _SPLIT_IDS:
        raise ConfigError('split has to be one of {}: {}'
                          .format(SPLITS, split))
    common = dict(split=split, seed=spec.seed, vocab_size=spec.vocab_size,
                  n_classes=spec.n_classes)
    if split == 'ood':
        return Dataset(tokens=_ood(spec, _rng(spec, split, n), n),
                       labels=None, **common)
    if split != 'noisy':
        tokens, labels = _in_distribution(spec, _rng(spec, split, n), n)
        return Dataset(tokens=tokens, labels=labels, **common)

    tokens, labels = _in_distribution(spec, _rng(spec, 'test', n), n)
    rng = _rng(spec, 'noisy', n)
    content = tokens[:, 1:]
    hit = rng.random(content.shape) < spec.substitution
    bg = spec.background_ids
    replacement = bg[rng.integers(bg.size, size=content.shape)]
    tokens[:, 1:] = np.where(hit, replacement, content)
    relabel = rng.random(n) < spec.label_flip
    other = (labels + rng.integers(1, spec.n_classes, size=n)) \
        % spec.n_classes
    labels = np.where(relabel, other, labels)
    jitter_seed = int(rng.integers(2 ** 31))
    return Dataset(tokens=tokens, labels=labels, jitter=spec.jitter,
                   jitter_seed=jitter_seed, **common)
