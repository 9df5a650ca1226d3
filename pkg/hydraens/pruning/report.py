'''Line-oriented text form of head scores and circuit rankings

A header ``# kind=<kind> seed=<seed>`` is followed by one
``layer<TAB>head<TAB>score`` line per head. Taylor reports list every
head; circuit rankings list heads in removal order with the score after
each removal, plus a ``# base=<score>`` line.

'''
from dataclasses import dataclass
from typing import List, Optional, Tuple

from hydraens.errors import ContractError
from hydraens.pruning.circuit import CircuitRanking
from hydraens.pruning.taylor import HeadScore


@dataclass(frozen=True)
class ScoreReport:
    kind: str
    seed: Optional[int]
    scores: Tuple[HeadScore, ...]

    def to_text(self) -> str:
        lines = [_header(self.kind, self.seed)]
        for s in self.scores:
            lines.append('{}\t{}\t{!r}\t{!r}\t{!r}\t{!r}'.format(
                s.layer, s.head, s.score, s.q, s.k, s.v))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'ScoreReport':
        meta, rows = _parse(text)
        scores = []
        for fields in rows:
            if len(fields) != 6:
                raise ContractError('score line needs layer, head, score, '
                                    'q, k and v: {!r}'.format(fields))
            scores.append(HeadScore(int(fields[0]), int(fields[1]),
                                    float(fields[3]), float(fields[4]),
                                    float(fields[5])))
        return cls(meta['kind'], _seed(meta), tuple(scores))


def ranking_to_text(ranking: CircuitRanking) -> str:
    lines = [_header(ranking.kind, ranking.seed),
             '# base={!r}'.format(float(ranking.base_score))]
    for (layer, head), score in zip(ranking.removals, ranking.trace):
        lines.append('{}\t{}\t{!r}'.format(layer, head, float(score)))
    return '\n'.join(lines) + '\n'


def ranking_from_text(text: str) -> CircuitRanking:
    meta, rows = _parse(text)
    removals, trace = [], []
    for fields in rows:
        if len(fields) != 3:
            raise ContractError('ranking line needs layer, head and score: '
                                '{!r}'.format(fields))
        removals.append((int(fields[0]), int(fields[1])))
        trace.append(float(fields[2]))
    return CircuitRanking(meta['kind'], _seed(meta), tuple(removals),
                          tuple(trace), float(meta.get('base', 'nan')))


def _header(kind, seed) -> str:
    return '# kind={} seed={}'.format(kind, '-' if seed is None else seed)


def _seed(meta) -> Optional[int]:
    seed = meta.get('seed', '-')
    return None if seed == '-' else int(seed)


def _parse(text: str) -> Tuple[dict, List[List[str]]]:
    meta = {}
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith('#'):
            for item in line[1:].split():
                key, sep, value = item.partition('=')
                if not sep:
                    raise ContractError('bad header item: {!r}'.format(item))
                meta[key] = value
        else:
            rows.append(line.split('\t'))
    if 'kind' not in meta:
        raise ContractError('report header misses kind')
    return meta, rows
