import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from hydraens.errors import ContractError
from hydraens.fusion import HydraModel, hydra_predict
from hydraens.transformer import predict_proba
from hydraens.uq import metrics


@dataclass(frozen=True)
class EvalReport:
    '''Every accuracy, calibration and OOD metric for one model

    Calibration errors are fractions in ``[0, 1]``, never percentages.
    OOD metrics use the maximum softmax probability as the score, with
    in-distribution samples as positives.

    '''
    accuracy: float
    brier: float
    nll: float
    ece: float
    aece: float
    auroc: float
    fpr95: float
    aupr: float
    n_id: int
    n_ood: int
    bins: int = metrics.DEFAULT_BINS

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append('{} = {}'.format(
                f.name, repr(float(value)) if f.type is float else value))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'EvalReport':
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition(' = ')
            if not sep:
                raise ContractError('bad report line: {!r}'.format(line))
            values[key] = value
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'EvalReport':
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                if f.default is dataclasses.MISSING:
                    raise ContractError('report misses {}'.format(f.name))
                continue
            kwargs[f.name] = float(d[f.name]) if f.type is float \
                else int(d[f.name])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> 'EvalReport':
        return cls.from_dict(json.loads(text))


def evaluate(id_probs, id_labels, ood_probs,
             bins: int = metrics.DEFAULT_BINS) -> EvalReport:
    '''Computes an :class:`EvalReport` from probability arrays'''
    id_set = metrics.PredictionSet(np.asarray(id_probs), id_labels)
    ood_set = metrics.PredictionSet(np.asarray(ood_probs))
    p, y = id_set.probs, id_set.labels
    id_msp = metrics.msp(p)
    ood_msp = metrics.msp(ood_set.probs)
    return EvalReport(
        accuracy=metrics.accuracy(p, y),
        brier=metrics.brier(p, y),
        nll=metrics.nll(p, y),
        ece=metrics.ece(p, y, bins),
        aece=metrics.aece(p, y, bins),
        auroc=metrics.auroc(id_msp, ood_msp),
        fpr95=metrics.fpr95(id_msp, ood_msp),
        aupr=metrics.aupr(id_msp, ood_msp),
        n_id=len(id_set), n_ood=len(ood_set), bins=bins)


def predict_dataset(model, data) -> np.ndarray:
    '''``N x C`` probabilities of a :class:`~hydraens.transformer.Model`
    or :class:`~hydraens.fusion.HydraModel` on a dataset, embedding
    jitter included'''
    noise = data.embedding_noise(model.config.d_model)
    if isinstance(model, HydraModel):
        return hydra_predict(data.tokens, model, input_noise=noise)
    return predict_proba(model, data.tokens, input_noise=noise)


def evaluate_model(model, id_data, ood_data,
                   bins: int = metrics.DEFAULT_BINS) -> EvalReport:
    ''':func:`evaluate` on the predictions of a model or fused model'''
    return evaluate(predict_dataset(model, id_data), id_data.labels,
                    predict_dataset(model, ood_data), bins)
