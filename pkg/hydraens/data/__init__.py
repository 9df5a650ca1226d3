from .synth import CLS_TOKEN, SPLITS, Dataset, TaskSpec, generate  # NOQA
