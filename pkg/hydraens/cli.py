'''``hydraens`` command line

Every subcommand reads its inputs from the given paths and writes its
outputs into ``--out``. Failures print a single line
``error<TAB>module<TAB>ExceptionType<TAB>message`` to stderr and exit 1.

'''
import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from hydraens import verify
from hydraens.data import Dataset, TaskSpec, generate
from hydraens.errors import ConfigError, ContractError
from hydraens.fusion import HydraModel, cost_report, fuse
from hydraens.io import (exists_url, from_url, load, open_url, save,
                         write_url)
from hydraens.numerics import set_precision
from hydraens.pruning import (PruneBudget, ScoreReport, extract_circuit,
                              make_members, pool_depth, ranking_from_text,
                              ranking_to_text, taylor_scores)
from hydraens.transformer import (HeadMask, Model, TransformerConfig,
                                  init_model, train_steps)
from hydraens.uq import evaluate_model

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())

COMMANDS = ('gen-data', 'train', 'score-heads', 'extract-circuit', 'prune',
            'fuse', 'eval', 'bench', 'verify')
PRESETS = {
    'vit-b16': TransformerConfig(n_layers=12, d_model=768, n_heads=12,
                                 d_ff=3072, seq_len=197, vocab_size=768,
                                 n_classes=1000),
}


@dataclass(frozen=True)
class RunConfig:
    '''Validated flags of one invocation

    Input paths have to exist when the config is built; more than one
    member needs one seed per member.

    '''
    subcommand: str
    out: str = '.'
    data: Optional[str] = None
    model: Optional[str] = None
    members_dir: Optional[str] = None
    masks: Optional[str] = None
    ranking: Optional[str] = None
    task_seed: int = 0
    model_seed: int = 0
    members: int = 1
    seeds: Optional[Tuple[int, ...]] = None
    budget_per_layer: Optional[int] = None
    budget_global: Optional[int] = None
    strategy: str = 'circuit'
    score: str = 'avg'
    bins: int = 15
    precision: str = 'verify'
    split: str = 'test'
    steps: int = 400
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    finetune_steps: int = 0
    calib_size: int = 512
    subsample: Optional[int] = None
    n_train: int = 8192
    n_test: int = 2048
    n_ood: int = 2048
    n_val: int = 512
    substitution: float = 0.2
    label_flip: float = 0.0
    jitter: float = 0.0
    preset: Optional[str] = None
    heads_kept: Optional[int] = None
    suites: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.subcommand not in COMMANDS:
            raise ConfigError('unknown subcommand {}'.format(self.subcommand))
        for name in ('data', 'model', 'members_dir', 'masks', 'ranking'):
            path = getattr(self, name)
            if path is not None and not exists_url(path):
                raise ConfigError('--{} {} does not exist'
                                  .format(name.replace('_', '-'), path))
        if self.members < 1:
            raise ConfigError('--members has to be >= 1: {}'
                              .format(self.members))
        if self.seeds is None:
            if self.members > 1:
                raise ConfigError('--seeds needs {} seeds for {} members'
                                  .format(self.members, self.members))
            object.__setattr__(self, 'seeds', (0,))
        elif self.members > 1 and len(self.seeds) != self.members:
            raise ConfigError('--seeds has {} seeds for {} members'
                              .format(len(self.seeds), self.members))
        if self.budget_per_layer is not None and \
                self.budget_global is not None:
            raise ConfigError('set only one of --budget-per-layer and '
                              '--budget-global')

    def budget(self, cfg: TransformerConfig) -> PruneBudget:
        if self.budget_per_layer is not None:
            return PruneBudget.uniform(cfg.n_layers, self.budget_per_layer)
        if self.budget_global is not None:
            return PruneBudget(total=self.budget_global)
        raise ConfigError('set --budget-per-layer or --budget-global')

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError('{} needs --{}'.format(
                    self.subcommand, name.replace('_', '-')))


def _seeds(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(',') if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError('seeds are comma-separated '
                                         'integers: {!r}'.format(text))


def _suites(text: str) -> Tuple[str, ...]:
    return tuple(s for s in text.split(',') if s)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='hydraens',
        description='Pruned-and-fused transformer ensembles at toy scale')
    parser.add_argument('subcommand', choices=COMMANDS)
    parser.add_argument('--out', default='.', help='output directory')
    parser.add_argument('--data', help='directory written by gen-data')
    parser.add_argument('--model', help='model or fused model container')
    parser.add_argument('--members-dir', help='directory written by prune')
    parser.add_argument('--masks', help='file with one head mask per line')
    parser.add_argument('--ranking', help='ranking from extract-circuit')
    parser.add_argument('--task-seed', type=int, default=0)
    parser.add_argument('--model-seed', type=int, default=0)
    parser.add_argument('--members', type=int, default=1)
    parser.add_argument('--seeds', type=_seeds)
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--budget-per-layer', type=int)
    group.add_argument('--budget-global', type=int)
    parser.add_argument('--strategy', choices=('taylor', 'circuit'),
                        default='circuit')
    parser.add_argument('--score', choices=('acc', 'ood', 'avg'),
                        default='avg')
    parser.add_argument('--bins', type=int, default=15)
    parser.add_argument('--precision', choices=('verify', 'bench'),
                        default='verify')
    parser.add_argument('--split', choices=('test', 'noisy'),
                        default='test', help='ID split for eval')
    parser.add_argument('--steps', type=int, default=400)
    parser.add_argument('--lr', type=float, default=0.05)
    parser.add_argument('--momentum', type=float, default=0.9)
    parser.add_argument('--batch-size', type=int, default=64)
    parser.add_argument('--finetune-steps', type=int, default=0)
    parser.add_argument('--calib-size', type=int, default=512)
    parser.add_argument('--subsample', type=int)
    parser.add_argument('--n-train', type=int, default=8192)
    parser.add_argument('--n-test', type=int, default=2048)
    parser.add_argument('--n-ood', type=int, default=2048)
    parser.add_argument('--n-val', type=int, default=512)
    parser.add_argument('--substitution', type=float, default=0.2)
    parser.add_argument('--label-flip', type=float, default=0.0)
    parser.add_argument('--jitter', type=float, default=0.0)
    parser.add_argument('--preset', choices=sorted(PRESETS))
    parser.add_argument('--heads-kept', type=int)
    parser.add_argument('--suite', type=_suites, default=(), dest='suites',
                        help='comma-separated suites to verify')
    parser.add_argument('--verbose', action='store_true')
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in vars(args).items() if k in names})


def _read_dataset(directory: str, name: str) -> Dataset:
    with from_url(directory) as fs:
        if not fs.exists(name):
            raise ConfigError('{} has no {}'.format(directory, name))
        return Dataset.from_text(fs.read_text(name))


def _read_task(directory: str) -> TaskSpec:
    with from_url(directory) as fs:
        return TaskSpec.from_dict(json.loads(fs.read_text('task.json')))


def _load_model(path: str) -> Model:
    model = load(path)
    if not isinstance(model, Model):
        raise ContractError('{} holds a fused model, expected a single '
                            'model'.format(path))
    return model


def _write(cfg: RunConfig, name: str, data) -> None:
    write_url(os.path.join(cfg.out, name), data)


def cmd_gen_data(cfg: RunConfig) -> int:
    sizes = {'train': cfg.n_train, 'test': cfg.n_test, 'ood': cfg.n_ood}
    if cfg.n_val in (cfg.n_train, cfg.n_test, cfg.n_ood):
        raise ConfigError('--n-val {} has to differ from the other split '
                          'sizes to draw a separate stream'.format(cfg.n_val))
    spec = TaskSpec(seed=cfg.task_seed, substitution=cfg.substitution,
                    label_flip=cfg.label_flip, jitter=cfg.jitter)
    _write(cfg, 'task.json', json.dumps(dataclasses.asdict(spec),
                                        sort_keys=True, indent=2))
    for split, n in sizes.items():
        _write(cfg, split + '.txt', generate(spec, n, split).to_text())
    _write(cfg, 'noisy.txt', generate(spec, cfg.n_test, 'noisy').to_text())
    _write(cfg, 'val.txt', generate(spec, cfg.n_val, 'train').to_text())
    _write(cfg, 'val_ood.txt', generate(spec, cfg.n_val, 'ood').to_text())
    logger.info('bayes rate %.4f', spec.bayes_rate())
    return 0


def cmd_train(cfg: RunConfig) -> int:
    cfg.require('data')
    spec = _read_task(cfg.data)
    train = _read_dataset(cfg.data, 'train.txt')
    arch = TransformerConfig(vocab_size=spec.vocab_size,
                             n_classes=spec.n_classes, seq_len=spec.seq_len)
    losses: List[float] = []
    model = train_steps(init_model(arch, cfg.model_seed),
                        train.batches(cfg.batch_size, cfg.model_seed),
                        cfg.lr, cfg.steps, cfg.momentum, losses=losses)
    save(model, os.path.join(cfg.out, 'model.hyd'))
    _write(cfg, 'losses.txt', ''.join('{!r}\n'.format(x) for x in losses))
    return 0


def cmd_score_heads(cfg: RunConfig) -> int:
    cfg.require('model', 'data')
    model = _load_model(cfg.model)
    val = _read_dataset(cfg.data, 'val.txt')
    n = min(cfg.calib_size, len(val))
    calib = val.subset(range(n)).batches(cfg.batch_size)
    report = ScoreReport('taylor', cfg.seeds[0],
                         tuple(taylor_scores(model, calib)))
    _write(cfg, 'scores.txt', report.to_text())
    return 0


def cmd_extract_circuit(cfg: RunConfig) -> int:
    cfg.require('model', 'data')
    model = _load_model(cfg.model)
    budget = cfg.budget(model.config).validate(model.config)
    # ranked past the budget so prune can draw distinct members
    ranking = extract_circuit(
        model, pool_depth(budget.count, model), cfg.score,
        _read_dataset(cfg.data, 'val.txt'),
        _read_dataset(cfg.data, 'val_ood.txt'), seed=cfg.seeds[0],
        subsample=cfg.subsample)
    _write(cfg, 'ranking.txt', ranking_to_text(ranking))
    return 0


def cmd_prune(cfg: RunConfig) -> int:
    cfg.require('model', 'data')
    model = _load_model(cfg.model)
    ranking = None
    if cfg.ranking is not None:
        with open_url(cfg.ranking) as f:
            ranking = ranking_from_text(f.read())
    seeds = list(cfg.seeds[:cfg.members])
    members = make_members(
        model, cfg.members, cfg.strategy, seeds, cfg.budget(model.config),
        _read_dataset(cfg.data, 'val.txt'),
        _read_dataset(cfg.data, 'val_ood.txt'), kind=cfg.score,
        calib_size=cfg.calib_size, batch_size=cfg.batch_size,
        ranking=ranking, finetune_steps=cfg.finetune_steps, lr=cfg.lr,
        subsample=cfg.subsample)
    for m, (_, member) in enumerate(members):
        save(member, os.path.join(cfg.out, 'member{}.hyd'.format(m)))
    _write(cfg, 'masks.txt',
           ''.join(mask.to_text() + '\n' for mask, _ in members))
    return 0


def _read_masks(path: str) -> List[HeadMask]:
    with open_url(path) as f:
        return [HeadMask.from_text(line) for line in f if line.strip()]


def cmd_fuse(cfg: RunConfig) -> int:
    cfg.require('model', 'members_dir')
    base = _load_model(cfg.model)
    masks = _read_masks(os.path.join(cfg.members_dir, 'masks.txt'))
    members = [(mask, _load_model(os.path.join(
        cfg.members_dir, 'member{}.hyd'.format(m))))
        for m, mask in enumerate(masks)]
    save(fuse(base, members), os.path.join(cfg.out, 'hydra.hyd'))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require('model', 'data')
    model = load(cfg.model)
    report = evaluate_model(model, _read_dataset(cfg.data,
                                                 cfg.split + '.txt'),
                            _read_dataset(cfg.data, 'ood.txt'), cfg.bins)
    _write(cfg, 'eval.txt', report.to_text())
    _write(cfg, 'eval.json', report.to_json())
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    if cfg.preset is not None:
        arch = PRESETS[cfg.preset]
        masks = None
    else:
        cfg.require('model')
        model = load(cfg.model)
        arch = model.config
        masks = list(model.masks) if isinstance(model, HydraModel) \
            else [model.mask()]
    if cfg.masks is not None:
        masks = _read_masks(cfg.masks)
    elif cfg.heads_kept is not None:
        removed = [(l, h) for l in range(arch.n_layers)
                   for h in range(cfg.heads_kept, arch.n_heads)]
        masks = [HeadMask.from_removed(arch.n_layers, arch.n_heads,
                                       removed)] * cfg.members
    elif masks is None:
        masks = [HeadMask.full(arch.n_layers, arch.n_heads)] * cfg.members
    _write(cfg, 'cost.txt', cost_report(arch, masks).to_text())
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    results = verify.run(cfg.suites or None)
    return 0 if all(ok for _, ok, _ in results) else 1


HANDLERS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'score-heads': cmd_score_heads,
    'extract-circuit': cmd_extract_circuit,
    'prune': cmd_prune,
    'fuse': cmd_fuse,
    'eval': cmd_eval,
    'bench': cmd_bench,
    'verify': cmd_verify,
}


def _origin(e: BaseException) -> str:
    tb = e.__traceback__
    if tb is None:
        return __name__
    while tb.tb_next is not None:
        tb = tb.tb_next
    return tb.tb_frame.f_globals.get('__name__', '?')


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger('hydraens').setLevel(logging.INFO)
    try:
        cfg = _config(args)
        set_precision(cfg.precision)
        return HANDLERS[cfg.subcommand](cfg)
    except (ValueError, ArithmeticError, IndexError, KeyError, OSError) as e:
        message = str(e).replace('\n', ' ').replace('\t', ' ')
        print('error\t{}\t{}\t{}'.format(_origin(e), type(e).__name__,
                                         message), file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
