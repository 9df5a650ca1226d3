import json
import os

import pytest

from hydraens.cli import RunConfig, main
from hydraens.data import Dataset
from hydraens.errors import ConfigError
from hydraens.fusion import HydraModel
from hydraens.io import load
from hydraens.pruning import ranking_from_text
from hydraens.transformer import HeadMask

SIZES = ['--n-train', '64', '--n-test', '40', '--n-ood', '40', '--n-val',
         '24']


def _run(*argv):
    assert main([str(a) for a in argv]) == 0


def _read(*parts):
    with open(os.path.join(*parts)) as f:
        return f.read()


@pytest.fixture(scope='module')
def run(tmp_path_factory):
    d = str(tmp_path_factory.mktemp('run'))
    _run('gen-data', '--out', d, '--task-seed', 3, *SIZES)
    _run('train', '--data', d, '--out', d, '--steps', 5, '--batch-size', 16)
    return d


def test_gen_data(run):
    names = sorted(os.listdir(run))
    for name in ('task.json', 'train.txt', 'test.txt', 'noisy.txt',
                 'ood.txt', 'val.txt', 'val_ood.txt'):
        assert name in names
    assert json.loads(_read(run, 'task.json'))['seed'] == 3
    train = Dataset.from_text(_read(run, 'train.txt'))
    assert (len(train), train.seq_len, train.vocab_size) == (64, 16, 64)
    assert Dataset.from_text(_read(run, 'ood.txt')).labels is None
    assert len(Dataset.from_text(_read(run, 'val.txt'))) == 24


def test_train(run):
    model = load(os.path.join(run, 'model.hyd'))
    assert model.config.n_layers == 2
    assert model.config.n_heads == 4
    assert len(_read(run, 'losses.txt').splitlines()) == 5


def test_reproducible(run, tmp_path):
    d = str(tmp_path)
    _run('gen-data', '--out', d, '--task-seed', 3, *SIZES)
    for name in ('train.txt', 'noisy.txt', 'val_ood.txt'):
        assert _read(d, name) == _read(run, name)
    _run('train', '--data', d, '--out', d, '--steps', 5, '--batch-size', 16)
    with open(os.path.join(d, 'model.hyd'), 'rb') as a, \
            open(os.path.join(run, 'model.hyd'), 'rb') as b:
        assert a.read() == b.read()


def test_score_heads(run, tmp_path):
    _run('score-heads', '--model', os.path.join(run, 'model.hyd'),
         '--data', run, '--calib-size', 16, '--out', tmp_path)
    lines = _read(str(tmp_path), 'scores.txt').splitlines()
    assert lines[0].startswith('# kind=taylor')
    assert len([x for x in lines if not x.startswith('#')]) == 8


def test_circuit_pipeline(run, tmp_path):
    d = str(tmp_path)
    model = os.path.join(run, 'model.hyd')
    _run('extract-circuit', '--model', model, '--data', run,
         '--budget-global', 2, '--out', d)
    ranking = ranking_from_text(_read(d, 'ranking.txt'))
    assert len(ranking.removals) == 3

    members = os.path.join(d, 'members')
    _run('prune', '--model', model, '--data', run, '--ranking',
         'file://' + os.path.join(d, 'ranking.txt'), '--members', 3,
         '--seeds', '1,2,3', '--budget-global', 2, '--out', members)
    masks = [HeadMask.from_text(x)
             for x in _read(members, 'masks.txt').splitlines()]
    assert len(set(masks)) == 3
    assert all(len(m.removed()) == 2 for m in masks)
    assert all(set(m.removed()) <= set(ranking.removals) for m in masks)

    # URL inputs go through the same fs layer as plain paths
    _run('fuse', '--model', model, '--members-dir', 'file://' + members,
         '--out', d)
    hm = load(os.path.join(d, 'hydra.hyd'))
    assert isinstance(hm, HydraModel)
    assert list(hm.masks) == masks

    _run('eval', '--model', os.path.join(d, 'hydra.hyd'), '--data', run,
         '--out', d)
    report = json.loads(_read(d, 'eval.json'))
    for key in ('accuracy', 'brier', 'nll', 'ece', 'aece', 'auroc', 'fpr95',
                'aupr'):
        assert key in report
    assert (report['n_id'], report['n_ood']) == (40, 40)

    _run('bench', '--model', os.path.join(d, 'hydra.hyd'), '--out', d)
    assert 'members = 3' in _read(d, 'cost.txt').splitlines()


def test_single_full_member_matches_base(run, tmp_path):
    d = str(tmp_path)
    model = os.path.join(run, 'model.hyd')
    members = os.path.join(d, 'members')
    _run('prune', '--model', model, '--data', run, '--budget-global', 0,
         '--out', members)
    assert _read(members, 'masks.txt') == '1111,1111\n'
    _run('fuse', '--model', model, '--members-dir', members, '--out', d)
    _run('eval', '--model', os.path.join(d, 'hydra.hyd'), '--data', run,
         '--split', 'noisy', '--out', os.path.join(d, 'hydra'))
    _run('eval', '--model', model, '--data', run, '--split', 'noisy',
         '--out', os.path.join(d, 'base'))
    hydra = json.loads(_read(d, 'hydra', 'eval.json'))
    base = json.loads(_read(d, 'base', 'eval.json'))
    assert hydra == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_taylor_members(run, tmp_path):
    d = str(tmp_path)
    _run('prune', '--model', os.path.join(run, 'model.hyd'), '--data', run,
         '--strategy', 'taylor', '--members', 2, '--seeds', '4,5',
         '--budget-per-layer', 1, '--calib-size', 12, '--out', d)
    masks = [HeadMask.from_text(x)
             for x in _read(d, 'masks.txt').splitlines()]
    assert [m.counts for m in masks] == [(3, 3), (3, 3)]
    assert sorted(os.listdir(d)) == ['masks.txt', 'member0.hyd',
                                     'member1.hyd']


def test_bench_preset(tmp_path):
    d = str(tmp_path)
    _run('bench', '--preset', 'vit-b16', '--members', 3, '--heads-kept', 4,
         '--out', d)
    lines = _read(d, 'cost.txt').splitlines()
    assert 'seq_len = 197' in lines
    assert 'members = 3' in lines
    assert 'within_upper_bound = True' in lines


def _error(capsys, *argv):
    assert main([str(a) for a in argv]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    fields = err[0].split('\t')
    assert len(fields) == 4
    assert fields[0] == 'error'
    return fields


def test_missing_input(capsys, tmp_path):
    missing = os.path.join(str(tmp_path), 'absent')
    _, module, kind, message = _error(capsys, 'train', '--data', missing)
    assert (module, kind) == ('hydraens.cli', 'ConfigError')
    assert missing in message


def test_missing_flag(capsys):
    _, _, kind, message = _error(capsys, 'train')
    assert kind == 'ConfigError'
    assert message == 'train needs --data'


def test_seeds_per_member(capsys):
    _, _, kind, _ = _error(capsys, 'prune', '--members', 3)
    assert kind == 'ConfigError'
    _, _, kind, _ = _error(capsys, 'prune', '--members', 2, '--seeds', '1')
    assert kind == 'ConfigError'


def test_val_size_collision(capsys, tmp_path):
    _, _, kind, _ = _error(capsys, 'gen-data', '--out', tmp_path,
                           '--n-val', 2048)
    assert kind == 'ConfigError'


def test_inner_module_errors(capsys, run, tmp_path):
    bad = os.path.join(str(tmp_path), 'bad.hyd')
    with open(bad, 'wb') as f:
        f.write(b'not a model')
    _, module, kind, _ = _error(capsys, 'eval', '--model', bad, '--data',
                                run, '--out', tmp_path)
    assert (module, kind) == ('hydraens.io.container', 'BadMagicError')

    _, module, kind, _ = _error(capsys, 'extract-circuit', '--model',
                                os.path.join(run, 'model.hyd'), '--data',
                                run, '--budget-global', 7, '--out', tmp_path)
    assert kind == 'ConfigError'
    assert module.startswith('hydraens.pruning')


def test_budgets_are_exclusive():
    with pytest.raises(SystemExit):
        main(['prune', '--budget-per-layer', '1', '--budget-global', '2'])


def test_run_config():
    cfg = RunConfig('bench')
    assert cfg.seeds == (0,)
    with pytest.raises(ConfigError):
        RunConfig('serve')
    with pytest.raises(ConfigError):
        RunConfig('prune', members=0)
    with pytest.raises(ConfigError):
        RunConfig('prune', budget_per_layer=1, budget_global=2)
    with pytest.raises(ConfigError):
        cfg.budget(None)


def test_unknown_task_field(capsys, run, tmp_path):
    task = json.loads(_read(run, 'task.json'))
    task['difficulty'] = 2
    with open(os.path.join(str(tmp_path), 'task.json'), 'w') as f:
        json.dump(task, f)
    _, module, kind, message = _error(capsys, 'train', '--data', tmp_path,
                                      '--out', tmp_path)
    assert (module, kind) == ('hydraens.data.synth', 'ConfigError')
    assert 'difficulty' in message
