import filecmp
import os

import pandas as pd
import pytest

import metaspoof as msp
from metaspoof.cli import main

TRAIN_SETTINGS = ['--set', 'hidden_dims=16', '--set', 'output_dim=8',
                  '--set', 'episodes_per_epoch=3', '--set', 'val_tasks=3',
                  '--epochs', '2']


def _gen(out, *extra):
    return main(['gen-data', '--out', out, '--dim', '12', '--per-class',
                 '15', '--eval-per-class', '15', '--seed', '3'] + list(extra))


@pytest.fixture(scope='module')
def data_dir(tmpdir_factory):
    out = str(tmpdir_factory.mktemp('data'))
    assert _gen(out) == 0
    return out


@pytest.fixture(scope='module')
def protonet_dir(tmpdir_factory, data_dir):
    out = str(tmpdir_factory.mktemp('protonet'))
    assert main(['train', '--method', 'protonet', '--out', out,
                 '--dataset', os.path.join(data_dir, 'train.csv'),
                 '--val', os.path.join(data_dir, 'eval_seen.csv')]
                + TRAIN_SETTINGS) == 0
    return out


class TestGenData:
    def test_outputs(self, data_dir):
        for name in msp.cli.GEN_OUTPUTS:
            assert os.path.exists(os.path.join(data_dir, name))
        ds = msp.episodes.load_dataset(os.path.join(data_dir, 'train.csv'))
        assert ds.dim == 12
        assert len(ds) == 15 * 7

    def test_byte_identical(self, tmpdir, data_dir):
        out = str(tmpdir)
        assert _gen(out) == 0
        for name in ['train.csv', 'eval_seen.csv', 'eval_unseen.csv',
                     'metadata.txt']:
            assert filecmp.cmp(os.path.join(out, name),
                               os.path.join(data_dir, name), shallow=False)

    def test_refuses_overwrite(self, tmpdir, capsys):
        out = str(tmpdir)
        assert _gen(out) == 0
        assert _gen(out) == 1
        assert '--force' in capsys.readouterr().err
        assert _gen(out, '--force') == 0

    def test_manifest(self, data_dir):
        manifest = msp.general.read_key_values(
            os.path.join(data_dir, 'manifest.txt'))
        assert manifest['command'] == 'gen-data'
        assert manifest['seed'] == '3'
        assert manifest['gen.dim'] == '12'
        assert manifest['gen.per_class'] == '15'

    def test_dim_too_small(self, tmpdir, capsys):
        assert main(['gen-data', '--out', str(tmpdir), '--dim', '4']) == 1
        assert capsys.readouterr().err.startswith('error:')


class TestTrain:
    def test_outputs(self, protonet_dir):
        log = pd.read_csv(os.path.join(protonet_dir, 'train_log.csv'))
        assert list(log.columns) == msp.protonet.LOG_COLUMNS
        assert len(log) == 2
        params = msp.backbone.load_checkpoint(
            os.path.join(protonet_dir, 'checkpoint.mspf'))
        assert params.config.dims == [12, 16, 8]
        manifest = msp.general.read_key_values(
            os.path.join(protonet_dir, 'manifest.txt'))
        assert manifest['trainable_params'] == str(params.count())
        assert manifest['train.epochs'] == '2'

    def test_deterministic(self, tmpdir, data_dir, protonet_dir):
        out = str(tmpdir)
        assert main(['train', '--method', 'protonet', '--out', out,
                     '--dataset', os.path.join(data_dir, 'train.csv'),
                     '--val', os.path.join(data_dir, 'eval_seen.csv')]
                    + TRAIN_SETTINGS) == 0
        for name in ['checkpoint.mspf', 'train_log.csv']:
            assert filecmp.cmp(os.path.join(out, name),
                               os.path.join(protonet_dir, name),
                               shallow=False)

    def test_missing_dataset(self, tmpdir, capsys):
        code = main(['train', '--method', 'protonet', '--out', str(tmpdir),
                     '--dataset', str(tmpdir.join('nope.csv'))])
        assert code == 1
        assert 'nope.csv' in capsys.readouterr().err

    def test_needs_method(self, tmpdir, data_dir):
        assert main(['train', '--out', str(tmpdir), '--dataset',
                     os.path.join(data_dir, 'train.csv')]) == 1

    def test_baseline(self, tmpdir, data_dir):
        out = str(tmpdir)
        assert main(['train', '--method', 'baseline', '--out', out,
                     '--dataset', os.path.join(data_dir, 'train.csv'),
                     '--set', 'hidden_dims=8', '--set', 'output_dim=4',
                     '--set', 'lr=0.001', '--epochs', '2']) == 0
        params = msp.backbone.load_checkpoint(
            os.path.join(out, 'checkpoint.mspf'))
        assert 'head.weight' in params


class TestEvaluation:
    def _eval_args(self, data_dir, protonet_dir):
        return ['--checkpoint', os.path.join(protonet_dir, 'checkpoint.mspf'),
                '--dataset', os.path.join(data_dir, 'eval_unseen.csv'),
                '--repeats', '2']

    def test_adapt_eval(self, tmpdir, capsys, data_dir, protonet_dir):
        out = str(tmpdir)
        assert main(['adapt-eval', '--out', out, '--k', '2']
                    + self._eval_args(data_dir, protonet_dir)) == 0
        detail = pd.read_csv(os.path.join(out, 'adapt_eval.csv'))
        assert len(detail) == 2
        trials = msp.metrics.read_scores(
            os.path.join(out, 'scores_repeat1.csv'))
        assert msp.metrics.compute_eer(trials).eer == pytest.approx(
            detail.eer[1], abs=1e-12)
        printed = capsys.readouterr().out
        assert 'repeat 0: EER' in printed
        assert 'protonet k=2 EER' in printed

    def test_adapt_eval_k_too_large(self, tmpdir, capsys, data_dir,
                                    protonet_dir):
        out = str(tmpdir)
        assert main(['adapt-eval', '--out', out, '--k', '20']
                    + self._eval_args(data_dir, protonet_dir)) == 1
        assert '20-shot' in capsys.readouterr().err
        assert not os.path.exists(os.path.join(out, 'adapt_eval.csv'))

    def test_sweep_shots(self, tmpdir, data_dir, protonet_dir):
        out = str(tmpdir)
        assert main(['sweep-shots', '--out', out, '--shots', '2,4']
                    + self._eval_args(data_dir, protonet_dir)) == 0
        summary = pd.read_csv(os.path.join(out, 'sweep_summary.csv'))
        assert list(summary.k) == [2, 4]
        detail = pd.read_csv(os.path.join(out, 'sweep_detail.csv'))
        assert len(detail) == 4

    def test_sweep_steps(self, tmpdir, data_dir, protonet_dir):
        out = str(tmpdir)
        assert main(['sweep-steps', '--out', out, '--k', '2',
                     '--step-values', '0,1']
                    + self._eval_args(data_dir, protonet_dir)) == 0
        summary = pd.read_csv(os.path.join(out, 'sweep_summary.csv'))
        assert list(summary.steps) == [0, 1]

    def test_sweep_steps_rejects_protonet(self, tmpdir, capsys):
        code = main(['sweep-steps', '--out', str(tmpdir), '--method',
                     'protonet', '--checkpoint', 'missing.mspf',
                     '--dataset', 'missing.csv'])
        assert code == 1
        err = capsys.readouterr().err
        assert 'ProtoMAML' in err
        assert 'missing' not in err

    def test_sweep_deterministic(self, tmpdir, data_dir, protonet_dir):
        outs = [str(tmpdir.join(name)) for name in ('a', 'b')]
        for out in outs:
            assert main(['sweep-shots', '--out', out, '--shots', '2',
                         '--method', 'protomaml', '--steps', '2']
                        + self._eval_args(data_dir, protonet_dir)) == 0
        for name in ['sweep_detail.csv', 'sweep_summary.csv']:
            assert filecmp.cmp(os.path.join(outs[0], name),
                               os.path.join(outs[1], name), shallow=False)

    def test_compare(self, tmpdir, capsys, data_dir, protonet_dir):
        out = str(tmpdir)
        checkpoint = os.path.join(protonet_dir, 'checkpoint.mspf')
        assert main(['compare', '--out', out, '--k', '2', '--repeats', '2',
                     '--checkpoint', 'protonet=' + checkpoint,
                     '--checkpoint', 'protomaml=' + checkpoint,
                     '--dataset', os.path.join(data_dir, 'eval_seen.csv'),
                     '--dataset', 'shifted=' + os.path.join(
                         data_dir, 'eval_unseen.csv')]) == 0
        table = pd.read_csv(os.path.join(out, 'comparison.csv'))
        assert len(table) == 4
        assert sorted(set(table.eval_set)) == ['eval_seen', 'shifted']
        with open(os.path.join(out, 'comparison.txt')) as f:
            assert f.read() == capsys.readouterr().out

    def test_compare_baseline_needs_head(self, tmpdir, data_dir,
                                         protonet_dir):
        checkpoint = os.path.join(protonet_dir, 'checkpoint.mspf')
        assert main(['compare', '--out', str(tmpdir), '--checkpoint',
                     'baseline=' + checkpoint, '--dataset',
                     os.path.join(data_dir, 'eval_seen.csv')]) == 1
