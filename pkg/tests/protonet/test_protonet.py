import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pandas as pd
import pytest

import metaspoof as msp

ad = msp.autodiff
bb = msp.backbone
ep = msp.episodes
pn = msp.protonet


def _identity_params(dim):
    config = bb.BackboneConfig(input_dim=dim, hidden_dims=(), output_dim=dim)
    params = bb.init_xavier(config)
    params['layer0.weight'].data[...] = np.eye(dim)
    return params


def _support(x, y, classes=ep.BINARY_LABELS):
    x = np.asarray(x, dtype=float)
    empty = np.zeros((0, x.shape[1]))
    return ep.Task(support_x=x, support_y=np.asarray(y),
                   support_ids=np.array(['s{}'.format(i)
                                         for i in range(len(x))]),
                   query_x=empty, query_y=np.zeros(0, dtype=int),
                   query_ids=np.array([]), classes=tuple(classes))


def _clustered(per_class=30, dim=6, seed=0, spread=0.3):
    rng = np.random.default_rng(seed)
    classes = ['bonafide', 'A01', 'A02', 'A03']
    ids, attack, label, feats = [], [], [], []
    for j, c in enumerate(classes):
        center = np.zeros(dim)
        center[j] = 3.0
        feats.append(center + spread * rng.normal(size=(per_class, dim)))
        ids += ['{}_{}'.format(c, i) for i in range(per_class)]
        attack += [c] * per_class
        label += ['bonafide' if c == 'bonafide' else 'spoof'] * per_class
    return ep.EpisodeDataset(ids, attack, label, np.vstack(feats))


def _tiny_config(**kwargs):
    settings = dict(epochs=3, episodes_per_epoch=4, val_tasks=5,
                    hidden_dims=(8,), output_dim=4, seed=1)
    settings.update(kwargs)
    return pn.ProtoTrainConfig(**settings)


class TestComputePrototypes:
    def test_loop_means(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(9, 5))
        labels = np.array([2, 0, 1, 1, 0, 2, 2, 0, 1])
        protos = pn.compute_prototypes(ad.Tensor(emb), labels)
        assert len(protos) == 3
        for c in range(3):
            rows = [emb[i] for i in range(9) if labels[i] == c]
            assert_allclose(protos.vectors.data[c], sum(rows) / len(rows),
                            rtol=1e-12)

    def test_missing_class(self):
        with pytest.raises(ValueError):
            pn.compute_prototypes(ad.Tensor(np.ones((2, 2))), [0, 0],
                                  ('a', 'b'))


class TestProtoLogProbs:
    def test_query_at_prototype(self):
        protos = pn.compute_prototypes(ad.Tensor([[0.0, 0.0], [3.0, 1.0]]),
                                       [0, 1])
        lp = pn.proto_log_probs(ad.Tensor([[3.0, 1.0]]), protos).data
        assert np.argmax(lp[0]) == 1

    def test_equidistant(self):
        protos = pn.compute_prototypes(
            ad.Tensor([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), [0, 1, 2])
        lp = pn.proto_log_probs(ad.Tensor([[0.0, 0.0]]), protos).data
        assert_allclose(np.exp(lp), [[1 / 3, 1 / 3, 1 / 3]], rtol=1e-12)

    def test_one_dimensional(self):
        protos = pn.compute_prototypes(ad.Tensor([[0.0], [2.0]]), [0, 1])
        lp = pn.proto_log_probs(ad.Tensor([[0.0]]), protos).data
        assert np.exp(lp[0, 0]) == pytest.approx(0.98201, abs=1e-5)

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        emb, q = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
        shift = rng.normal(size=4) * 10
        labels = [0, 1, 2, 0, 1, 2]
        a = pn.proto_log_probs(ad.Tensor(q), pn.compute_prototypes(
            ad.Tensor(emb), labels)).data
        b = pn.proto_log_probs(ad.Tensor(q + shift), pn.compute_prototypes(
            ad.Tensor(emb + shift), labels)).data
        assert_allclose(a, b, atol=1e-9)


class TestEpisodeLoss:
    def test_gradients(self):
        ds = _clustered()
        task = ep.sample_task(ds, ep.TaskSpec(3, 3, 2),
                              np.random.default_rng(2))
        template = bb.init_xavier(bb.BackboneConfig(
            input_dim=6, hidden_dims=(24,), output_dim=5, seed=4))
        assert template.count() >= 250

        def f(ts):
            params = bb.ParameterSet(template.config,
                                     zip(template.names(), ts))
            return pn.episode_loss(params, task)[0]

        assert ad.grad_check(f, template.tensors(), n_coords=250) < 1e-4

    def test_accuracy_range(self):
        ds = _clustered()
        task = ep.sample_task(ds, ep.TaskSpec(), np.random.default_rng(3))
        params = bb.init_xavier(bb.BackboneConfig(input_dim=6))
        loss, acc = pn.episode_loss(params, task)
        assert loss.shape == ()
        assert 0.0 <= acc <= 1.0

    def test_chance_without_structure(self):
        rng = np.random.default_rng(4)
        n = 60
        classes = ['bonafide', 'A01', 'A02', 'A03']
        ds = ep.EpisodeDataset(
            ['r{}'.format(i) for i in range(4 * n)],
            np.repeat(classes, n),
            np.repeat(['bonafide', 'spoof', 'spoof', 'spoof'], n),
            rng.normal(size=(4 * n, 8)))
        params = bb.init_xavier(bb.BackboneConfig(input_dim=8))
        bank = pn.make_task_bank(ds, ep.TaskSpec(), 200, seed=0)
        assert abs(pn.evaluate_bank(params, bank) - 1 / 3) < 0.06


class TestProtonetScore:
    def test_sign(self):
        params = _identity_params(2)
        support = _support([[0, 0], [0.2, 0], [5, 5], [5, 4.8]], [0, 0, 1, 1])
        scores = pn.protonet_score(params, support,
                                   np.array([[0.1, 0.1], [4.9, 5.0]]))
        assert scores[0] > 0
        assert scores[1] < 0

    def test_exact_log_odds(self):
        # With an identity backbone the log-odds is the distance difference.
        params = _identity_params(2)
        support = _support([[0, 0], [2, 0]], [0, 1])
        scores = pn.protonet_score(params, support, np.array([[0.5, 1.0]]))
        assert scores[0] == pytest.approx((1.5 ** 2 + 1) - (0.5 ** 2 + 1),
                                          rel=1e-12)

    def test_query_permutation(self):
        rng = np.random.default_rng(5)
        params = bb.init_xavier(bb.BackboneConfig(input_dim=6))
        support = _support(rng.normal(size=(6, 6)), [0, 1, 0, 1, 0, 1])
        query = rng.normal(size=(10, 6))
        perm = rng.permutation(10)
        a = pn.protonet_score(params, support, query)
        b = pn.protonet_score(params, support, query[perm])
        assert_allclose(a[perm], b, rtol=1e-12)

    def test_missing_spoof(self):
        params = _identity_params(2)
        with pytest.raises(ValueError) as e:
            pn.protonet_score(params, _support([[0, 0], [1, 1]], [0, 0]),
                              np.zeros((1, 2)))
        assert 'spoof' in str(e.value)

    def test_params_unchanged(self):
        params = bb.init_xavier(bb.BackboneConfig(input_dim=6))
        before = bb.clone_params(params)
        pn.protonet_score(params, _support(np.eye(6)[:4], [0, 1, 0, 1]),
                          np.eye(6))
        assert params.equals(before)


class TestProtoTrainConfig:
    def test_bad_mode(self):
        with pytest.raises(ValueError):
            pn.ProtoTrainConfig(lr_mode='cosine')

    def test_bad_task(self):
        with pytest.raises(ValueError):
            pn.ProtoTrainConfig(n_way=1)

    def test_backbone_config(self):
        config = pn.ProtoTrainConfig(hidden_dims=[16, 8], output_dim=4)
        assert config.backbone_config(10).dims == [10, 16, 8, 4]


class TestTrainProtonet:
    def test_deterministic(self):
        ds = _clustered()
        a, log_a = pn.train_protonet(ds, ds, _tiny_config())
        b, log_b = pn.train_protonet(ds, ds, _tiny_config())
        assert a.equals(b)
        pd.testing.assert_frame_equal(log_a, log_b)

    def test_log(self):
        ds = _clustered()
        config = _tiny_config()
        params, log = pn.train_protonet(ds, ds, config)
        assert list(log.columns) == pn.LOG_COLUMNS
        assert_array_equal(log.epoch, [1, 2, 3])
        for epoch, lr in zip(log.epoch, log.lr):
            it = (epoch - 1) * config.episodes_per_epoch
            assert lr == pytest.approx(msp.optim.cyclic_lr(it, config),
                                       rel=1e-12)
        assert np.isfinite(log.mean_loss).all()
        assert params.config.input_dim == 6

    def test_returns_best_epoch(self):
        ds = _clustered()
        config = _tiny_config(epochs=4)
        params, log = pn.train_protonet(ds, ds, config)
        bank = pn.make_task_bank(ds, config.task_spec, config.val_tasks,
                                 config.seed)
        assert pn.evaluate_bank(params, bank) == pytest.approx(
            log.val_acc.max(), abs=1e-12)

    def test_patience_stops(self):
        ds = _clustered()
        config = _tiny_config(epochs=50, patience=0, max_lr=1e-5,
                              base_lr=1e-6)
        _, log = pn.train_protonet(ds, ds, config)
        assert len(log) < 50

    def test_dim_mismatch(self):
        ds = _clustered()
        other = _clustered(dim=7)
        with pytest.raises(ValueError):
            pn.train_protonet(ds, other, _tiny_config())
