"""Model assembly, residual blocks, cosine loss, parameter accounting."""

import math

import numpy as np
import pytest

from sgcn import (SgcnModel, Tensor, batch_graphs, cos_loss, large_config,
                  small_config)
from sgcn.autodiff import Tape, backward
from sgcn.errors import SgcnError, ShapeError
from sgcn.gradsuite import _toy_graph
from sgcn.network import (ModelConfig, RsGcbBlock, cosine_logits, margin_ce,
                          param_count, rs_gcb_forward)
from sgcn.splineconv import pseudo_coords


def micro_config(num_classes=3, **overrides):
    blocks = [
        {"type": "input_stn"}, {"type": "feat_layer"},
        {"type": "rs_gcb", "channels": 8}, {"type": "pool", "cell": 0.1},
        {"type": "global_avg"}, {"type": "fc", "channels": 8}, {"type": "head"},
    ]
    overrides.setdefault("stn_hidden", [8, 8, 8])
    return ModelConfig(blocks=blocks, num_classes=num_classes, **overrides)


class TestRsGcb:
    def test_zero_convs_reduce_to_prelu_shortcut(self, rng):
        g = _toy_graph(rng)
        cfg = micro_config(dropout=0.0)
        block = RsGcbBlock(3, 3, cfg, rng, dtype=np.float64)
        block.conv1.weights.data[:] = 0.0
        block.conv2.weights.data[:] = 0.0
        x = Tensor(rng.normal(size=(g.num_nodes, 3)), dtype=np.float64)
        out = rs_gcb_forward(x, g, pseudo_coords(g), block, mode="train")
        expected = np.where(x.data > 0, x.data, 0.25 * x.data)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_eval_deterministic(self, rng):
        g = _toy_graph(rng)
        cfg = micro_config()
        block = RsGcbBlock(3, 5, cfg, rng, dtype=np.float64)
        x = Tensor(rng.normal(size=(g.num_nodes, 3)), dtype=np.float64)
        p = pseudo_coords(g)
        a = rs_gcb_forward(x, g, p, block, mode="eval").data
        b = rs_gcb_forward(x, g, p, block, mode="eval").data
        np.testing.assert_array_equal(a, b)

    def test_channel_mismatch_rejected(self, rng):
        g = _toy_graph(rng)
        block = RsGcbBlock(4, 5, micro_config(), rng, dtype=np.float64)
        with pytest.raises(ShapeError):
            rs_gcb_forward(Tensor(np.ones((g.num_nodes, 3))), g, pseudo_coords(g), block)


class TestCosLoss:
    def test_uniform_cosines_give_log_k(self, rng):
        emb = Tensor(np.tile(rng.normal(size=(1, 8)), (4, 1)), dtype=np.float64)
        weights = Tensor(np.tile(rng.normal(size=(1, 8)), (3755, 1)), dtype=np.float64)
        loss = cos_loss(emb, weights, [17, 3, 900, 0], sigma=16.0, margin=0.0)
        assert loss.item() == pytest.approx(math.log(3755), rel=1e-9)
        assert loss.item() == pytest.approx(8.2309, abs=1e-4)

    def test_two_class_closed_form(self):
        emb = Tensor(np.array([[1.0, 0.0]]), dtype=np.float64)
        weights = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]), dtype=np.float64)
        loss = cos_loss(emb, weights, [0], sigma=16.0, margin=0.0)
        assert loss.item() == pytest.approx(math.log1p(math.exp(-32.0)), rel=1e-9)
        assert loss.item() == pytest.approx(1.27e-14, rel=0.01)

    def test_margin_strictly_increases_loss(self, rng):
        emb = Tensor(rng.normal(size=(5, 6)), dtype=np.float64)
        weights = Tensor(rng.normal(size=(4, 6)), dtype=np.float64)
        labels = [0, 1, 2, 3, 1]
        base = cos_loss(emb, weights, labels, sigma=10.0, margin=0.0).item()
        with_margin = cos_loss(emb, weights, labels, sigma=10.0, margin=0.2).item()
        assert with_margin > base

    def test_label_out_of_range_rejected(self, rng):
        emb = Tensor(rng.normal(size=(2, 3)))
        weights = Tensor(rng.normal(size=(4, 3)))
        with pytest.raises(SgcnError):
            cos_loss(emb, weights, [0, 7])

    def test_loss_nonnegative(self, rng):
        for _ in range(5):
            emb = Tensor(rng.normal(size=(6, 4)), dtype=np.float64)
            weights = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
            labels = rng.integers(0, 3, size=6)
            assert cos_loss(emb, weights, labels, sigma=4.0).item() >= 0.0

    def test_argmax_invariant_to_embedding_rescale(self, rng):
        emb = rng.normal(size=(6, 5))
        weights = Tensor(rng.normal(size=(7, 5)), dtype=np.float64)
        base = cosine_logits(Tensor(emb, dtype=np.float64), weights).data
        scaled = cosine_logits(Tensor(emb * 37.5, dtype=np.float64), weights).data
        np.testing.assert_array_equal(np.argmax(base, axis=1), np.argmax(scaled, axis=1))
        np.testing.assert_allclose(base, scaled, atol=1e-12)


class TestModelForward:
    def test_single_node_graph_shape(self, rng):
        from sgcn import Trajectory, build_graph, to_undirected_self_loops
        g = to_undirected_self_loops(
            build_graph(Trajectory([np.array([[0.5, 0.5]])]), dtype=np.float64))
        model = SgcnModel(small_config(10), rng=rng, dtype=np.float64).eval()
        result = model.forward(batch_graphs([g]))
        assert result.logits.shape == (1, 10)
        assert np.all(np.isfinite(result.logits.data))

    def test_node_permutation_leaves_logits_unchanged(self, rng):
        from sgcn.graphs import BatchedGraph
        g = _toy_graph(rng, n=14)
        model = SgcnModel(small_config(5), rng=rng, dtype=np.float64).eval()
        base = model.forward(batch_graphs([g])).logits.data

        perm = rng.permutation(14)
        inv = np.argsort(perm)
        permuted = BatchedGraph(
            coords=Tensor(g.coords.data[perm], dtype=np.float64),
            edges=inv[g.edges], stroke_start=g.stroke_start[perm],
            pred=inv[g.pred[perm]], batch_id=np.zeros(14, dtype=np.int64),
            graph_sizes=[14])
        out = model.forward(permuted).logits.data
        np.testing.assert_allclose(out, base, atol=1e-9)

    def test_batched_forward_matches_individual(self, rng):
        graphs = [_toy_graph(np.random.default_rng(s), n=10 + s) for s in range(3)]
        model = SgcnModel(small_config(4), rng=rng).eval()
        batched = model.forward(batch_graphs(graphs)).logits.data
        for i, g in enumerate(graphs):
            solo = model.forward(batch_graphs([g])).logits.data
            np.testing.assert_allclose(batched[i], solo[0], atol=1e-5)

    def test_eval_forward_bit_identical(self, rng):
        g = _toy_graph(rng)
        model = SgcnModel(small_config(3), rng=rng).eval()
        a = model.forward(batch_graphs([g])).logits.data
        b = model.forward(batch_graphs([g])).logits.data
        np.testing.assert_array_equal(a, b)

    def test_config_validation(self):
        with pytest.raises(SgcnError, match="feat_layer"):
            ModelConfig(blocks=[{"type": "head"}], num_classes=3)
        with pytest.raises(SgcnError, match="head"):
            ModelConfig(blocks=[{"type": "feat_layer"}], num_classes=3)
        with pytest.raises(SgcnError):
            ModelConfig(blocks=[{"type": "feat_layer"}, {"type": "rs_gcb", "channels": 0},
                                {"type": "head"}], num_classes=3)

    def test_config_json_round_trip(self):
        cfg = small_config(12, sigma=24.0, margin=0.1, width_mult=1.5)
        back = ModelConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_large_config_runs_and_spot_gradchecks(self, rng):
        """3-class toy forward/backward with FD spot checks off the pooling path."""
        model = SgcnModel(large_config(3, dropout=0.0), rng=rng, dtype=np.float64)
        graphs = [_toy_graph(np.random.default_rng(s), n=12) for s in range(2)]
        batch = batch_graphs(graphs)
        labels = np.array([0, 2])

        def loss_value():
            return margin_ce(model.forward(batch).cosine, labels, 8.0, 0.0)

        with Tape() as tape:
            loss = loss_value()
        backward(tape, loss)

        params = model.named_parameters()
        eps = 1e-5
        checked = 0
        r = np.random.default_rng(0)
        for name, p in params.items():
            if "input_stn" in name:
                continue  # moving coords shifts grid-cluster boundaries
            flat = p.data.reshape(-1)
            g = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
            for i in r.choice(flat.size, size=min(2, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_value().item()
                flat[i] = orig - eps
                fm = loss_value().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                assert abs(g[i] - num) / max(1.0, abs(num)) < 1e-3, name
                checked += 1
        assert checked > 30


class TestParamCount:
    def test_fc_10_to_5(self, rng):
        cfg = ModelConfig(blocks=[{"type": "feat_layer"}, {"type": "global_avg"},
                                  {"type": "fc", "channels": 5}, {"type": "head"}],
                          num_classes=2)
        model = SgcnModel(cfg, rng=rng)
        fc = [b for b in model.blocks if b.name == "fc"][0]
        n = sum(p.size for p in fc.parameters().values())
        assert n == 6 * 5 + 5  # feat width 6 in, 5 out, plus bias

    def test_doubling_width_quadruples_conv_params(self, rng):
        def conv2_params(mult):
            model = SgcnModel(small_config(10, width_mult=mult), rng=np.random.default_rng(0))
            return {i: b.conv2.weights.size for i, b in enumerate(model.blocks)
                    if b.name == "rs_gcb"}

        base = conv2_params(1.0)
        double = conv2_params(2.0)
        for i in base:
            assert double[i] == 4 * base[i]

    def test_small_config_matches_manual_layer_sum(self, rng):
        model = SgcnModel(small_config(10), rng=rng)
        # spreadsheet: per-layer parameter sums of the digit-scale stack
        input_stn = (2 * 64 + 64) + (64 * 128 + 128) + (128 * 128 + 128) + (128 * 4 + 4)
        rs1 = 9 * 6 * 32 + 9 * 32 * 32 + 2 * (32 + 32) + 32 + 32 + 6 * 32
        feature_stn = (32 * 64 + 64) + (64 * 128 + 128) + (128 * 128 + 128) \
            + (128 * 1024 + 1024)
        rs2 = 9 * 32 * 64 + 9 * 64 * 64 + 2 * (64 + 64) + 64 + 64 + 32 * 64
        fc = 64 * 128 + 128
        head = 10 * 128
        expected = input_stn + rs1 + feature_stn + rs2 + fc + head
        report = param_count(model)
        assert report["num_params"] == expected
        bn_stats = 2 * (32 + 32) + 2 * (64 + 64)
        assert report["storage_bytes"] == 4 * (expected + bn_stats)
