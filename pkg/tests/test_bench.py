import csv

import numpy as np
import pytest

from dotin import tensor as T
from dotin.bench import (
    BenchRecord,
    attentiveness_ranks,
    export_attentiveness_ranks,
    flop_count,
    linear_flops,
    peak_activation_elements,
    stage_costs,
    sweep_drop_ratio,
    time_training,
    write_bench_csv,
)
from dotin.config import TrainConfig
from dotin.core import dotin_forward, drop_count, remaining_count
from dotin.exceptions import SpecError
from dotin.graphs import GraphInstance, SyntheticSpec, make_synthetic
from dotin.model import DotinModel, ModelSpec
from dotin.trainer import predict_logits


def _graph(n, f=3, seed=0):
    rng = np.random.default_rng(seed)
    a = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
    return GraphInstance(rng.normal(size=(n, f)), a + a.T, {"cls": 0}, f"g{seed}")


def _spec(alphas, backbone="gat", hidden=16, **kw):
    return ModelSpec(in_features=3, hidden=hidden, n_layers=len(alphas), backbone=backbone, alphas=alphas, **kw)


class TestFlopCount:
    def test_linear_layer(self):
        assert linear_flops(10, 4, 7) == 2 * 10 * 4 * 7

    @pytest.mark.parametrize("backbone", ["gat", "gcn"])
    @pytest.mark.parametrize("alphas", [(0.0, 0.0, 0.0), (0.5, 0.3, 0.0), (0.9, 0.9, 0.0), (0.25, 0.0, 0.6)])
    def test_matmul_share_matches_instrumented_forward(self, monkeypatch, backbone, alphas):
        """Tally every matmul the forward pass (plus head) actually runs."""
        heads = 2 if backbone == "gat" else 1
        model = DotinModel.init(_spec(alphas, backbone, heads=heads, tasks=("cls", "ged")), seed=1)
        g = _graph(23)
        tally = []
        real = T.matmul

        def counting(a, b):
            out = real(a, b)
            tally.append(2 * a.shape[0] * a.shape[1] * b.shape[1])
            return out

        monkeypatch.setattr(T, "matmul", counting)
        dotin_forward(model, g)
        predict_logits(model, [g])
        tally_forward_and_head = sum(tally) - sum(tally[: len(tally) // 2])  # predict_logits reruns the forward
        assert tally_forward_and_head == flop_count(model, g, matmul_only=True)

    def test_one_layer_gap_is_post_drop_linear(self):
        n, d = 200, 64
        g = _graph(n)
        full = flop_count(_spec((0.0,), hidden=d), g)
        dropped = flop_count(_spec((0.9,), hidden=d), g)
        gap = full - dropped
        reference = 0.9 * n * d * d * 2
        assert 0.8 * reference <= gap <= 1.0 * reference

    def test_batch_linearity(self):
        spec = _spec((0.5, 0.5, 0.0))
        graphs = [_graph(20 + i, seed=i) for i in range(4)]
        assert flop_count(spec, graphs * 2) == 2 * flop_count(spec, graphs)

    @pytest.mark.parametrize("backbone", ["gat", "gcn"])
    def test_non_increasing_across_dropping_ratios(self, backbone):
        for n in (20, 120, 256):
            g = _graph(n)
            for layers in (2, 3, 4):
                ratios = [a for a in np.linspace(0.001, 0.95, 200) if drop_count(n, a) > 0]
                counts = [flop_count(_spec((a,) * (layers - 1) + (0.0,), backbone), g) for a in ratios]
                assert all(b <= a for a, b in zip(counts, counts[1:]))

    @pytest.mark.parametrize("backbone", ["gat", "gcn"])
    def test_below_no_drop_once_stage_pays_off(self, backbone):
        for n in (12, 60, 256):
            g = _graph(n)
            for layers in (2, 3):
                base = flop_count(_spec((0.0,) * layers, backbone, hidden=128), g)
                for a in np.linspace(0.01, 0.95, 60):
                    if drop_count(n, a) >= 3:
                        assert flop_count(_spec((a,) * (layers - 1) + (0.0,), backbone, hidden=128), g) <= base

    def test_single_drop_is_pure_overhead(self):
        # one dropped node is replaced by one fused node: rows stay, stage work is added
        n = 100
        assert drop_count(n, 0.015) == 1 and remaining_count(n, 0.015, 1) == n + 1
        g = _graph(n)
        assert flop_count(_spec((0.015, 0.0)), g) > flop_count(_spec((0.0, 0.0)), g)

    def test_stage_rows_follow_remaining_count(self):
        stages = stage_costs(_spec((0.9, 0.9, 0.0)), 256)
        assert stages[0].rows_in == 257 and stages[0].rows_out == remaining_count(256, 0.9, 1)
        assert stages[1].rows_in == stages[0].rows_out
        assert all(isinstance(s.flops, int) for s in stages)


class TestPeakActivations:
    def test_includes_widest_attention(self):
        n = 50
        peak = peak_activation_elements(_spec((0.0, 0.0, 0.0)), _graph(n))
        assert peak >= (n + 1) ** 2

    def test_later_stages_shrink(self):
        stages = stage_costs(_spec((0.9, 0.9, 0.0)), 256)
        r = stages[1].rows_in
        assert r == remaining_count(256, 0.9, 1)
        assert r <= 0.1 * 256 + 1 + 1 + 1

    def test_monotone(self):
        g = _graph(256)
        for layers in (2, 3):
            sched = lambda a: (a,) * (layers - 1) + (0.0,)
            assert peak_activation_elements(_spec(sched(0.9)), g) <= peak_activation_elements(_spec(sched(0.1)), g)

    def test_batch_adds_held_graphs(self):
        spec = _spec((0.5, 0.0))
        a, b = _graph(10), _graph(12, seed=1)
        assert peak_activation_elements(spec, [a, b]) > peak_activation_elements(spec, [b])


class TestTiming:
    def test_positive_and_model_untouched(self):
        gs = make_synthetic(SyntheticSpec(graphs_per_class=3, n_min=8, n_max=10), seed=0)
        cfg = TrainConfig(hidden=8, n_layers=2, batch_size=2)
        model = DotinModel.init(cfg.model_spec(gs.num_features, 2), 0)
        before = model.checksum()
        bps = time_training(model, gs.graphs, cfg, n_batches=3, repeats=3, warmup=1)
        assert bps > 0 and model.checksum() == before


@pytest.fixture(scope="module")
def tiny_set():
    return make_synthetic(SyntheticSpec(graphs_per_class=5, n_min=10, n_max=12), seed=0)


class TestSweep:
    CFG = TrainConfig(hidden=8, n_layers=2, epochs=1, patience=0, folds=2, batch_size=4)

    def test_zero_ratio_single_record(self, tiny_set):
        recs = sweep_drop_ratio(self.CFG, [0.0], tiny_set)
        assert len(recs) == 1 and recs[0].strategy == "none"
        dotin = sweep_drop_ratio(self.CFG.replace(drop_strategy="dotin"), [0.0], tiny_set, strategies=["dotin"])
        assert dotin[0].accuracy == recs[0].accuracy

    def test_counts_and_reproducible(self, tiny_set):
        a = sweep_drop_ratio(self.CFG, [0.1, 0.5, 0.9], tiny_set)
        b = sweep_drop_ratio(self.CFG, [0.1, 0.5, 0.9], tiny_set)
        assert len(a) == 9
        assert [r.strategy for r in a[:3]] == ["dotin", "random", "none"]
        assert a == b or all(
            (x.accuracy, x.flops_per_batch, x.fingerprint) == (y.accuracy, y.flops_per_batch, y.fingerprint) for x, y in zip(a, b)
        )

    def test_bad_ratio(self, tiny_set):
        with pytest.raises(SpecError):
            sweep_drop_ratio(self.CFG, [1.0], tiny_set)

    def test_csv(self, tiny_set, tmp_path):
        recs = sweep_drop_ratio(self.CFG, [0.5], tiny_set, strategies=["dotin"])
        write_bench_csv(recs, tmp_path / "bench.csv")
        rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
        assert list(rows[0]) == BenchRecord.header()
        assert int(rows[0]["flops_per_batch"]) == recs[0].flops_per_batch


class TestAttentivenessRanks:
    def _model(self, tasks=("cls", "ged")):
        return DotinModel.init(_spec((0.0, 0.0), tasks=tasks), seed=2)

    def test_permutations(self):
        g = _graph(15)
        ranks = attentiveness_ranks(self._model(), g)
        for row in ranks:
            assert sorted(row.tolist()) == list(range(1, 16))

    def test_identical_virtuals(self):
        model = self._model()
        model.virtual.data[1] = model.virtual.data[0]
        ranks = attentiveness_ranks(model, _graph(12))
        assert ranks[0].tolist() == ranks[1].tolist()

    def test_export(self, tmp_path):
        graphs = [_graph(n, seed=n) for n in (5, 8, 11)]
        rows, rho = export_attentiveness_ranks(self._model(), graphs, tmp_path / "att.csv")
        assert len(rows) == 24
        assert -1.0 <= rho <= 1.0
        text = (tmp_path / "att.csv").read_text().splitlines()
        assert text[0] == "graph,node,rank_task1,rank_task2" and len(text) == 25

    def test_needs_two_tasks(self):
        with pytest.raises(SpecError):
            export_attentiveness_ranks(self._model(("cls",)), [_graph(5)])
