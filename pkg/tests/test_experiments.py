"""Benchmark harness: seed discipline, reports, ablations, theory checks."""

import dataclasses
import filecmp
import math

import numpy as np
import pytest

from trace_conformal import conformal as cf
from trace_conformal import data as dt
from trace_conformal import experiments as ex
from trace_conformal import genmodels as gm
from trace_conformal import network as nn
from trace_conformal import regions as rg
from trace_conformal import scoring as sc
from trace_conformal.errors import InvalidArgumentError, NumericError


@pytest.fixture(scope="module")
def tiny_cfg():
    return ex.ExperimentConfig(
        dataset=dt.SyntheticConfig("spiral", "L", 320, 0),
        methods=("trace-fm", "rectangle"),
        seeds=(0, 1),
        epochs=30,
        hidden=24,
        blocks=2,
        n_time=4,
        repeats=2,
        volume_points=128,
        volume_inputs=2,
        ablation_banks=6,
        ablation_volume_inputs=1,
    )


@pytest.fixture(scope="module")
def tiny_report(tiny_cfg):
    return ex.run_benchmark(tiny_cfg)


class TestHelpers:
    def test_thread_limit_default(self, monkeypatch):
        monkeypatch.delenv("TRACE_THREADS", raising=False)
        assert ex.thread_limit() == 1

    def test_thread_limit_env(self, monkeypatch):
        monkeypatch.setenv("TRACE_THREADS", "4")
        assert ex.thread_limit() == 4
        monkeypatch.setenv("TRACE_THREADS", "not-a-number")
        assert ex.thread_limit() == 1
        monkeypatch.setenv("TRACE_THREADS", "0")
        assert ex.thread_limit() == 1

    def test_pmap_matches_serial_map(self, monkeypatch):
        items = list(range(17))
        serial = [i * i for i in items]
        monkeypatch.setenv("TRACE_THREADS", "3")
        assert ex.pmap(lambda i: i * i, items) == serial

    def test_derive_seeds_deterministic_and_distinct(self):
        a = ex.derive_seeds(7, 6)
        b = ex.derive_seeds(7, 6)
        assert a == b
        assert len(set(a)) == 6
        assert a != ex.derive_seeds(8, 6)

    def test_volume_input_indices(self):
        assert ex._volume_input_indices(100, 0).size == 0
        idx = ex._volume_input_indices(10, 100)
        assert np.array_equal(idx, np.arange(10))
        idx = ex._volume_input_indices(100, 4)
        assert idx.size == 4
        assert np.all(np.diff(idx) > 0)
        assert idx[0] == 0 and idx[-1] == 99


class TestConfig:
    def test_alpha_validated(self):
        with pytest.raises(InvalidArgumentError):
            ex.ExperimentConfig(dataset=dt.SyntheticConfig("spiral", "L", 100, 0), alpha=1.5)

    def test_seeds_required(self):
        with pytest.raises(InvalidArgumentError):
            ex.ExperimentConfig(dataset=dt.SyntheticConfig("spiral", "L", 100, 0), seeds=())

    def test_unknown_method_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ex.ExperimentConfig(
                dataset=dt.SyntheticConfig("spiral", "L", 100, 0), methods=("nope",)
            )

    def test_budget_and_names(self):
        cfg = ex.ExperimentConfig(dataset=dt.SyntheticConfig("pinwheel", "H", 100, 0))
        assert cfg.budget == 15 * 8
        assert cfg.dataset_name() == "pinwheel_H"

    def test_full_protocol_scales_up(self):
        cfg = ex.full_protocol(dt.SyntheticConfig("spiral", "L", 100, 0))
        assert len(cfg.seeds) == 20
        assert cfg.hidden > ex.desk_protocol(dt.SyntheticConfig("spiral", "L", 100, 0)).hidden


class TestDiscretization:
    def test_linear_attains_bound_exactly(self):
        rows = ex.discretization_check("linear")
        for row in rows:
            assert row["ok"]
            assert row["error"] == pytest.approx(1.0 / (2 * row["m"]), abs=1e-15)
            assert abs(row["error"] - row["bound"]) < 1e-15

    def test_sine_error_tiny_and_within_bound(self):
        rows = ex.discretization_check("sine")
        for row in rows:
            assert row["ok"]
            assert row["error"] < 1e-12
            assert row["bound"] == pytest.approx(math.pi / row["m"])

    def test_constant_is_exact_with_zero_bound(self):
        rows = ex.discretization_check("constant")
        for row in rows:
            assert row["error"] == 0.0
            assert row["bound"] == 0.0
            assert row["ok"]

    def test_error_halves_as_m_doubles_for_linear(self):
        rows = ex.discretization_check("linear", m_grid=(4, 8, 16))
        errs = [r["error"] for r in rows]
        assert errs[0] / errs[1] == pytest.approx(2.0)
        assert errs[1] / errs[2] == pytest.approx(2.0)

    def test_unknown_mu_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ex.discretization_check("cubic")

    def test_bad_m_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ex.discretization_check("linear", m_grid=(0,))


class TestRunBenchmark:
    def test_row_and_summary_shape(self, tiny_cfg, tiny_report):
        rep = tiny_report
        assert len(rep.rows) == len(tiny_cfg.seeds) * len(tiny_cfg.methods)
        for row in rep.rows:
            assert set(row) == {"method", "seed", "coverage", "volume", "threshold", "n_cal", "n_test"}
            assert 0.0 <= row["coverage"] <= 1.0
            assert row["volume"] > 0.0 and math.isfinite(row["volume"])
        assert set(rep.summary) == set(tiny_cfg.methods)
        assert rep.failed == []

    def test_volumes_skipped_when_disabled(self, tiny_cfg):
        cfg = dataclasses.replace(tiny_cfg, methods=("rectangle",), seeds=(0,), volume_inputs=0)
        rep = ex.run_benchmark(cfg)
        assert math.isnan(rep.rows[0]["volume"])
        assert math.isnan(rep.summary["rectangle"]["volume_mean"])

    def test_full_run_deterministic(self, tiny_cfg, tiny_report):
        again = ex.run_benchmark(tiny_cfg)
        assert again.rows == tiny_report.rows
        assert again.summary == tiny_report.summary

    def test_method_results_do_not_depend_on_method_list(self, tiny_cfg, tiny_report):
        solo = ex.run_single_seed(dataclasses.replace(tiny_cfg, methods=("trace-fm",)), 0)
        joint = [r for r in tiny_report.rows if r["method"] == "trace-fm" and r["seed"] == 0]
        assert solo == joint

    def test_failed_seed_excluded_and_counted(self, tiny_cfg, monkeypatch):
        original = ex.run_single_seed

        def flaky(cfg, run_seed):
            if run_seed == 1:
                raise NumericError("loss diverged")
            return original(cfg, run_seed)

        monkeypatch.setattr(ex, "run_single_seed", flaky)
        cfg = dataclasses.replace(tiny_cfg, methods=("rectangle",), seeds=(0, 1, 2), volume_inputs=0)
        rep = ex.run_benchmark(cfg)
        assert [s for s, _ in rep.failed] == [1]
        assert sorted({r["seed"] for r in rep.rows}) == [0, 2]
        assert rep.summary["rectangle"]["n_seeds"] == 2

    def test_infinite_threshold_gives_box_volume(self):
        box = rg.BoundingBox(np.array([0.0, 0.0]), np.array([2.0, 3.0]))
        vol = ex.region_volume(object(), np.zeros(1), math.inf, box, 64)
        assert vol == 6.0


class TestAblation:
    def test_grid_must_increase(self, tiny_cfg):
        with pytest.raises(InvalidArgumentError, match="strictly increasing"):
            ex.ablate_budget(tiny_cfg, [(4, 2), (2, 4)])

    def test_grid_must_include_configured_budget(self, tiny_cfg):
        with pytest.raises(InvalidArgumentError, match="configured budget"):
            ex.ablate_budget(tiny_cfg, [(4, 4), (8, 4)])

    def test_needs_a_transport_method(self, tiny_cfg):
        cfg = dataclasses.replace(tiny_cfg, methods=("rectangle",))
        with pytest.raises(InvalidArgumentError):
            ex.ablate_budget(cfg, [(4, 2), (8, 2)])

    def test_rows_and_slope(self, tiny_cfg):
        grid = [(4, 2), (4, 4), (8, 4), (8, 8)]
        rep = ex.ablate_budget(tiny_cfg, grid)
        assert [r["B"] for r in rep.rows] == [8, 16, 32, 64]
        for row in rep.rows:
            assert row["score_std"] > 0.0
            assert math.isfinite(row["threshold_mean"])
            assert row["volume_mean"] > 0.0
        assert ex.fitted_decay_slope(rep) < 0.0

    def test_slope_recovers_exact_power_law(self):
        rows = [{"B": B, "score_std": 3.0 * B**-0.5} for B in (8, 16, 32, 64, 128)]
        rep = ex.AblationReport(dataset="d", method="trace-fm", rows=rows, n_banks=1)
        assert ex.fitted_decay_slope(rep) == pytest.approx(-0.5, abs=1e-12)


class TestThresholdStability:
    def test_budget_multiple_validated(self, tiny_cfg):
        with pytest.raises(InvalidArgumentError, match="multiple"):
            ex.threshold_stability_check(tiny_cfg, B_grid=(8, 12), n_time_fixed=8)

    def test_constant_loss_reproduces_reference_exactly(self, tiny_cfg, monkeypatch):
        const = 3.7

        def fake_train(dataset, config, arch):
            params = nn.init_network(0, input_dim=2, cond_dim=2, hidden=arch.hidden, blocks=arch.blocks)
            return gm.FlowModel(
                params=params,
                ema=nn.init_ema(params, config.ema_decay),
                target_dim=2,
                cond_dim=2,
                train_seed=config.seed,
            )

        def const_by_draw(model, bank, X, Y):
            return np.full((bank.time_set.size, bank.R, X.shape[0]), const)

        def const_per_t(model, bank, X, Y):
            return np.full((bank.time_set.size, X.shape[0]), const)

        monkeypatch.setattr(gm, "train_fm", fake_train)
        monkeypatch.setattr(sc, "losses_by_draw", const_by_draw)
        monkeypatch.setattr(sc, "fm_per_t_losses", const_per_t)
        rows = ex.threshold_stability_check(
            tiny_cfg, B_grid=(8, 16), n_banks=3, ref_factor=4
        )
        for row in rows:
            assert row["mean_abs_err"] == 0.0
            assert row["ok"]

    def test_errors_within_bound_on_real_model(self, tiny_cfg):
        rows = ex.threshold_stability_check(
            tiny_cfg, B_grid=(8, 16, 32), n_banks=8, ref_factor=8
        )
        assert [r["B"] for r in rows] == [8, 16, 32]
        for row in rows:
            assert row["ok"]
            assert row["bound"] > 0.0


class TestReports:
    @staticmethod
    def _toy_report():
        rows = []
        for seed in (0, 1, 2):
            for mi, method in enumerate(("trace-fm", "rectangle")):
                rows.append(
                    {
                        "method": method,
                        "seed": seed,
                        "coverage": 0.9 + 0.01 * seed,
                        "volume": 10.0 + mi + seed,
                        "threshold": 1.5 + mi,
                        "n_cal": 90,
                        "n_test": 40,
                    }
                )
        methods = ("trace-fm", "rectangle")
        return ex.RunReport(
            dataset="toy",
            alpha=0.1,
            methods=methods,
            seeds=(0, 1, 2),
            rows=rows,
            summary=ex._summarize(rows, methods),
            failed=[],
            volume_inputs=4,
            volume_points=128,
        )

    def test_raw_and_summary_row_counts(self, tmp_path):
        rep = self._toy_report()
        paths = ex.emit_report(rep, tmp_path)
        raw_lines = 0
        for method in rep.methods:
            text = (tmp_path / f"toy_{method}_3.csv").read_text().strip().splitlines()
            raw_lines += len(text) - 1
        assert raw_lines == 6
        summary = (tmp_path / "toy_summary_3.csv").read_text().strip().splitlines()
        assert len(summary) - 1 == 2
        assert (tmp_path / "toy_report_3.json").exists()
        assert len(paths) == 4

    def test_reemission_is_byte_identical(self, tmp_path):
        rep = self._toy_report()
        a = ex.emit_report(rep, tmp_path / "a")
        b = ex.emit_report(rep, tmp_path / "b")
        for pa, pb in zip(a, b):
            assert pa.name == pb.name
            assert filecmp.cmp(pa, pb, shallow=False)

    def test_benchmark_report_roundtrips_threshold(self, tmp_path, tiny_report):
        paths = ex.emit_report(tiny_report, tmp_path)
        import json

        doc = json.loads((tmp_path / f"spiral_L_report_{len(tiny_report.seeds)}.json").read_text())
        assert len(doc["rows"]) == len(tiny_report.rows)
        got = float(doc["rows"][0]["threshold"])
        assert got == tiny_report.rows[0]["threshold"]

    def test_summary_matches_hand_average(self):
        rep = self._toy_report()
        s = rep.summary["trace-fm"]
        covs = [0.9, 0.91, 0.92]
        assert s["coverage_mean"] == pytest.approx(np.mean(covs))
        assert s["coverage_std"] == pytest.approx(np.std(covs, ddof=1))
        assert s["n_seeds"] == 3

    def test_emit_table_rejects_empty(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            ex.emit_table([], tmp_path / "t.csv")

    def test_emit_table_roundtrip(self, tmp_path):
        rows = [{"B": 8, "err": 0.25}, {"B": 16, "err": 0.125}]
        path = ex.emit_table(rows, tmp_path / "t.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "B,err"
        assert lines[1] == "8,0.25"


class TestSeedDiscipline:
    def test_split_shared_across_methods_within_seed(self, tiny_cfg, monkeypatch):
        seen = []
        original = dt.split

        def spy(n, fractions=ex.DEFAULT_FRACTIONS, seed=0):
            seen.append((n, tuple(fractions), seed))
            return original(n, fractions, seed)

        monkeypatch.setattr(dt, "split", spy)
        ex.run_single_seed(dataclasses.replace(tiny_cfg, volume_inputs=0), 0)
        assert len(seen) == 1

    def test_trace_banks_share_seed_within_seed(self, tiny_cfg, monkeypatch):
        cfg = dataclasses.replace(
            tiny_cfg, methods=("trace-diff", "trace-fm"), volume_inputs=0, epochs=10
        )
        seeds_used = []
        original = sc.build_bank

        def spy(seed, time_set, R, target_dim):
            seeds_used.append(seed)
            return original(seed, time_set, R, target_dim)

        monkeypatch.setattr(sc, "build_bank", spy)
        ex.run_single_seed(cfg, 0)
        assert len(seeds_used) == 2
        assert seeds_used[0] == seeds_used[1]


class _RadialScore:
    """Distance-to-center score; sublevel sets are exact disks."""

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)

    def score_grid(self, x, P):
        return np.linalg.norm(np.atleast_2d(P) - self.center, axis=1)


class TestRegionVolume:
    def test_disk_volume_close_to_analytic(self):
        box = rg.BoundingBox(np.array([-4.0, -4.0]), np.array([4.0, 4.0]))
        vol = ex.region_volume(_RadialScore([0.3, -0.2]), np.zeros(2), 1.0, box, 4096)
        assert abs(vol - math.pi) <= 0.03 * math.pi

    def test_repeated_calls_identical(self):
        box = rg.BoundingBox(np.array([-4.0, -4.0]), np.array([4.0, 4.0]))
        args = (_RadialScore([0.3, -0.2]), np.zeros(2), 1.0, box, 2048)
        assert ex.region_volume(*args) == ex.region_volume(*args)

    def test_tiny_region_found_only_through_anchor(self):
        # Region fraction ~1e-6 of the box: the coarse scan cannot see it.
        box = rg.BoundingBox(np.array([-40.0, -40.0]), np.array([40.0, 40.0]))
        score = _RadialScore([3.0, 5.0])
        blind = ex.region_volume(score, np.zeros(2), 0.05, box, 4096)
        assert blind == 0.0
        helped = ex.region_volume(
            score, np.zeros(2), 0.05, box, 4096, anchors=[[3.0, 5.0]]
        )
        truth = math.pi * 0.05**2
        assert abs(helped - truth) <= 0.15 * truth

    def test_boundary_expansion_from_edge_anchor(self):
        # A single anchor on the region edge starts the refinement box off
        # center and too small; the growth loop must recover the full disk.
        box = rg.BoundingBox(np.array([-300.0, -300.0]), np.array([300.0, 300.0]))
        score = _RadialScore([0.0, 0.0])
        vol = ex.region_volume(
            score, np.zeros(2), 5.0, box, 4096, anchors=[[4.99, 0.0]]
        )
        truth = math.pi * 25.0
        assert abs(vol - truth) <= 0.10 * truth

    def test_region_clipped_to_data_box(self):
        # Disk centered on a box corner: only the inside quarter counts.
        box = rg.BoundingBox(np.array([0.0, 0.0]), np.array([10.0, 10.0]))
        vol = ex.region_volume(_RadialScore([0.0, 0.0]), np.zeros(2), 2.0, box, 4096)
        assert abs(vol - math.pi) <= 0.15

    def test_out_of_box_anchors_are_dropped(self):
        box = rg.BoundingBox(np.array([-40.0, -40.0]), np.array([40.0, 40.0]))
        vol = ex.region_volume(
            _RadialScore([3.0, 5.0]), np.zeros(2), 0.05, box, 1024,
            anchors=[[1000.0, 1000.0]],
        )
        assert vol == 0.0


class TestRegionAnchors:
    def test_fm_anchors_are_model_samples(self, wedge_fm):
        x = np.array([0.5])
        a = ex.region_anchors(
            sc.ScoreFunction(kind="trace-fm", model=wedge_fm,
                             bank=sc.build_bank(0, sc.fm_time_grid(3), 2, 2)),
            x, n=6, seed=3,
        )
        assert a.shape == (6, 2)
        b = ex.region_anchors(
            sc.ScoreFunction(kind="trace-fm", model=wedge_fm,
                             bank=sc.build_bank(0, sc.fm_time_grid(3), 2, 2)),
            x, n=6, seed=3,
        )
        np.testing.assert_array_equal(a, b)

    def test_diffusion_anchors_shape(self, wedge_diffusion):
        sf = sc.ScoreFunction(
            kind="trace-diff", model=wedge_diffusion,
            bank=sc.build_bank(0, sc.diffusion_time_set(200, 3), 2, 2),
        )
        assert ex.region_anchors(sf, np.array([0.2]), n=4, seed=0).shape == (4, 2)

    def test_predictor_anchor_is_center(self, wedge_data):
        X, Y = wedge_data
        pred = sc.train_point_predictor(
            (X, Y), gm.TrainConfig(epochs=40, batch_size=64, lr=2e-3, seed=1),
            nn.NetworkArch(hidden=16, blocks=2),
        )
        sf = sc.ScoreFunction(kind="rectangle", predictor=pred)
        x = np.array([0.1])
        np.testing.assert_allclose(
            ex.region_anchors(sf, x, seed=9), pred.predict(x[None, :])
        )
