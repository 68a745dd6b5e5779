"""Benchmark harness: multi-seed runs, budget ablation, theory checks, reports.

One run seed drives everything downstream of it (data draw, split, model
training, the CRN bank, PCP sampling) through derived sub-seeds, so a
report is a pure function of its configuration.  All methods within a run
share the data split, and the transport-alignment scores share one bank
seed.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import conformal as cf
from . import data as dt
from . import genmodels as gm
from . import network as nn
from . import regions as rg
from . import scoring as sc
from .errors import InvalidArgumentError, NumericError

DEFAULT_FRACTIONS = (0.675, 0.225, 0.10)


def thread_limit() -> int:
    """Parallelism cap from TRACE_THREADS (default 1)."""
    raw = os.environ.get("TRACE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map honoring the thread cap.

    Items must be independent; results are collected in input order, so
    the output is identical whatever the worker count.
    """
    items = list(items)
    workers = thread_limit()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def derive_seeds(master: int, n: int) -> list[int]:
    """Independent sub-seeds, stable in (master, n)."""
    return [int(s) for s in np.random.SeedSequence(master).generate_state(n)]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run depends on."""

    dataset: object  # SyntheticConfig, or a Dataset reused across seeds
    methods: tuple = ("trace-diff", "trace-fm", "vlb-weighted", "ellipsoid", "rectangle", "pcp")
    alpha: float = 0.1
    seeds: tuple = tuple(range(10))
    n_time: int = 15
    repeats: int = 8
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    ema_decay: float = 0.999
    hidden: int = 64
    blocks: int = 3
    schedule_T: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.1
    fractions: tuple = DEFAULT_FRACTIONS
    pcp_k: int = sc.PCP_DEFAULT_K
    volume_points: int = 4096
    volume_inputs: int = 16  # test inputs per seed used for volume; 0 skips volumes
    box_pad: float = 0.1
    ablation_banks: int = 20
    ablation_volume_inputs: int = 4
    out_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")
        if len(self.seeds) < 1:
            raise InvalidArgumentError("need at least one seed")
        for m in self.methods:
            if m not in sc.SCORE_KINDS:
                raise InvalidArgumentError(f"unknown method {m!r}")

    @property
    def budget(self) -> int:
        return self.n_time * self.repeats

    def train_config(self, seed: int) -> gm.TrainConfig:
        return gm.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=seed,
            ema_decay=self.ema_decay,
        )

    def arch(self) -> nn.NetworkArch:
        return nn.NetworkArch(hidden=self.hidden, blocks=self.blocks)

    def schedule(self) -> gm.NoiseSchedule:
        return gm.make_schedule(self.schedule_T, self.beta_min, self.beta_max)

    def dataset_name(self) -> str:
        if isinstance(self.dataset, dt.SyntheticConfig):
            return self.dataset.name
        prov = getattr(self.dataset, "provenance", {})
        return prov.get("name", prov.get("kind", "dataset"))


def desk_protocol(dataset: object, **overrides) -> ExperimentConfig:
    """CPU-budget defaults: n=4000-scale data, 10 seeds, small networks."""
    return ExperimentConfig(dataset=dataset, **overrides)


def full_protocol(dataset: object, **overrides) -> ExperimentConfig:
    """Reference-scale settings; far beyond a single CPU's patience."""
    base = dict(
        seeds=tuple(range(20)),
        epochs=2000,
        hidden=256,
        blocks=8,
        schedule_T=1000,
        beta_max=0.02,
        volume_points=2**14,
        volume_inputs=64,
    )
    base.update(overrides)
    return ExperimentConfig(dataset=dataset, **base)


@dataclass
class RunReport:
    dataset: str
    alpha: float
    methods: tuple
    seeds: tuple
    rows: list  # dicts: method, seed, coverage, volume, threshold, n_cal, n_test
    summary: dict  # method -> dict of aggregates
    failed: list  # (seed, reason)
    volume_inputs: int
    volume_points: int


@dataclass
class AblationReport:
    dataset: str
    method: str
    rows: list  # dicts: B, n_time, repeats, score_std, volume_mean, threshold_mean
    n_banks: int


def _resolve_dataset(cfg: ExperimentConfig, data_seed: int) -> dt.Dataset:
    if isinstance(cfg.dataset, dt.SyntheticConfig):
        base = cfg.dataset
        return dt.gen_synthetic(dt.SyntheticConfig(base.noise_kind, base.regime, base.n, data_seed))
    return cfg.dataset


def _volume_input_indices(n_test: int, count: int) -> np.ndarray:
    if count <= 0:
        return np.array([], dtype=int)
    count = min(count, n_test)
    return np.unique(np.linspace(0, n_test - 1, count).round().astype(int))


def _fit_models(cfg: ExperimentConfig, train_ds, seeds: dict):
    """Train only what the method list needs; returns (diffusion, fm, predictor)."""
    need_diff = any(m in cfg.methods for m in ("trace-diff", "vlb-weighted", "pcp"))
    need_fm = "trace-fm" in cfg.methods
    need_pp = any(m in cfg.methods for m in ("ellipsoid", "rectangle"))
    diff = fm = pp = None
    if need_diff:
        diff = gm.train_diffusion(train_ds, cfg.train_config(seeds["diff"]), cfg.arch(), cfg.schedule())
    if need_fm:
        fm = gm.train_fm(train_ds, cfg.train_config(seeds["fm"]), cfg.arch())
    if need_pp:
        pp = sc.train_point_predictor(train_ds, cfg.train_config(seeds["pp"]), cfg.arch())
    return diff, fm, pp


def _score_functions(cfg: ExperimentConfig, diff, fm, pp, bank_seed: int, pcp_seed: int, target_dim: int):
    fns = {}
    for m in cfg.methods:
        if m in ("trace-diff", "vlb-weighted"):
            bank = sc.build_bank(bank_seed, sc.diffusion_time_set(cfg.schedule_T, cfg.n_time), cfg.repeats, target_dim)
            fns[m] = sc.ScoreFunction(kind=m, model=diff, bank=bank)
        elif m == "trace-fm":
            bank = sc.build_bank(bank_seed, sc.fm_time_grid(cfg.n_time), cfg.repeats, target_dim)
            fns[m] = sc.ScoreFunction(kind=m, model=fm, bank=bank)
        elif m == "pcp":
            fns[m] = sc.ScoreFunction(kind="pcp", model=diff, K=cfg.pcp_k, sample_seed=pcp_seed)
        else:
            fns[m] = sc.ScoreFunction(kind=m, predictor=pp)
    return fns


def region_anchors(sf: sc.ScoreFunction, x: np.ndarray, n: int = 8, seed: int = 0) -> np.ndarray:
    """Candidate in-region points for one input: model samples or centers.

    Conditional regions are tiny compared with the pooled target range, so
    volume estimation needs a hint about where the region sits.  Model
    samples (transport scores), the sample set itself (nearest-sample
    score), or the predicted center (residual baselines) serve that role.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if sf.kind in ("trace-diff", "vlb-weighted"):
        return gm.ddpm_sample_batch(sf.model, np.tile(x, (n, 1)), seed=seed)
    if sf.kind == "trace-fm":
        return gm.fm_sample_batch(sf.model, np.tile(x, (n, 1)), seed=seed)
    if sf.kind == "pcp":
        return sc.pcp_samples(sf.model, x[None, :], sf.K, sf.sample_seed)[0]
    return sf.predictor.predict(x[None, :])


def region_volume(
    sf,
    x: np.ndarray,
    threshold: float,
    box: rg.BoundingBox,
    n_points: int,
    coarse_points: int = 2048,
    anchors=None,
    pad: float = 0.25,
) -> float:
    """Two-stage quasi-random volume of {y : score(x, y) <= threshold}.

    A coarse scan over the data box locates the region; the full point
    budget is then spent on a tight box around everything found, so small
    conditional regions keep an accurate estimate instead of rounding to
    a handful of grid cells.  ``anchors`` are known in-region candidates
    that guard against the coarse scan missing a very small region.  The
    reported value is the volume of the region clipped to the data box.
    """
    if math.isinf(threshold):
        return box.volume

    def membership(P):
        return sf.score_grid(x, P) <= threshold

    unit = rg.SobolGenerator(box.dimension).next_points(coarse_points)
    coarse = box.map_unit(unit)
    found = [coarse[membership(coarse)]]
    if anchors is not None and len(anchors):
        A = np.atleast_2d(np.asarray(anchors, dtype=float))
        A = A[np.all((A >= box.lower) & (A <= box.upper), axis=1)]
        if A.shape[0]:
            found.append(A[membership(A)])
    found = np.concatenate(found, axis=0)
    if found.shape[0] == 0:
        return 0.0
    # Pad by the larger of the found extent and the coarse-scan cell size,
    # so a single found point still yields a resolvable refinement box.
    cell = (box.upper - box.lower) * coarse_points ** (-1.0 / box.dimension)
    lo, hi = found.min(axis=0), found.max(axis=0)
    span = np.maximum(hi - lo, cell)
    lo = np.maximum(lo - pad * span, box.lower)
    hi = np.minimum(hi + pad * span, box.upper)
    # Rescan, growing the refinement box while members touch its border,
    # so an initially undersized box cannot clip the region.
    for _ in range(12):
        refined = rg.BoundingBox(lo, hi)
        P = refined.map_unit(rg.SobolGenerator(box.dimension).next_points(n_points))
        inside = P[membership(P)]
        volume = inside.shape[0] / n_points * refined.volume
        if inside.shape[0] == 0:
            return volume
        margin = 0.02 * (hi - lo)
        at_lo = (inside.min(axis=0) <= lo + margin) & (lo > box.lower)
        at_hi = (inside.max(axis=0) >= hi - margin) & (hi < box.upper)
        if not (at_lo.any() or at_hi.any()):
            return volume
        growth = 0.5 * (hi - lo)
        lo = np.where(at_lo, np.maximum(lo - growth, box.lower), lo)
        hi = np.where(at_hi, np.minimum(hi + growth, box.upper), hi)
    return volume


def run_single_seed(cfg: ExperimentConfig, run_seed: int) -> list[dict]:
    """All per-method rows for one run seed."""
    sub = derive_seeds(run_seed, 8)
    seeds = dict(
        data=sub[0], split=sub[1], diff=sub[2], fm=sub[3], pp=sub[4], bank=sub[5], pcp=sub[6], anchor=sub[7]
    )
    ds = _resolve_dataset(cfg, seeds["data"])
    parts = dt.split(ds.n, cfg.fractions, seeds["split"])
    train_ds = (ds.x[parts.train], ds.y[parts.train])
    cal_x, cal_y = ds.x[parts.cal], ds.y[parts.cal]
    test_x, test_y = ds.x[parts.test], ds.y[parts.test]

    diff, fm, pp = _fit_models(cfg, train_ds, seeds)
    fns = _score_functions(cfg, diff, fm, pp, seeds["bank"], seeds["pcp"], ds.y.shape[1])

    box = rg.bounding_box(cal_y, cfg.box_pad) if cfg.volume_inputs > 0 else None
    vol_idx = _volume_input_indices(test_x.shape[0], cfg.volume_inputs)
    y_scale = np.asarray(ds.y_std, dtype=float)

    rows = []
    for method in cfg.methods:
        sf = fns[method]
        cal_scores = sf.score_batch(cal_x, cal_y)
        result = cf.calibrate(cal_scores, cfg.alpha)
        test_scores = sf.score_batch(test_x, test_y)
        cov = cf.coverage_from_scores(test_scores, result.threshold)
        if cfg.volume_inputs > 0:
            def one_volume(i):
                anchors = region_anchors(sf, test_x[i], seed=seeds["anchor"])
                return region_volume(
                    sf, test_x[i], result.threshold, box, cfg.volume_points, anchors=anchors
                )

            vols = pmap(one_volume, vol_idx)
            volume = float(np.mean([dt.volume_rescale(v, y_scale) for v in vols]))
        else:
            volume = math.nan
        rows.append(
            {
                "method": method,
                "seed": run_seed,
                "coverage": cov,
                "volume": volume,
                "threshold": result.threshold,
                "n_cal": cal_x.shape[0],
                "n_test": test_x.shape[0],
            }
        )
    return rows


def _summarize(rows: list, methods) -> dict:
    summary = {}
    for method in methods:
        mrows = [r for r in rows if r["method"] == method]
        if not mrows:
            continue
        covs = np.array([r["coverage"] for r in mrows])
        vols = np.array([r["volume"] for r in mrows])
        ddof = 1 if len(mrows) > 1 else 0
        summary[method] = {
            "n_seeds": len(mrows),
            "coverage_mean": float(covs.mean()),
            "coverage_std": float(covs.std(ddof=ddof)),
            "volume_mean": float(np.nanmean(vols)) if not np.all(np.isnan(vols)) else math.nan,
            "volume_std": float(np.nanstd(vols, ddof=ddof)) if not np.all(np.isnan(vols)) else math.nan,
        }
    return summary


def run_benchmark(cfg: ExperimentConfig) -> RunReport:
    """Coverage and mean region volume per method, aggregated over seeds.

    A seed whose training diverges is excluded from the aggregates and
    counted in the report rather than failing the run.
    """
    rows, failed = [], []
    for run_seed in cfg.seeds:
        try:
            rows.extend(run_single_seed(cfg, run_seed))
        except NumericError as exc:
            failed.append((run_seed, str(exc)))
    return RunReport(
        dataset=cfg.dataset_name(),
        alpha=cfg.alpha,
        methods=tuple(cfg.methods),
        seeds=tuple(cfg.seeds),
        rows=rows,
        summary=_summarize(rows, cfg.methods),
        failed=failed,
        volume_inputs=cfg.volume_inputs,
        volume_points=cfg.volume_points,
    )


def _ablation_score_fn(cfg: ExperimentConfig):
    """Which transport score the budget studies vary."""
    if "trace-fm" in cfg.methods:
        return "trace-fm"
    if "trace-diff" in cfg.methods:
        return "trace-diff"
    raise InvalidArgumentError("budget studies need a trace-fm or trace-diff method")


def _trained_for_ablation(cfg: ExperimentConfig, run_seed: int):
    sub = derive_seeds(run_seed, 8)
    ds = _resolve_dataset(cfg, sub[0])
    parts = dt.split(ds.n, cfg.fractions, sub[1])
    kind = _ablation_score_fn(cfg)
    train_ds = (ds.x[parts.train], ds.y[parts.train])
    if kind == "trace-fm":
        model = gm.train_fm(train_ds, cfg.train_config(sub[3]), cfg.arch())
    else:
        model = gm.train_diffusion(train_ds, cfg.train_config(sub[2]), cfg.arch(), cfg.schedule())
    return kind, model, ds, parts, sub


def _bank_for(cfg: ExperimentConfig, kind: str, n_time: int, repeats: int, seed: int, dim: int) -> sc.CRNBank:
    if kind == "trace-fm":
        return sc.build_bank(seed, sc.fm_time_grid(n_time), repeats, dim)
    return sc.build_bank(seed, sc.diffusion_time_set(cfg.schedule_T, n_time), repeats, dim)


def ablate_budget(cfg: ExperimentConfig, B_grid=None, run_seed: int = 0) -> AblationReport:
    """Across-bank score spread, threshold, and volume as the budget grows.

    The model is trained once; every (|T|, R) pair in the grid gets
    ``cfg.ablation_banks`` fresh banks.  The configured budget must be in
    the grid so the default operating point is always reported.
    """
    if B_grid is None:
        B_grid = [(4, 2), (4, 4), (8, 4), (8, 8), (cfg.n_time, cfg.repeats), (16, 16)]
    budgets = [nt * r for nt, r in B_grid]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise InvalidArgumentError("budget grid must be strictly increasing")
    if cfg.budget not in budgets:
        raise InvalidArgumentError(f"grid must include the configured budget {cfg.budget}")

    kind, model, ds, parts, sub = _trained_for_ablation(cfg, run_seed)
    cal_x, cal_y = ds.x[parts.cal], ds.y[parts.cal]
    test_x = ds.x[parts.test]
    dim = ds.y.shape[1]
    box = rg.bounding_box(cal_y, cfg.box_pad)
    vol_idx = _volume_input_indices(test_x.shape[0], cfg.ablation_volume_inputs)
    bank_seeds = derive_seeds(sub[5], cfg.ablation_banks * len(B_grid))

    # Anchors depend on the trained model and the input only, so compute
    # them once instead of once per bank.
    probe = sc.ScoreFunction(
        kind=kind, model=model,
        bank=_bank_for(cfg, kind, cfg.n_time, cfg.repeats, int(sub[5]), dim),
    )
    anchors = {i: region_anchors(probe, test_x[i], seed=sub[7]) for i in vol_idx}

    rows = []
    for gi, (n_time, repeats) in enumerate(B_grid):
        per_bank_scores = []
        thresholds = []
        volumes = []
        for b in range(cfg.ablation_banks):
            seed = bank_seeds[gi * cfg.ablation_banks + b]
            bank = _bank_for(cfg, kind, n_time, repeats, seed, dim)
            sf = sc.ScoreFunction(kind=kind, model=model, bank=bank)
            scores = sf.score_batch(cal_x, cal_y)
            per_bank_scores.append(scores)
            q = cf.calibrate(scores, cfg.alpha).threshold
            thresholds.append(q)
            vols = [
                region_volume(
                    sf, test_x[i], q, box, cfg.volume_points, anchors=anchors[i]
                )
                for i in vol_idx
            ]
            volumes.append(float(np.mean([dt.volume_rescale(v, ds.y_std) for v in vols])))
        mat = np.stack(per_bank_scores)  # (banks, n_cal)
        rows.append(
            {
                "B": n_time * repeats,
                "n_time": n_time,
                "repeats": repeats,
                "score_std": float(mat.std(axis=0, ddof=1).mean()),
                "threshold_mean": float(np.mean(thresholds)),
                "volume_mean": float(np.mean(volumes)),
            }
        )
    return AblationReport(
        dataset=cfg.dataset_name(), method=kind, rows=rows, n_banks=cfg.ablation_banks
    )


def fitted_decay_slope(report: AblationReport) -> float:
    """Log-log slope of across-bank score spread against budget."""
    B = np.array([r["B"] for r in report.rows], dtype=float)
    s = np.array([r["score_std"] for r in report.rows], dtype=float)
    return float(np.polyfit(np.log(B), np.log(s), 1)[0])


def threshold_stability_check(
    cfg: ExperimentConfig,
    B_grid=(8, 16, 32, 64, 128, 256, 512),
    run_seed: int = 0,
    n_banks: int = 50,
    n_time_fixed: int = 8,
    ref_factor: int = 64,
) -> list[dict]:
    """Empirical threshold error against its finite-budget bound.

    The time grid is held fixed at ``n_time_fixed`` points while repeats
    vary, so every budget shares the reference's time marginal.  The
    reference threshold uses ``ref_factor`` times the largest grid budget;
    the loss-variance constant is estimated from the reference bank as the
    max over calibration points of the max per-time sample variance.
    """
    B_grid = sorted(B_grid)
    for B in B_grid:
        if B % n_time_fixed:
            raise InvalidArgumentError(f"budget {B} is not a multiple of |T|={n_time_fixed}")
    kind, model, ds, parts, sub = _trained_for_ablation(cfg, run_seed)
    cal_x, cal_y = ds.x[parts.cal], ds.y[parts.cal]
    dim = ds.y.shape[1]
    n_cal = cal_x.shape[0]

    ref_R = ref_factor * max(B_grid) // n_time_fixed
    ref_bank = _bank_for(cfg, kind, n_time_fixed, ref_R, derive_seeds(sub[5], 1)[0], dim)
    # The reference threshold comes from the same estimator at a much
    # larger repeat count, so a loss with zero spread reproduces it
    # exactly at every budget.
    sf_ref = sc.ScoreFunction(kind=kind, model=model, bank=ref_bank)
    q_ref = cf.calibrate(sf_ref.score_batch(cal_x, cal_y), cfg.alpha).threshold
    per_draw = sc.losses_by_draw(model, ref_bank, cal_x, cal_y)  # (|T|, R, n)
    c_hat = float(per_draw.var(axis=1, ddof=1).max())

    bank_seeds = derive_seeds(sub[6], n_banks * len(B_grid))
    rows = []
    for gi, B in enumerate(B_grid):
        R = B // n_time_fixed
        errs = []
        for b in range(n_banks):
            bank = _bank_for(cfg, kind, n_time_fixed, R, bank_seeds[gi * n_banks + b], dim)
            sf = sc.ScoreFunction(kind=kind, model=model, bank=bank)
            q = cf.calibrate(sf.score_batch(cal_x, cal_y), cfg.alpha).threshold
            errs.append(abs(q - q_ref))
        bound = 2.0 * math.sqrt(n_cal * c_hat / B)
        err = float(np.mean(errs))
        rows.append({"B": B, "mean_abs_err": err, "bound": bound, "ok": err <= bound, "n_cal": n_cal})
    return rows


MU_REGISTRY = {
    "sine": {"fn": lambda t: np.sin(2.0 * np.pi * t), "L": 2.0 * np.pi, "integral": 0.0},
    "linear": {"fn": lambda t: t, "L": 1.0, "integral": 0.5},
    "constant": {"fn": lambda t: np.ones_like(t), "L": 0.0, "integral": 1.0},
}


def discretization_check(mu_name: str, m_grid=(2, 4, 8, 16, 32, 64)) -> list[dict]:
    """Rectangle-rule error of a known time-average against L/(2m).

    The grid is the right-endpoint one t_j = j/m; for the linear case the
    error equals the bound exactly at every m.
    """
    if mu_name not in MU_REGISTRY:
        raise InvalidArgumentError(f"unknown test function {mu_name!r}; have {sorted(MU_REGISTRY)}")
    spec = MU_REGISTRY[mu_name]
    rows = []
    for m in m_grid:
        if m < 1:
            raise InvalidArgumentError(f"m must be >= 1, got {m}")
        t = np.arange(1, m + 1) / m
        approx = float(np.mean(spec["fn"](t)))
        err = abs(approx - spec["integral"])
        bound = spec["L"] / (2.0 * m)
        rows.append({"mu": mu_name, "m": m, "error": err, "bound": bound, "ok": err <= bound + 1e-15})
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def _write_csv(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_report(report: RunReport, out_dir: str | Path, formats=("csv", "json")) -> list[Path]:
    """Write per-method raw rows, a summary table, and a JSON mirror.

    File contents are a pure function of the report: stable ordering,
    fixed float formatting, no timestamps.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"cannot create output directory {out}: {exc}") from exc
    n_seeds = len(report.seeds)
    paths = []
    raw_header = ["method", "seed", "coverage", "volume", "threshold", "n_cal", "n_test"]
    if "csv" in formats:
        for method in report.methods:
            mrows = [r for r in report.rows if r["method"] == method]
            path = out / f"{report.dataset}_{method}_{n_seeds}.csv"
            _write_csv(path, raw_header, mrows)
            paths.append(path)
        summary_rows = [
            {"method": m, **report.summary[m]} for m in report.methods if m in report.summary
        ]
        spath = out / f"{report.dataset}_summary_{n_seeds}.csv"
        _write_csv(
            spath,
            ["method", "n_seeds", "coverage_mean", "coverage_std", "volume_mean", "volume_std"],
            summary_rows,
        )
        paths.append(spath)
    if "json" in formats:
        doc = {
            "dataset": report.dataset,
            "alpha": report.alpha,
            "methods": list(report.methods),
            "seeds": list(report.seeds),
            "volume_inputs": report.volume_inputs,
            "volume_points": report.volume_points,
            "rows": [{k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in report.rows],
            "summary": {
                m: {k: (repr(v) if isinstance(v, float) else v) for k, v in s.items()}
                for m, s in report.summary.items()
            },
            "failed": [[s, msg] for s, msg in report.failed],
        }
        jpath = out / f"{report.dataset}_report_{n_seeds}.json"
        jpath.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
        paths.append(jpath)
    return paths


def emit_table(rows: list, path: str | Path) -> Path:
    """Generic CSV for the theory-check tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise InvalidArgumentError("no rows to write")
    _write_csv(path, list(rows[0].keys()), rows)
    return path
