"""Command-line front end.

Subcommands cover the whole pipeline: data generation, model training,
calibration, evaluation, budget ablation, theory checks, and full
benchmark reports.  Exit status is 0 on success, 2 for invalid inputs or
configuration, and 3 for numeric failures.

``TRACE_THREADS`` caps worker parallelism; it is applied to the BLAS
thread pools before any numerics load, which is why the heavy imports
here live inside ``main``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_MODEL_FOR_METHOD = {
    "trace-diff": "diffusion",
    "vlb-weighted": "diffusion",
    "pcp": "diffusion",
    "trace-fm": "fm",
    "ellipsoid": "point",
    "rectangle": "point",
}


def _apply_thread_env() -> None:
    raw = os.environ.get("TRACE_THREADS")
    if not raw:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trace-conformal",
        description="Conformal prediction regions from conditional generative models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "generate and save a synthetic dataset"),
        ("train", "train a model on the training split"),
        ("calibrate", "score the calibration split and fix the threshold"),
        ("eval", "measure test coverage (and, optionally, region volume)"),
        ("ablate", "sweep the score budget and report spread, threshold, volume"),
        ("theory-check", "verify discretization and threshold-stability bounds"),
        ("report", "run the multi-seed benchmark and emit report files"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the command's seed")
        p.add_argument("--out", default="trace-out", help="output directory")
        p.add_argument(
            "--full-scale",
            action="store_true",
            help="reference-scale protocol instead of the workstation one",
        )
    return parser


def _load_config(args) -> dict:
    from .errors import InvalidArgumentError, ParseError

    if not args.config:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise InvalidArgumentError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"config {path} must hold a JSON object")
    return doc


def _resolve_data(doc: dict, default_seed: int):
    from . import data as dt
    from .errors import InvalidArgumentError

    if "dataset_path" in doc:
        return dt.load_dataset(doc["dataset_path"])
    spec = doc.get("dataset")
    if not isinstance(spec, dict):
        raise InvalidArgumentError("config needs a 'dataset' object or a 'dataset_path'")
    return dt.gen_synthetic(
        dt.SyntheticConfig(
            spec["noise_kind"], spec["regime"], int(spec["n"]), int(spec.get("seed", default_seed))
        )
    )


def _split_parts(doc: dict, n: int):
    from . import data as dt
    from . import experiments as ex

    fractions = tuple(doc.get("fractions", ex.DEFAULT_FRACTIONS))
    return dt.split(n, fractions, int(doc.get("split_seed", 0)))


def _train_config(doc: dict, seed: int):
    from . import genmodels as gm

    return gm.TrainConfig(
        epochs=int(doc.get("epochs", 300)),
        batch_size=int(doc.get("batch_size", 128)),
        lr=float(doc.get("lr", 1e-3)),
        seed=seed,
        ema_decay=float(doc.get("ema_decay", 0.999)),
    )


def _arch(doc: dict):
    from . import network as nn

    return nn.NetworkArch(hidden=int(doc.get("hidden", 64)), blocks=int(doc.get("blocks", 3)))


def _schedule(doc: dict):
    from . import genmodels as gm

    return gm.make_schedule(
        int(doc.get("schedule_T", 200)),
        float(doc.get("beta_min", 1e-4)),
        float(doc.get("beta_max", 0.1)),
    )


def _experiment_config(doc: dict, args):
    import dataclasses

    from . import experiments as ex

    kwargs = {}
    field_names = {f.name for f in dataclasses.fields(ex.ExperimentConfig)} - {"dataset", "out_dir"}
    for key, value in doc.items():
        if key in field_names:
            kwargs[key] = tuple(value) if isinstance(value, list) else value
    dataset = _resolve_data(doc, 0) if "dataset_path" in doc else None
    if dataset is None:
        from . import data as dt

        spec = doc.get("dataset")
        if not isinstance(spec, dict):
            from .errors import InvalidArgumentError

            raise InvalidArgumentError("config needs a 'dataset' object or a 'dataset_path'")
        dataset = dt.SyntheticConfig(
            spec["noise_kind"], spec["regime"], int(spec["n"]), int(spec.get("seed", 0))
        )
    if args.seed is not None and "seeds" not in doc:
        kwargs["seeds"] = (args.seed,)
    builder = ex.full_protocol if args.full_scale else ex.desk_protocol
    return builder(dataset, out_dir=args.out, **kwargs)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    from . import data as dt

    doc = _load_config(args)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    ds = _resolve_data(doc, seed)
    name = ds.provenance.get("name", "dataset")
    path = _out_dir(args) / f"{name}.csv"
    dt.save_dataset(ds, path)
    print(f"wrote {path} ({ds.n} rows)")
    return 0


def _cmd_train(args) -> int:
    from . import genmodels as gm
    from . import scoring as sc
    from .errors import InvalidArgumentError

    doc = _load_config(args)
    kind = doc.get("model", "diffusion")
    if kind not in ("diffusion", "fm", "point"):
        raise InvalidArgumentError(f"unknown model kind {kind!r}")
    ds = _resolve_data(doc, 0)
    parts = _split_parts(doc, ds.n)
    train_view = (ds.x[parts.train], ds.y[parts.train])
    seed = args.seed if args.seed is not None else int(doc.get("train_seed", 0))
    config = _train_config(doc, seed)
    arch = _arch(doc)
    path = _out_dir(args) / f"model-{kind}.ckpt"
    if kind == "diffusion":
        model = gm.train_diffusion(train_view, config, arch, _schedule(doc))
        gm.save_model(model, path)
        loss = model.last_epoch_loss
    elif kind == "fm":
        model = gm.train_fm(train_view, config, arch)
        gm.save_model(model, path)
        loss = model.last_epoch_loss
    else:
        pred = sc.train_point_predictor(train_view, config, arch)
        sc.save_predictor(pred, path)
        loss = None
    msg = f"wrote {path}"
    if loss is not None:
        msg += f" (final epoch loss {loss:.5f})"
    print(msg)
    return 0


def _score_function(doc: dict, method: str, args, target_dim: int):
    """Build the scorer named in the config, loading models from disk."""
    from . import genmodels as gm
    from . import scoring as sc
    from .errors import InvalidArgumentError

    if method not in _MODEL_FOR_METHOD:
        raise InvalidArgumentError(f"unknown method {method!r}")
    model_path = doc.get("model_path")
    if not model_path:
        raise InvalidArgumentError("config needs 'model_path'")
    if _MODEL_FOR_METHOD[method] == "point":
        return sc.ScoreFunction(kind=method, predictor=sc.load_predictor(model_path)), None
    model = gm.load_model(model_path)
    if method == "pcp":
        seed = args.seed if args.seed is not None else int(doc.get("pcp_seed", 0))
        return sc.ScoreFunction(kind="pcp", model=model, K=int(doc.get("pcp_k", sc.PCP_DEFAULT_K)), sample_seed=seed), None
    if "bank_path" in doc:
        bank = sc.load_bank(doc["bank_path"])
    else:
        seed = args.seed if args.seed is not None else int(doc.get("bank_seed", 0))
        n_time = int(doc.get("n_time", 15))
        repeats = int(doc.get("repeats", 8))
        if method == "trace-fm":
            time_set = sc.fm_time_grid(n_time)
        else:
            time_set = sc.diffusion_time_set(model.schedule.T, n_time)
        bank = sc.build_bank(seed, time_set, repeats, target_dim)
    return sc.ScoreFunction(kind=method, model=model, bank=bank), bank


def _cmd_calibrate(args) -> int:
    from . import conformal as cf
    from . import scoring as sc
    from .errors import InvalidArgumentError

    doc = _load_config(args)
    method = doc.get("method")
    if not method:
        raise InvalidArgumentError("config needs 'method'")
    ds = _resolve_data(doc, 0)
    parts = _split_parts(doc, ds.n)
    sf, bank = _score_function(doc, method, args, ds.y.shape[1])
    scores = sf.score_batch(ds.x[parts.cal], ds.y[parts.cal])
    result = cf.calibrate(scores, float(doc.get("alpha", 0.1)))
    out = _out_dir(args)
    bank_hash = None
    if bank is not None:
        sc.save_bank(bank, out / "bank.json")
        bank_hash = sc.bank_hash(bank)
    cf.calibration_to_json(result, out / "calibration.json", score_kind=method, bank_hash=bank_hash)
    sc.save_scores_csv(scores, method, out / "cal_scores.csv")
    print(f"threshold {result.threshold:.6g} from {result.n_cal} calibration points")
    return 0


def _cmd_eval(args) -> int:
    from . import conformal as cf
    from . import experiments as ex
    from . import data as dt
    from . import regions as rg
    from .errors import InvalidArgumentError

    doc = _load_config(args)
    method = doc.get("method")
    cal_path = doc.get("calibration_path")
    if not method or not cal_path:
        raise InvalidArgumentError("config needs 'method' and 'calibration_path'")
    calib = cf.calibration_from_json(cal_path)
    threshold = calib["threshold"]
    if calib.get("score_kind") not in (None, method):
        raise InvalidArgumentError(
            f"calibration was made for {calib['score_kind']!r}, not {method!r}"
        )
    ds = _resolve_data(doc, 0)
    parts = _split_parts(doc, ds.n)
    sf, bank = _score_function(doc, method, args, ds.y.shape[1])
    if bank is not None and calib.get("bank_hash"):
        from . import scoring as sc

        if sc.bank_hash(bank) != calib["bank_hash"]:
            raise InvalidArgumentError("bank does not match the one used at calibration")
    test_x, test_y = ds.x[parts.test], ds.y[parts.test]
    scores = sf.score_batch(test_x, test_y)
    cov = cf.coverage_from_scores(scores, threshold)
    report = {"method": method, "coverage": cov, "n_test": int(test_x.shape[0])}
    n_vol = int(doc.get("volume_inputs", 0))
    if n_vol > 0:
        box = rg.bounding_box(ds.y[parts.cal], float(doc.get("box_pad", 0.1)))
        n_points = int(doc.get("volume_points", 4096))
        idx = ex._volume_input_indices(test_x.shape[0], n_vol)
        anchor_seed = int(doc.get("anchor_seed", 0))
        vols = [
            dt.volume_rescale(
                ex.region_volume(
                    sf, test_x[i], threshold, box, n_points,
                    anchors=ex.region_anchors(sf, test_x[i], seed=anchor_seed),
                ),
                ds.y_std,
            )
            for i in idx
        ]
        report["volume_mean"] = float(sum(vols) / len(vols))
        report["volume_inputs"] = int(idx.size)
        report["volume_points"] = n_points
    out = _out_dir(args) / "eval.json"
    out.write_text(json.dumps(report, sort_keys=True, indent=1))
    line = f"coverage {cov:.4f} on {report['n_test']} test points"
    if "volume_mean" in report:
        line += f"; mean region volume {report['volume_mean']:.6g}"
    print(line)
    return 0


def _cmd_ablate(args) -> int:
    from . import experiments as ex

    doc = _load_config(args)
    cfg = _experiment_config(doc, args)
    grid = doc.get("budget_grid")
    if grid is not None:
        grid = [tuple(int(v) for v in pair) for pair in grid]
    run_seed = args.seed if args.seed is not None else int(doc.get("run_seed", 0))
    report = ex.ablate_budget(cfg, grid, run_seed=run_seed)
    out = _out_dir(args)
    path = ex.emit_table(report.rows, out / f"{report.dataset}_ablation_{report.method}.csv")
    slope = ex.fitted_decay_slope(report)
    doc_out = {
        "dataset": report.dataset,
        "method": report.method,
        "n_banks": report.n_banks,
        "slope": slope,
        "rows": report.rows,
    }
    (out / f"{report.dataset}_ablation_{report.method}.json").write_text(
        json.dumps(doc_out, sort_keys=True, indent=1)
    )
    print(f"wrote {path}; fitted budget-decay slope {slope:.4f}")
    return 0


def _cmd_theory_check(args) -> int:
    from . import data as dt
    from . import experiments as ex

    doc = _load_config(args)
    out = _out_dir(args)
    m_grid = tuple(doc.get("m_grid", (2, 4, 8, 16, 32, 64)))
    disc_rows = []
    for mu in sorted(ex.MU_REGISTRY):
        disc_rows.extend(ex.discretization_check(mu, m_grid))
    ex.emit_table(disc_rows, out / "discretization.csv")

    stab_doc = doc.get("stability", {})
    base = {
        "dataset": {"noise_kind": "spiral", "regime": "L", "n": 600},
        "methods": ["trace-fm"],
        "epochs": 80,
        "hidden": 32,
        "blocks": 2,
    }
    base.update(stab_doc)
    stab_args = argparse.Namespace(seed=args.seed, out=args.out, full_scale=args.full_scale)
    cfg = _experiment_config(base, stab_args)
    stab_rows = ex.threshold_stability_check(
        cfg,
        B_grid=tuple(stab_doc.get("B_grid", (8, 16, 32, 64, 128, 256, 512))),
        run_seed=int(stab_doc.get("run_seed", 0)),
        n_banks=int(stab_doc.get("n_banks", 50)),
    )
    ex.emit_table(stab_rows, out / "threshold_stability.csv")

    bad = [r for r in disc_rows + stab_rows if not r["ok"]]
    for row in disc_rows:
        print(f"discretization {row['mu']:9s} m={row['m']:3d} err={row['error']:.3e} bound={row['bound']:.3e} {'ok' if row['ok'] else 'VIOLATED'}")
    for row in stab_rows:
        print(f"threshold B={row['B']:4d} err={row['mean_abs_err']:.4f} bound={row['bound']:.4f} {'ok' if row['ok'] else 'VIOLATED'}")
    if bad:
        print(f"{len(bad)} bound(s) violated", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    from . import experiments as ex

    doc = _load_config(args)
    cfg = _experiment_config(doc, args)
    report = ex.run_benchmark(cfg)
    paths = ex.emit_report(report, args.out)
    for method in report.methods:
        if method not in report.summary:
            continue
        s = report.summary[method]
        line = f"{method:13s} coverage {100 * s['coverage_mean']:.1f}% +- {100 * s['coverage_std']:.1f}%"
        if s["volume_mean"] == s["volume_mean"]:
            line += f"  volume {s['volume_mean']:.4g} +- {s['volume_std']:.4g}"
        print(line)
    if report.failed:
        print(f"excluded {len(report.failed)} failed seed(s): {[s for s, _ in report.failed]}")
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "theory-check": _cmd_theory_check,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    _apply_thread_env()
    args = build_parser().parse_args(argv)
    from .errors import InvalidArgumentError, NumericError, ParseError, SchemaError

    try:
        return _HANDLERS[args.command](args)
    except (InvalidArgumentError, SchemaError, ParseError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
