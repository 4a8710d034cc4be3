"""``labelset`` command-line interface.

Commands::

    labelset fit        fit an estimator (optionally on the fitting part of a split)
    labelset calibrate  compute thresholds, optionally completing them
    labelset predict    write prediction sets for a CSV
    labelset evaluate   coverage / ambiguity / co-occurrence report
    labelset oracle     Monte-Carlo runs on the built-in mixtures
    labelset rerun      repeat a run from its saved run_config.json

Exit codes: 0 success, 2 validation error, 3 data error, 4 artifact version error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts, calibration, completion, estimators, evaluation, oracle
from .core import CLASS, TOTAL, CoverageSpec, PredictionSet, ThresholdVector, membership, read_csv, split
from .errors import DataError, InvalidArgumentError, LabelSetError

log = logging.getLogger("labelset")

RUN_CONFIG = "run_config.json"
_PATH_KEYS = ("data", "model", "thresholds", "split", "predictions", "out")


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    def save(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / RUN_CONFIG).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if "command" not in doc:
            raise InvalidArgumentError(f"{path}: not a run config")
        return cls(doc["command"], doc.get("options", {}))


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidArgumentError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _coverage_spec(opts: dict, K: int) -> CoverageSpec:
    if opts.get("alpha") is not None:
        alphas = _floats(opts["alpha"])
    elif opts.get("coverage") is not None:
        alphas = [1.0 - c for c in _floats(opts["coverage"])]
    else:
        raise InvalidArgumentError("one of --alpha or --coverage is required")
    mode = TOTAL if opts.get("coverage_mode", CLASS) == TOTAL else CLASS
    if mode == TOTAL:
        if len(alphas) != 1:
            raise InvalidArgumentError("total coverage takes a single --alpha")
        return CoverageSpec.total(alphas[0])
    if len(alphas) not in (1, K):
        raise InvalidArgumentError(f"--alpha lists {len(alphas)} levels but there are {K} classes")
    spec = CoverageSpec.class_specific(alphas)
    spec.class_levels(K)
    return spec


def _load_data(opts: dict, class_names=None, class_count=None):
    if not opts.get("data"):
        raise InvalidArgumentError("--data is required")
    if not opts.get("label_col"):
        raise InvalidArgumentError("--label-col is required")
    return read_csv(opts["data"], opts["label_col"], class_names=class_names, class_count=class_count)


def _model_classes(model):
    data = getattr(model, "data", None)
    return (data.class_names if data is not None else None), model.class_count


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _out(opts: dict) -> Path:
    if not opts.get("out"):
        raise InvalidArgumentError("--out is required")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(opts: dict) -> dict:
    out = _out(opts)
    data = _load_data(opts)
    train, plan = data, None
    if opts.get("split_frac") is not None:
        plan = split(data, int(opts.get("seed", 0)), float(opts["split_frac"]))
        artifacts.save_split(plan, out / "split.json")
        train = data.subset(plan.fit_indices)
    kind = opts.get("estimator", "knn")
    if kind == "knn":
        model = estimators.fit_knn(train, int(opts.get("k", 10)))
    elif kind == "kernel":
        bw = opts.get("bandwidth", "auto")
        bw = "auto" if bw in (None, "auto") else _floats(bw)
        model = estimators.fit_kernel(train, bw, opts.get("kernel_mode", estimators.CLASS_CONDITIONAL),
                                      pooled=bool(opts.get("pooled", False)))
    elif kind == "logistic":
        model = estimators.fit_logistic(train, float(opts.get("lambda", 0.0)),
                                        int(opts.get("max_iter", 5000)), float(opts.get("tol", 1e-6)))
    else:
        raise InvalidArgumentError(f"unknown estimator {kind!r}")
    artifacts.save_model(model, out / "model.json")
    log.info("fitted %s on %d rows -> %s", kind, train.n, out / "model.json")
    return {"model": str(out / "model.json"), "rows": train.n}


def _plan_for(opts: dict, data):
    if opts.get("split"):
        return artifacts.load_split(opts["split"], data)
    if opts.get("split_frac") is not None:
        return split(data, int(opts.get("seed", 0)), float(opts["split_frac"]))
    return None


def cmd_calibrate(opts: dict) -> dict:
    out = _out(opts)
    model = artifacts.load_model(opts["model"])
    names, K = _model_classes(model)
    data = _load_data(opts, class_names=names, class_count=K)
    plan = _plan_for(opts, data)
    method = opts.get("method", calibration.CONFORMAL)
    spec = _coverage_spec(opts, K)
    t = calibration.calibrate(model, data, plan, spec, method)
    result = {"thresholds": str(out / "thresholds.json")}
    strategy = opts.get("complete", "none")
    if strategy == "accretive":
        if t.mode != CLASS:
            raise InvalidArgumentError("accretive completion needs class-specific coverage")
        rows = calibration.ambiguity_rows(data, plan, method)
        P = np.atleast_2d(model.predict_proba(data.features[rows]))
        t, trace = completion.accretive_complete(t, P, float(opts.get("epsilon", 0.01)))
        trace.write_csv(out / "trace.csv")
        result.update(trace=str(out / "trace.csv"), reason=trace.reason, iterations=trace.iterations)
    elif strategy == "total":
        if t.mode != TOTAL:
            raise InvalidArgumentError("total completion needs total coverage")
        t = t.replace([completion.total_coverage_complete(max(t.values[0], 0.0), K)], completion="total")
    elif strategy == "fill":
        t = t.replace(t.values, completion="fill")
    elif strategy != "none":
        raise InvalidArgumentError(f"unknown completion {strategy!r}")
    artifacts.save_thresholds(t, out / "thresholds.json")
    result["values"] = ["INCLUDE_ALL" if v == float("-inf") else v for v in t.values]
    return result


def cmd_predict(opts: dict) -> dict:
    out = _out(opts)
    model = artifacts.load_model(opts["model"])
    t = artifacts.load_thresholds(opts["thresholds"])
    names, K = _model_classes(model)
    if opts.get("label_col"):
        X = _load_data(opts, class_names=names, class_count=K).features
    else:
        X = _read_features(opts["data"])
    P = np.atleast_2d(model.predict_proba(X))
    fill = opts.get("complete") == "fill" or t.metadata.get("completion") == "fill"
    M = completion.fill_membership(P, t) if fill else membership(P, t)
    sets = [PredictionSet.from_mask(row) for row in M]
    artifacts.write_predictions(out / "predictions.csv", sets)
    return {"predictions": str(out / "predictions.csv"), "rows": len(sets),
            "ambiguity": float(M.sum() / max(len(sets), 1))}


def _read_features(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                raise DataError(f"{path}: non-numeric value at line {lineno}") from None
    return np.array(rows, dtype=float)


def cmd_evaluate(opts: dict) -> dict:
    out = _out(opts)
    sets = artifacts.read_predictions(opts["predictions"])
    data = _load_data(opts)
    K = data.class_count
    report = evaluation.evaluate(sets, data.labels, K, data.class_names)
    report.write_csv(out / "metrics.csv", out / "cooccurrence.csv")
    text = report.to_text()
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return {"ambiguity": report.ambiguity, "total_coverage": report.total_coverage}


def cmd_oracle(opts: dict) -> dict:
    out = _out(opts)
    spec = oracle.preset(opts.get("preset", "EXAMPLE3"))
    n_mc, seed = int(opts.get("n_mc", 200_000)), int(opts.get("seed", 0))
    K = spec.class_count
    summary: dict = {"preset": spec.name, "n_mc": n_mc, "seed": seed}
    if opts.get("curve_grid"):
        curve = oracle.coverage_curve(spec, _floats(opts["curve_grid"]), n_mc, seed)
        oracle.write_curve_csv(out / "curve.csv", curve)
        summary["curve"] = str(out / "curve.csv")
    if opts.get("alpha") is not None or opts.get("coverage") is not None:
        cov = _coverage_spec(opts, K)
        if cov.mode == TOTAL:
            t = ThresholdVector.total(oracle.oracle_total_threshold(spec, cov.levels[0], n_mc, seed),
                                      method="oracle", alpha=list(cov.levels))
        else:
            t = oracle.oracle_class_thresholds(spec, cov.class_levels(K), n_mc, seed)
        summary["initial_thresholds"] = list(t.values)
        strategy = opts.get("complete", "none")
        if strategy == "accretive":
            if t.mode != CLASS:
                raise InvalidArgumentError("accretive completion needs class-specific coverage")
            P = oracle.marginal_scores(spec, n_mc, seed)
            t, trace = completion.accretive_complete(t, P, float(opts.get("epsilon", 0.01)))
            trace.write_csv(out / "trace.csv")
            summary.update(trace=str(out / "trace.csv"), iterations=trace.iterations, reason=trace.reason)
        elif strategy == "total":
            if t.mode != TOTAL:
                raise InvalidArgumentError("total completion needs total coverage")
            t = t.replace([completion.total_coverage_complete(t.values[0], K)], completion="total")
        elif strategy not in ("none", "fill"):
            raise InvalidArgumentError(f"unknown completion {strategy!r}")
        artifacts.save_thresholds(t, out / "thresholds.json")
        t_full = t.as_array(K)
        summary["thresholds"] = t_full.tolist()
        summary["ambiguity"] = oracle.oracle_ambiguity(spec, t_full, n_mc, seed)
        summary["null_probability"] = oracle.oracle_null_probability(spec, t_full, n_mc, seed)
        box = _floats(opts["box"]) if opts.get("box") else _default_box(spec)
        res = int(opts.get("resolution", 200))
        raster = oracle.region_raster(spec, t, box, res if spec.dim == 1 else (res, res))
        raster.write_csv(out / "raster.csv")
        summary["raster"] = str(out / "raster.csv")
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k in ("thresholds", "ambiguity",
                                                                 "null_probability", "iterations")}))
    return summary


def _default_box(spec) -> list[float]:
    lo = spec.means.min(axis=0) - 4 * np.sqrt(spec.covariances.diagonal(axis1=1, axis2=2).max(axis=0))
    hi = spec.means.max(axis=0) + 4 * np.sqrt(spec.covariances.diagonal(axis1=1, axis2=2).max(axis=0))
    return [v for pair in zip(lo, hi) for v in pair]


COMMANDS = {
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="labelset", description="Set-valued classification with coverage control.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", help="CSV with a header row")
            sp.add_argument("--label-col", dest="label_col")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)

    def coverage(sp):
        sp.add_argument("--coverage-mode", dest="coverage_mode", choices=[TOTAL, CLASS], default=CLASS)
        sp.add_argument("--alpha", help="error level, or comma list with one per class")
        sp.add_argument("--coverage", help="target coverage 1-alpha (alternative to --alpha)")
        sp.add_argument("--complete", choices=["none", "fill", "accretive", "total"], default="none")
        sp.add_argument("--epsilon", type=float, default=0.01)

    f = sub.add_parser("fit", help="fit a posterior estimator")
    common(f)
    f.add_argument("--estimator", choices=["knn", "kernel", "logistic"], default="knn")
    f.add_argument("--k", type=int, default=10)
    f.add_argument("--bandwidth", default="auto", help="'auto' (Silverman) or comma list per dimension")
    f.add_argument("--kernel-mode", dest="kernel_mode", choices=[estimators.REGRESSION, estimators.CLASS_CONDITIONAL],
                   default=estimators.CLASS_CONDITIONAL)
    f.add_argument("--pooled", action="store_true", help="one pooled bandwidth for all classes")
    f.add_argument("--lambda", dest="lambda", type=float, default=0.0)
    f.add_argument("--max-iter", dest="max_iter", type=int, default=5000)
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--split-frac", dest="split_frac", type=float)

    c = sub.add_parser("calibrate", help="compute coverage thresholds")
    common(c)
    c.add_argument("--model", required=True)
    c.add_argument("--method", choices=[calibration.PLUGIN, calibration.CONFORMAL], default=calibration.CONFORMAL)
    c.add_argument("--split", help="split.json written by fit")
    c.add_argument("--split-frac", dest="split_frac", type=float)
    coverage(c)

    pr = sub.add_parser("predict", help="write prediction sets")
    common(pr)
    pr.add_argument("--model", required=True)
    pr.add_argument("--thresholds", required=True)
    pr.add_argument("--complete", choices=["none", "fill"], default="none")

    e = sub.add_parser("evaluate", help="evaluate prediction sets against labels")
    common(e)
    e.add_argument("--predictions", required=True)

    o = sub.add_parser("oracle", help="Monte-Carlo oracle runs on a built-in mixture")
    o.add_argument("preset", help="EXAMPLE1 or EXAMPLE3")
    common(o, data=False)
    coverage(o)
    o.add_argument("--n-mc", dest="n_mc", type=int, default=200_000)
    o.add_argument("--resolution", type=int, default=200)
    o.add_argument("--box", help="xmin,xmax[,ymin,ymax]")
    o.add_argument("--curve-grid", dest="curve_grid", help="comma list of total coverages")

    r = sub.add_parser("rerun", help="repeat a run from its run_config.json")
    r.add_argument("config")
    r.add_argument("--out", help="override the output directory")
    return p


def run(config: RunConfig) -> dict:
    try:
        fn = COMMANDS[config.command]
    except KeyError:
        raise InvalidArgumentError(f"unknown command {config.command!r}") from None
    result = fn(config.options)
    config.save(Path(config.options["out"]))
    return result


def _resolve(opts: dict) -> dict:
    opts = dict(opts)
    for k in _PATH_KEYS:
        if opts.get(k):
            opts[k] = str(Path(opts[k]).resolve())
    return opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            config = RunConfig.load(args.config)
            if args.out:
                config.options["out"] = str(Path(args.out).resolve())
        else:
            opts = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
            if args.command == "oracle":
                opts["preset"] = args.preset.upper()
            config = RunConfig(args.command, _resolve(opts))
        run(config)
    except LabelSetError as exc:
        print(f"labelset: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"labelset: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
