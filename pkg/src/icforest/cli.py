"""``icforest`` command-line interface.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
The manifest holds the command, its resolved configuration, the seed and
sha256 fingerprints of every input; ``icforest rerun manifest.json --out D``
reproduces the outputs byte for byte.  Exit codes: 1 usage, 2 data,
3 numeric.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import resolve_threads
from .bench import DEFAULT_REPS, DEFAULT_TREES, METHODS, exam_count, run_bench, sign_test
from .cforest import (Forest, ForestConfig, NoOOBError, _fit_weighted, _weights_from_leaves,
                      fit_forest, oob_weights)
from .core import DataError, Schema, file_sha256, format_time, load_csv, write_csv
from .evaluate import MethodConfig, MetricReport, loocv, median_time
from .simgen import FAMILIES, GAPS, SETUPS, ScenarioSpec, generate, scenario_manifest
from .tuning import auto_tune, rule_15_default_6, tune_mtry

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MANIFEST = "manifest.json"
# keys never recorded in a manifest: they do not affect outputs
VOLATILE = ("out", "threads", "func", "verbose")

log = logging.getLogger("icforest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _input(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return {"path": str(p.resolve()), "sha256": file_sha256(p)}


def _schema_path(args) -> str:
    if args.schema:
        return args.schema
    side = Path(args.data).with_suffix(".schema.json")
    if side.is_file():
        return str(side)
    raise UsageError(f"no schema: pass --schema or provide {side.name} next to the data")


def _load(args, inputs: dict):
    inputs["data"] = _input(args.data)
    spath = _schema_path(args)
    inputs["schema"] = _input(spath)
    schema = Schema.load(spath)
    return load_csv(args.data, schema)


def _forest_config(args, alpha: float | None = None) -> ForestConfig:
    return ForestConfig(n_trees=args.trees, mtry=args.mtry, minsplit=args.minsplit,
                        minprob=args.minprob, minbucket=args.minbucket,
                        maxdepth=args.maxdepth, seed=args.seed,
                        alpha=args.alpha if alpha is None else alpha)


def _config_of(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in VOLATILE or k == "command":
            continue
        if k in ("data", "schema", "model") and v is not None:
            v = str(Path(v).resolve())
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


def _finish(args, out: Path, inputs: dict, results: dict | None = None):
    doc = {"command": args.command, "config": _config_of(args), "seed": args.seed,
           "inputs": inputs, "version": __version__}
    if results:
        doc["results"] = results
    _write(out / MANIFEST, _dump(doc))


# ---------------------------------------------------------------- commands

def cmd_fit(args, out: Path):
    inputs: dict = {}
    data = _load(args, inputs)
    template = _forest_config(args)
    results = {}
    if args.auto_tune:
        res = auto_tune(data, template, args.step_factor, resolve_threads(args.threads))
        forest = res.forest
        minsplit, minprob, minbucket = rule_15_default_6(data.n)
        results = {"mtry": res.selected, "minsplit": minsplit, "minprob": minprob,
                   "minbucket": minbucket, "tuning": res.to_dict()}
    else:
        forest = fit_forest(data, template)
        results = {"mtry": forest.config.resolved_mtry(data.m)}
    _write(out / "model.json", forest.dumps())
    _finish(args, out, inputs, results)


def cmd_tune(args, out: Path):
    inputs: dict = {}
    data = _load(args, inputs)
    template = _forest_config(args)
    threads = resolve_threads(args.threads)
    if args.rule:
        res = auto_tune(data, template, args.step_factor, threads)
    else:
        res = tune_mtry(data, template, args.step_factor, threads)
    doc = res.to_dict()
    doc["config"] = res.forest.config.to_dict()
    _write(out / "tune.json", _dump(doc))
    _write(out / "model.json", res.forest.dumps())
    _finish(args, out, inputs, {"mtry": res.selected})


def _curve_line(i: int, curve, med) -> str:
    rec = {"row": i + 1, "curve": curve.to_dict(), "median": med}
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def cmd_predict(args, out: Path):
    inputs = {"model": _input(args.model)}
    with open(args.model) as fh:
        try:
            forest = Forest.loads(fh.read())
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"unreadable model file: {exc}") from None
    data = _load(args, inputs)
    if data.schema.fingerprint() != forest.fingerprint:
        raise DataError("schema fingerprint does not match the model")
    if args.oob:
        if data.n != forest.n or not (np.array_equal(data.left, forest.left)
                                      and np.array_equal(data.right, forest.right)):
            raise DataError("--oob needs the training data the model was fitted on")
        V, used = oob_weights(forest)
        if (used == 0).any():
            raise NoOOBError(f"no OOB trees for row {int(np.flatnonzero(used == 0)[0]) + 1}")
        keys = range(data.n)
    else:
        leaves = np.stack([t.route_matrix(data.X) for t in forest.trees])
        keys = [tuple(col) for col in leaves.T]
    cache: dict = {}
    with open(out / "curves.json", "w") as cj, open(out / "medians.csv", "w") as mc:
        cj.write("[\n")
        mc.write("row,median,defined\n")
        for i in range(data.n):
            key = keys[i]
            if key not in cache:
                if args.oob:
                    v = V[i]
                else:
                    v = _row_weights(forest, leaves[:, i])
                curve = _fit_weighted(forest, v)
                cache[key] = (curve, median_time(curve))
            curve, med = cache[key]
            cj.write(_curve_line(i, curve, med) + (",\n" if i < data.n - 1 else "\n"))
            mc.write(f"{i + 1},{'' if med is None else format_time(med)},"
                     f"{int(med is not None)}\n")
        cj.write("]\n")
    _finish(args, out, inputs, {"rows": data.n})


def _row_weights(forest: Forest, leaf_ids) -> np.ndarray:
    V, used = _weights_from_leaves(np.asarray(leaf_ids)[:, None], forest.leaves)
    if used[0] == 0:
        raise DataError("no tree provides neighbours for a query row")
    return V[0] / used[0]


def cmd_simulate(args, out: Path):
    sc = ScenarioSpec(args.setup, args.family, args.gap, args.rc, args.n, args.seed)
    k = exam_count(sc)
    data = generate(sc, k=k, oracle=args.exact)
    write_csv(data, out / "data.csv")
    _write(out / "data.schema.json", data.schema.dumps())
    lines = ["T,true_curve_id"]
    for t, cid in zip(data.truth.T, data.truth.curve_ids):
        lines.append(f'{format_time(t)},"{cid}"')
    _write(out / "truth.csv", "\n".join(lines) + "\n")
    _write(out / "scenario.json", scenario_manifest(sc, data, k))
    _finish(args, out, {}, {"exam_count": k, "rc_observed": float(np.isinf(data.right).mean())})


def _scenarios(args) -> list[ScenarioSpec]:
    if args.scenarios:
        inp = Path(args.scenarios)
        with open(inp) as fh:
            try:
                docs = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"scenario file: {exc}") from None
        if isinstance(docs, dict):
            docs = docs.get("scenarios", [docs])
        return [ScenarioSpec.from_dict({**d, "seed": d.get("seed", args.seed)}) for d in docs]
    if args.grid:
        combos = itertools.product(SETUPS, FAMILIES, tuple(GAPS), (0.0, 0.2, 0.4))
    else:
        combos = itertools.product(args.setup, args.family, args.gap, args.rc)
    return [ScenarioSpec(s, f, g, r, args.n, args.seed) for s, f, g, r in combos]


def cmd_bench(args, out: Path):
    inputs = {"scenarios": _input(args.scenarios)} if args.scenarios else {}
    scenarios = _scenarios(args)
    report = run_bench(scenarios, reps=args.reps, n_trees=args.trees,
                       methods=args.methods, oracle=not args.no_oracle,
                       threads=resolve_threads(args.threads), step_factor=args.step_factor)
    _write(out / "report.csv", report.to_csv())
    _write(out / "summary.json", report.summary_json())
    _finish(args, out, inputs, {"scenarios": [s.name for s in scenarios],
                                "failures": len(report.failures)})


def cmd_report(args, out: Path):
    inputs = {"report": _input(args.report)}
    with open(args.report) as fh:
        report = MetricReport.from_csv(fh.read())
    summary = report.summary()
    comparisons = []
    scen = sorted({r[0] for r in report.rows})
    methods = sorted({r[1] for r in report.rows})
    for s in scen:
        for metric in ("l2", "l2_oracle"):
            base = {r[2]: r[4] for r in report.rows
                    if r[0] == s and r[1] == "ctree" and r[3] == metric and r[4] is not None}
            for m in methods:
                if m == "ctree" or not base:
                    continue
                other = {r[2]: r[4] for r in report.rows
                         if r[0] == s and r[1] == m and r[3] == metric and r[4] is not None}
                reps = sorted(set(base) & set(other))
                if not reps:
                    continue
                a = np.array([other[r] for r in reps])
                b = np.array([base[r] for r in reps])
                comparisons.append({"scenario": s, "metric": metric, "method": m,
                                    "baseline": "ctree", "pairs": len(reps),
                                    "median_ratio": float(np.median(a) / np.median(b))
                                    if np.median(b) > 0 else None,
                                    "sign_test_p": sign_test(a, b)})
    summary["comparisons"] = comparisons
    _write(out / "summary.json", _dump(summary))
    _finish(args, out, inputs)


def cmd_loocv(args, out: Path):
    inputs: dict = {}
    data = _load(args, inputs)
    # a standalone tree stops on significance, a forest does not
    alpha = args.alpha if args.alpha is not None else (0.05 if args.method == "ctree" else 1.0)
    method = MethodConfig(args.method, _forest_config(args, alpha), auto_tune=args.auto_tune,
                          step_factor=args.step_factor, alpha=alpha)
    report = loocv(data, method, threads=resolve_threads(args.threads))
    _write(out / "loocv.csv", report.to_csv())
    _write(out / "summary.json", report.summary_json())
    lines = ["row,left,right,median"]
    for i, med in enumerate(report.medians):
        lines.append(f"{i + 1},{format_time(data.left[i])},{format_time(data.right[i])},"
                     f"{'' if med is None else format_time(med)}")
    _write(out / "medians.csv", "\n".join(lines) + "\n")
    _finish(args, out, inputs, {"failed_folds": len(report.failures)})


def cmd_rerun(args, out: Path):
    with open(args.manifest) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest: {exc}") from None
    for name, rec in doc.get("inputs", {}).items():
        if not Path(rec["path"]).is_file() or file_sha256(rec["path"]) != rec["sha256"]:
            raise DataError(f"input {name!r} changed or missing: {rec['path']}")
    if doc.get("version") != __version__:
        log.warning("manifest written by version %s, running %s", doc.get("version"),
                    __version__)
    ns = argparse.Namespace(**doc["config"], command=doc["command"], out=str(out),
                            threads=args.threads, verbose=args.verbose)
    COMMANDS[doc["command"]](ns, out)


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "predict": cmd_predict,
            "simulate": cmd_simulate, "bench": cmd_bench, "report": cmd_report,
            "loocv": cmd_loocv}


# ------------------------------------------------------------------ parser

def _common(p, out_default: str):
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default $ICFOREST_THREADS or 1)")


def _data_args(p):
    p.add_argument("data", help="CSV with left,right and covariate columns")
    p.add_argument("--schema", default=None,
                   help="schema JSON (default: <data>.schema.json next to the data)")


def _forest_args(p, trees: int = 100, alpha: float | None = 1.0):
    p.add_argument("--trees", type=int, default=trees)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--minsplit", type=float, default=20)
    p.add_argument("--minbucket", type=float, default=7)
    p.add_argument("--minprob", type=float, default=0.01)
    p.add_argument("--maxdepth", type=int, default=None)
    p.add_argument("--alpha", type=float, default=alpha)
    p.add_argument("--step-factor", type=float, default=1.5)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="icforest", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"icforest {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a forest and save model.json")
    _data_args(p)
    _forest_args(p)
    p.add_argument("--auto-tune", action="store_true",
                   help="apply the 15%%/0.01/6%% split rule, then tune mtry out-of-bag")
    _common(p, "fit-out")

    p = sub.add_parser("tune", help="out-of-bag mtry tuning")
    _data_args(p)
    _forest_args(p)
    p.add_argument("--rule", action="store_true",
                   help="apply the 15%%/0.01/6%% split rule before tuning")
    _common(p, "tune-out")

    p = sub.add_parser("predict", help="predict survival curves and medians")
    p.add_argument("model")
    _data_args(p)
    p.add_argument("--oob", action="store_true", help="out-of-bag predictions for training rows")
    _common(p, "predict-out")

    p = sub.add_parser("simulate", help="simulate one benchmark dataset")
    p.add_argument("--setup", choices=SETUPS, default="tree")
    p.add_argument("--family", choices=FAMILIES, default="exponential")
    p.add_argument("--gap", choices=tuple(GAPS), default="G1")
    p.add_argument("--rc", type=float, default=0.0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--exact", action="store_true", help="write exact event times")
    _common(p, "sim-out")

    p = sub.add_parser("bench", help="tree vs forest benchmark on simulated data")
    p.add_argument("--scenarios", default=None, help="JSON list of scenario objects")
    p.add_argument("--grid", action="store_true", help="every setup/family/gap/rc cell")
    p.add_argument("--setup", nargs="+", choices=SETUPS, default=["tree"])
    p.add_argument("--family", nargs="+", choices=FAMILIES, default=["exponential"])
    p.add_argument("--gap", nargs="+", choices=tuple(GAPS), default=["G1"])
    p.add_argument("--rc", nargs="+", type=float, default=[0.0])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--reps", type=int, default=DEFAULT_REPS)
    p.add_argument("--trees", type=int, default=DEFAULT_TREES)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--no-oracle", action="store_true", help="skip exact-time refits")
    p.add_argument("--step-factor", type=float, default=1.5)
    _common(p, "bench-out")

    p = sub.add_parser("report", help="summarize a bench report.csv")
    p.add_argument("report")
    _common(p, "report-out")

    p = sub.add_parser("loocv", help="leave-one-out outside-interval metrics")
    _data_args(p)
    p.add_argument("--method", choices=("ctree", "cforest"), default="cforest")
    _forest_args(p, alpha=None)
    p.add_argument("--auto-tune", action="store_true")
    _common(p, "loocv-out")

    p = sub.add_parser("rerun", help="repeat a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    return ap


def _check(args):
    for k in ("trees", "reps", "n"):
        v = getattr(args, k, None)
        if v is not None and v < 1:
            raise UsageError(f"--{k} must be >= 1")
    if getattr(args, "grid", False) and getattr(args, "scenarios", None):
        raise UsageError("--grid and --scenarios are exclusive")


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        _check(args)
        resolve_threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = cmd_rerun if args.command == "rerun" else COMMANDS[args.command]
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            handler(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"icforest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NoOOBError, FileNotFoundError, KeyError) as exc:
        print(f"icforest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"icforest: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"icforest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
