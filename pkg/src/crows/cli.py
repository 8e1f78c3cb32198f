"""Command-line entry point: ``crows <subcommand> ...``.

Every file written gets a ``<file>.manifest.json`` next to it recording the
arguments, seed, package version, input/output digests and wall-clock time.
``crows replay <manifest>`` re-runs a manifest and checks the outputs match.

Exit codes: 0 success, 1 replay mismatch, 2 parameter error, 3 data-format
error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from crows import __version__
from crows.analyze import BIC_FORMS, AnalysisError, analyze, profile_csv
from crows.baselines import (
    BaselineError,
    ocow_analyze,
    ocow_lenth_analyze,
    poolhits_decode,
    std_design,
)
from crows.bounds import BoundError, certify, full_row_bound
from crows.construct import (
    ConstructConfig,
    ParameterError,
    constraint_sweep,
    construct,
    parse_c_list,
    sweep_csv,
)
from crows.design import (
    DataFormatError,
    InvalidDesignError,
    design_to_csv,
    pool_sheet,
    read_compound_map,
    read_design,
    ue_s2,
    ue_s2_doubled,
)
from crows.sim import Interaction, SimulationError, StudyConfig, StudyReport, preset_designs, run_study

PARAM_ERRORS = (ParameterError, BoundError, BaselineError, SimulationError, AnalysisError, InvalidDesignError)


class UsageError(Exception):
    pass


# --- file helpers -----------------------------------------------------------

def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_column_csv(path, value_name: str) -> tuple[np.ndarray, list[str]]:
    """Read a ``well,<value>`` CSV with 1-based wells 1..n in any order."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or [h.strip().lower() for h in rows[0][:2]] != ["well", value_name]:
        raise DataFormatError(f"{path}: header must be 'well,{value_name}'")
    wells, values = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) < 2:
            raise DataFormatError(f"{path}:{lineno}: expected two fields")
        try:
            wells.append(int(r[0]))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: bad well index {r[0]!r}") from None
        values.append(r[1].strip())
    if sorted(wells) != list(range(1, len(wells) + 1)):
        raise DataFormatError(f"{path}: wells must be exactly 1..{len(wells)}")
    order = np.argsort(wells)
    return order, [values[i] for i in order]


def read_response(path) -> np.ndarray:
    _, values = _read_column_csv(path, "response")
    try:
        y = np.array([float(v) for v in values])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric response ({exc})") from None
    if not np.isfinite(y).all():
        raise DataFormatError(f"{path}: responses must be finite")
    return y


def read_labels(path) -> np.ndarray:
    _, values = _read_column_csv(path, "label")
    truthy = {"1": True, "true": True, "0": False, "false": False}
    try:
        return np.array([truthy[v.lower()] for v in values], dtype=bool)
    except KeyError as exc:
        raise DataFormatError(f"{path}: labels must be 0/1 or true/false, got {exc.args[0]!r}") from None


class Run:
    """Collects inputs and outputs of one invocation for its manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def input(self, path):
        self.inputs[str(path)] = _digest(path)
        return path

    def write(self, path, text: str) -> None:
        Path(path).write_text(text)
        self.outputs.append(str(path))

    def finish(self) -> None:
        wall = time.perf_counter() - self.t0
        params = {k: v for k, v in vars(self.args).items() if k != "func"}
        for out in self.outputs:
            manifest = {
                "subcommand": self.args.command,
                "argv": self.argv,
                "cwd": os.getcwd(),
                "params": params,
                "seed": params.get("seed"),
                "version": __version__,
                "inputs": self.inputs,
                "outputs": {o: _digest(o) for o in self.outputs},
                "wall_clock_s": wall,
            }
            Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


# --- subcommands ------------------------------------------------------------

def cmd_construct(args, run: Run) -> None:
    cfg = ConstructConfig(args.n, args.k, args.c, args.starts, args.seed, args.max_passes)
    res = construct(cfg, args.threads)
    run.write(args.out, design_to_csv(res.design))
    if args.pool_sheet:
        labels = read_compound_map(run.input(args.map)) if args.map else None
        run.write(args.pool_sheet, pool_sheet(res.design, labels))
    if args.log:
        run.write(args.log, res.log_csv())
    payload = {"Q": res.state.Q, "ue_s2": ue_s2(res.state), "ue_s2_doubled": ue_s2_doubled(res.state),
               "best_start": res.best_start}
    _emit(args, payload, f"Q={payload['Q']} ue_s2={payload['ue_s2']:.6g} best_start={res.best_start}")


def cmd_sweep(args, run: Run) -> None:
    rows = constraint_sweep(args.n, args.k, parse_c_list(args.c_list), args.starts, args.seed, args.threads,
                            args.max_passes, carry=not args.no_carry)
    text = sweep_csv(rows)
    run.write(args.out, text)
    _emit(args, {"rows": len(rows)}, f"{len(rows)} constraint values written to {args.out}")


def cmd_bound(args, run: Run) -> None:
    rep = full_row_bound(args.n, args.k, args.c)
    d = rep.as_dict()
    _emit(args, d, "\n".join(f"{k}: {v}" for k, v in d.items()))


def cmd_certify(args, run: Run) -> None:
    design = read_design(run.input(args.design), args.c)
    d = certify(design).as_dict()
    _emit(args, d, "\n".join(f"{k}: {v}" for k, v in d.items()))


def cmd_analyze(args, run: Run) -> None:
    design = read_design(run.input(args.design), args.c)
    y = read_response(run.input(args.response))
    if y.size != design.n:
        raise DataFormatError(f"response has {y.size} wells, design has {design.n}")
    res = analyze(design, y, args.sigma, args.direction, coding=args.coding, bic_form=args.bic)
    if args.profile_out:
        run.write(args.profile_out, profile_csv(res))
    if args.out:
        lines = ["compound,estimate"] + [f"{j},{res.estimates[j]!r}" for j in res.hits]
        run.write(args.out, "\n".join(lines) + "\n")
    _emit(args, res.as_dict(), "hits: " + (" ".join(str(j) for j in res.hits) or "(none)"))


def cmd_std(args, run: Run) -> None:
    std = std_design(args.k, args.q, args.a, args.gamma, args.c)
    run.write(args.out, design_to_csv(std.to_design()))
    payload = {"n": std.n, "k": std.k, "q": std.q, "a": std.a, "gamma": std.gamma,
               "max_pool": int(std.pool_sizes().max())}
    _emit(args, payload, " ".join(f"{k}={v}" for k, v in payload.items()))


def cmd_decode(args, run: Run) -> None:
    design = read_design(run.input(args.design))
    labels = read_labels(run.input(args.labels))
    if labels.size != design.n:
        raise DataFormatError(f"labels cover {labels.size} wells, design has {design.n}")
    res = poolhits_decode((design.entries == 1).astype(np.int64), labels, args.E)
    if args.out:
        lines = ["compound,status"] + [f"{i},{s}" for i, s in enumerate(res.status, start=1)]
        run.write(args.out, "\n".join(lines) + "\n")
    payload = {"hits": list(res.hits), "inconclusive": list(res.inconclusive)}
    _emit(args, payload, "hits: " + (" ".join(str(j) for j in res.hits) or "(none)"))


def cmd_ocow(args, run: Run) -> None:
    y = read_response(run.input(args.response))
    if args.lenth:
        hits = ocow_lenth_analyze(y, args.mu, args.direction, args.level)
    else:
        if args.sigma is None:
            raise UsageError("--sigma is required unless --lenth is given")
        hits = ocow_analyze(y, args.mu, args.sigma, args.direction, args.level)
    if args.out:
        run.write(args.out, "compound\n" + "".join(f"{j}\n" for j in hits))
    _emit(args, {"hits": list(hits)}, "hits: " + (" ".join(str(j) for j in hits) or "(none)"))


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def cmd_simulate(args, run: Run) -> None:
    interactions = [None if t.strip() == "none" else Interaction.parse(t.strip())
                    for t in args.interactions.split(",")]
    designs = preset_designs(args.preset)
    report = StudyReport()
    for inter in interactions:
        cfg = StudyConfig(designs, tuple(m.strip() for m in args.methods.split(",")), _float_list(args.D),
                          args.a, args.reps, args.seed, inter, "pilot" if args.pilot else "known",
                          args.mu, args.sigma, args.direction, args.starts)
        report.rows.extend(run_study(cfg, args.threads).rows)
    run.write(args.out, report.to_csv())
    _emit(args, {"rows": len(report.rows)}, f"{len(report.rows)} study rows written to {args.out}")


def cmd_replay(args, run: Run) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        argv, cwd, expected = manifest["argv"], manifest["cwd"], manifest["outputs"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"unreadable manifest {args.manifest}: {exc}") from None
    if args.threads_override is not None:
        argv = argv + ["--threads", str(args.threads_override)]
    with _chdir(cwd):
        for path, digest in manifest.get("inputs", {}).items():
            if not Path(path).exists() or _digest(path) != digest:
                raise DataFormatError(f"input {path} is missing or changed since the manifest was written")
        code = main(argv)
        if code:
            return code
        bad = [p for p, d in expected.items() if _digest(p) != d]
    for p in expected:
        print(f"{'MISMATCH' if p in bad else 'ok'} {p}")
    return 1 if bad else 0


@contextlib.contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# --- parser -----------------------------------------------------------------

def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CROWS_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads (default: $CROWS_THREADS or 1); results do not depend on it")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON")

    p = argparse.ArgumentParser(prog="crows", description="Row-constrained supersaturated designs for pooled screens.")
    p.add_argument("--version", action="version", version=f"crows {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("construct", cmd_construct, "build a design by multi-start coordinate exchange")
    sp.add_argument("--n", type=int, required=True, help="wells")
    sp.add_argument("--k", type=int, required=True, help="compounds")
    sp.add_argument("--c", type=int, required=True, help="max compounds per well")
    sp.add_argument("--starts", type=int, default=100)
    sp.add_argument("--max-passes", type=int, default=10_000)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pool-sheet", help="write a well -> compounds sheet")
    sp.add_argument("--map", help="index,label CSV naming the compounds in the pool sheet")
    sp.add_argument("--log", help="per-start CSV log")

    sp = add("sweep", cmd_sweep, "construct designs over a range of row constraints")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--c-list", required=True, help='e.g. "2..144" or "2,5,10"')
    sp.add_argument("--starts", type=int, default=100)
    sp.add_argument("--max-passes", type=int, default=10_000)
    sp.add_argument("--no-carry", action="store_true", help="do not reuse the previous c's best design as a start")
    sp.add_argument("--out", required=True)

    sp = add("bound", cmd_bound, "lower bound on Q and UE(s^2) for full rows")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--c", type=int, required=True)

    sp = add("certify", cmd_certify, "compare a design with its lower bound")
    sp.add_argument("--design", required=True)
    sp.add_argument("--c", type=int, help="row constraint (default: fullest row)")

    sp = add("analyze", cmd_analyze, "lasso screen of a pooled experiment")
    sp.add_argument("--design", required=True)
    sp.add_argument("--response", required=True, help="well,response CSV")
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--direction", choices=("positive", "negative"), default="positive")
    sp.add_argument("--c", type=int)
    sp.add_argument("--coding", choices=("original", "scaled"), default="original")
    sp.add_argument("--bic", choices=BIC_FORMS, default="known-sigma")
    sp.add_argument("--profile-out", help="per-lambda coefficient profile CSV")
    sp.add_argument("--out", help="hits CSV")

    sp = add("std", cmd_std, "shifted transversal design")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--a", type=int, required=True)
    sp.add_argument("--gamma", type=int, required=True)
    sp.add_argument("--c", type=int, help="reject designs with a pool larger than this")
    sp.add_argument("--out", required=True)

    sp = add("poolhits-decode", cmd_decode, "decode binary well labels of a pooled design")
    sp.add_argument("--design", required=True)
    sp.add_argument("--labels", required=True, help="well,label CSV with 0/1 labels")
    sp.add_argument("--E", type=int, required=True, help="tolerated errors")
    sp.add_argument("--out", help="per-compound status CSV")

    sp = add("ocow", cmd_ocow, "one-compound-one-well thresholding")
    sp.add_argument("--response", required=True)
    sp.add_argument("--mu", type=float, required=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--lenth", action="store_true", help="estimate the scale with Lenth's PSE")
    sp.add_argument("--direction", choices=("positive", "negative"), default="positive")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--out")

    sp = add("simulate", cmd_simulate, "TPR/FPR comparison study")
    sp.add_argument("--preset", choices=("table1", "desk"), default="desk")
    sp.add_argument("--methods", default="crows,poolhits,ocow")
    sp.add_argument("--D", default="0.75,1,1.5,2,2.25,3,4")
    sp.add_argument("--a", type=int, default=1, help="active compounds per screen")
    sp.add_argument("--reps", type=int, default=1000)
    sp.add_argument("--starts", type=int, default=100, help="starts for each CRowS design")
    sp.add_argument("--interactions", default="none", help="comma list of none or heredity-sign, e.g. strong-synergistic")
    sp.add_argument("--pilot", action="store_true", help="estimate mu and sigma from a 12-well pilot")
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--direction", choices=("positive", "negative"), default="positive")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    sp.add_argument("manifest")
    sp.add_argument("--threads", dest="threads_override", type=int)
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = Run(args, argv)
    try:
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        code = args.func(args, run)
    except (UsageError, *PARAM_ERRORS) as exc:
        print(f"crows {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"crows {args.command}: data error: {exc}", file=sys.stderr)
        return 3
    run.finish()
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
