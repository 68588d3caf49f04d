"""Command-line pipeline.

Subcommands: simulate, build, validate, structural, bootstrap, sensitivity,
diagnose-jump, report.  Every option can also come from a CORRBOUND_-prefixed
environment variable or a TOML config file (--config); precedence is
command line > environment > [subcommand] section > top-level key > default.
Every run writes a sidecar manifest next to its output.

Exit codes: 0 success, 1 data errors, 2 flag errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import bounds, dynamics, store, structural, validation
from .errors import CorrboundError, InsufficientData

logger = logging.getLogger(__name__)

SENSITIVITY_LEVEL = 0.95  # bound level used by `sensitivity`
REPORT_LEVELS = (0.50, 0.80, 0.90, 0.95, 0.99)
REPORT_SPLIT_SEED = 0


@dataclass(frozen=True)
class Opt:
    flag: str
    type: Callable
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple[str, ...] | None = None

    @property
    def key(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")

    @property
    def dest(self) -> str:
        key = self.key
        return {"lambda": "lam", "in": "in_dir"}.get(key, key)


def _u64(s) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("must fit in 64 unsigned bits")
    return v


def _cmin_list(s) -> tuple[int, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(int(v) for v in s)
    vals = tuple(int(part) for part in str(s).split(",") if part != "")
    if not vals:
        raise ValueError("need at least one value")
    return vals


def _grid(s) -> tuple[float, ...]:
    """start:stop:step, endpoints inclusive up to float slack."""
    parts = str(s).split(":")
    if len(parts) != 3:
        raise ValueError("grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if not (0 < start < stop <= 1 and step > 0):
        raise ValueError("grid needs 0 < start < stop <= 1 and step > 0")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(start + i * step for i in range(count))


COMMANDS: dict[str, list[Opt]] = {
    "simulate": [
        Opt("--n", int, required=True, help="matrix dimension"),
        Opt("--trials", int, required=True, help="number of trajectories"),
        Opt("--seed", _u64, required=True, help="master seed"),
        Opt("--epsilon", float, default=1e-12, help="max-norm stop tolerance"),
        Opt("--kmax", int, default=1000, help="iteration cap"),
        Opt("--kpost", int, default=2, help="post-transient cutoff"),
        Opt("--jobs", int, help="worker cap (default: cpu count)"),
        Opt("--out", str, required=True, help="steps CSV path"),
    ],
    "build": [
        Opt("--steps", str, required=True, help="steps CSV path"),
        Opt("--p", float, required=True, help="bound level in (0,1)"),
        Opt("--m", int, default=30, help="initial bin count"),
        Opt("--cmin", int, default=200, help="minimum merged-bin count"),
        Opt("--qtrim", float, default=0.005, help="trimming quantile"),
        Opt("--split", float, help="train on this construction fraction"),
        Opt("--split-seed", _u64, help="seed of the trajectory split"),
        Opt("--out", str, required=True, help="bound JSON path"),
    ],
    "validate": [
        Opt("--bound", str, required=True, help="bound JSON path"),
        Opt("--steps", str, required=True, help="steps CSV path"),
        Opt("--split", float, required=True, help="construction fraction"),
        Opt("--split-seed", _u64, required=True, help="split seed"),
        Opt("--variant", str, default="q", choices=("q", "tc", "tol")),
        Opt("--tau", float, default=0.35, help="log-scale inflation"),
        Opt("--lambda", float, default=0.25, help="dilation magnitude"),
        Opt("--alpha", float, default=0.9, help="dilation attenuation"),
        Opt("--weighting", str, default="pooled",
            choices=("pooled", "trajectory")),
        Opt("--out", str, required=True, help="coverage CSV path"),
    ],
    "structural": [
        Opt("--bound", str, required=True, help="bound JSON path"),
        Opt("--out", str, required=True, help="summary CSV path"),
    ],
    "bootstrap": [
        Opt("--steps", str, required=True, help="steps CSV path"),
        Opt("--p", float, required=True, help="bound level in (0,1)"),
        Opt("--resamples", int, default=1000, help="bootstrap resamples"),
        Opt("--seed", _u64, required=True, help="bootstrap seed"),
        Opt("--jobs", int, help="worker cap (default: cpu count)"),
        Opt("--out", str, required=True, help="bootstrap CSV path"),
    ],
    "sensitivity": [
        Opt("--steps", str, required=True, help="steps CSV path"),
        Opt("--cmin", _cmin_list, required=True,
            help="comma-separated minimum merged-bin counts"),
        Opt("--out", str, required=True, help="sensitivity CSV path"),
    ],
    "diagnose-jump": [
        Opt("--steps", str, required=True, help="steps CSV path"),
        Opt("--grid", _grid, default="0.90:0.999:0.0005",
            help="level grid start:stop:step"),
        Opt("--out", str, required=True, help="jump report CSV path"),
    ],
    "report": [
        Opt("--in", str, required=True, help="directory with steps CSVs"),
        Opt("--out", str, required=True, help="output directory"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrbound",
        description="Iterated correlation-map trajectories and conditional "
                    "quantile bounds on their contraction ratios.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="TOML config file with flag values")
        for o in opts:
            p.add_argument(o.flag, dest=o.dest, default=None, type=str,
                           help=o.help)
    return parser


def _resolve(parser: argparse.ArgumentParser, args: argparse.Namespace,
             opts: list[Opt]) -> argparse.Namespace:
    """Merge flag, environment, and config-file values; cast and check."""
    config = {}
    config_path = args.config or os.environ.get("CORRBOUND_CONFIG")
    if config_path:
        try:
            with open(config_path, "rb") as f:
                config = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            parser.error(f"cannot read config {config_path}: {e}")
    section = config.get(args.command.replace("-", "_"), {})
    if not isinstance(section, dict):
        section = {}
    out = argparse.Namespace(command=args.command)
    for o in opts:
        raw = getattr(args, o.dest)
        if raw is None:
            raw = os.environ.get("CORRBOUND_" + o.key.upper())
        if raw is None and o.key in section:
            raw = section[o.key]
        if raw is None and not isinstance(config.get(o.key), dict):
            raw = config.get(o.key)
        if raw is None:
            value = o.default
            if o.required:
                parser.error(f"missing required option {o.flag}")
            if value is not None and callable(o.type) and isinstance(value, str):
                value = o.type(value)
        else:
            try:
                value = o.type(raw)
            except (TypeError, ValueError) as e:
                parser.error(f"invalid value for {o.flag}: {e}")
        if o.choices is not None and value not in o.choices:
            parser.error(f"{o.flag} must be one of {', '.join(o.choices)}")
        setattr(out, o.dest, value)
    return out


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_table(path, header: str, rows: list[Sequence]) -> None:
    lines = [header] + [",".join(_fmt_cell(c) for c in row) for row in rows]
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def _unique_dim(trials) -> int | None:
    dims = {t.n for t in trials}
    return dims.pop() if len(dims) == 1 else None


def _flag_params(ns: argparse.Namespace, opts: list[Opt]) -> dict:
    params = {}
    for o in opts:
        v = getattr(ns, o.dest)
        if isinstance(v, tuple):
            v = list(v)
        params[o.key] = v
    return params


def _emit(command: str, ns, opts, inputs: list[str], outputs: list[str]):
    store.write_manifest(
        command, _flag_params(ns, opts),
        inputs={p: store.file_hash(p) for p in inputs},
        outputs={p: store.file_hash(p) for p in outputs},
        path=store.manifest_path(outputs[0]))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(ns, opts, parser) -> int:
    try:
        cfg = dynamics.SimulationConfig(n=ns.n, master_seed=ns.seed,
                                        epsilon=ns.epsilon, k_max=ns.kmax,
                                        k_post=ns.kpost)
    except ValueError as e:
        parser.error(str(e))
    jobs = ns.jobs or os.cpu_count()
    trials = dynamics.simulate_many(cfg, ns.trials, jobs=jobs)
    kept = [t for t in trials if t.status != dynamics.DEGENERATE_ROW]
    dropped = len(trials) - len(kept)
    if dropped:
        logger.warning("discarded %d degenerate trajectories", dropped)
    store.write_steps(kept, ns.out)
    _emit("simulate", ns, opts, [], [ns.out])
    print(f"wrote {ns.out}: {len(kept)} trajectories "
          f"({dropped} degenerate discarded)")
    return 0


def cmd_build(ns, opts, parser) -> int:
    if (ns.split is None) != (ns.split_seed is None):
        parser.error("--split and --split-seed go together")
    try:
        cfg = bounds.BoundConfig(p=ns.p, m=ns.m, c_min=ns.cmin,
                                 q_trim=ns.qtrim)
        spec = (validation.SplitSpec(construction_fraction=ns.split,
                                     split_seed=ns.split_seed)
                if ns.split is not None else None)
    except ValueError as e:
        parser.error(str(e))
    trials = store.read_steps(ns.steps)
    if spec is not None:
        source, _ = validation.split_trajectories(trials, spec)
    else:
        source = list(trials)
    _, deltas, rhos = dynamics.collect_pairs(source, k_post=2)
    bound = bounds.build_bound(np.column_stack([deltas, rhos]), cfg,
                               n=_unique_dim(source), k_post=2,
                               training_ids={t.trial_id for t in source})
    store.write_bound(bound, ns.out)
    _emit("build", ns, opts, [ns.steps], [ns.out])
    print(f"wrote {ns.out}: {bound.partition.n_bins} bins at p={ns.p}")
    return 0


COVERAGE_HEADER = ("n,p,variant,tau,lambda,alpha,weighting,"
                   "n_pairs,covered,coverage")


def _coverage_row(report: validation.CoverageReport, ns, dim) -> list:
    tau = ns.tau if ns.variant in ("tc", "tol") else None
    lam = ns.lam if ns.variant == "tol" else None
    alpha = ns.alpha if ns.variant == "tol" else None
    n = report.stratum if report.stratum is not None else dim
    return [n, report.level, report.variant, tau, lam, alpha,
            report.weighting, report.n_pairs, report.covered,
            report.coverage]


def cmd_validate(ns, opts, parser) -> int:
    try:
        spec = validation.SplitSpec(construction_fraction=ns.split,
                                    split_seed=ns.split_seed)
        params = bounds.EnlargementParams(tau=ns.tau, lam=ns.lam,
                                          alpha=ns.alpha)
    except ValueError as e:
        parser.error(str(e))
    bound = store.read_bound(ns.bound)
    trials = store.read_steps(ns.steps)
    construction, held_out = validation.split_trajectories(trials, spec)
    expected = bounds.hash_ids({t.trial_id for t in construction})
    if bound.provenance.training_hash != expected:
        raise CorrboundError(
            "bound training hash does not match the construction side of "
            "this split; cannot certify out-of-sample scoring")
    weighting = ("trajectory_weighted" if ns.weighting == "trajectory"
                 else ns.weighting)
    dim = _unique_dim(held_out)
    reports = [validation.coverage(bound, held_out, variant=ns.variant,
                                   params=params, weighting=weighting)]
    if dim is None:
        reports.extend(validation.coverage_by_dimension(
            bound, held_out, variant=ns.variant, params=params,
            weighting=weighting))
    rows = [_coverage_row(r, ns, dim) for r in reports]
    _write_table(ns.out, COVERAGE_HEADER, rows)
    _emit("validate", ns, opts, [ns.bound, ns.steps], [ns.out])
    print(f"wrote {ns.out}: coverage={reports[0].coverage:.6f} "
          f"on {reports[0].n_pairs} held-out pairs")
    return 0


def cmd_structural(ns, opts, parser) -> int:
    bound = store.read_bound(ns.bound)
    s = structural.expansion_threshold(bound)
    _write_table(ns.out, "n,p,b_star,delta_star,envelope_sup,bound_at_threshold",
                 [[s.n, s.level, s.b_star, s.delta_star, s.envelope_sup,
                   s.bound_at_threshold]])
    _emit("structural", ns, opts, [ns.bound], [ns.out])
    print(f"wrote {ns.out}: envelope={s.envelope_sup:.6f}")
    return 0


def cmd_bootstrap(ns, opts, parser) -> int:
    try:
        bcfg = bounds.BoundConfig(p=ns.p)
        boot = structural.BootstrapConfig(n_resamples=ns.resamples,
                                          seed=ns.seed)
    except ValueError as e:
        parser.error(str(e))
    trials = store.read_steps(ns.steps)
    res = structural.bootstrap_structural(trials, bcfg, boot, k_post=2,
                                          jobs=ns.jobs or os.cpu_count())
    by_name = {s.statistic: s for s in res.summaries}
    ds, env = by_name["delta_star"], by_name["envelope_sup"]
    _write_table(ns.out,
                 "n,p,delta_star_median,delta_star_lo,delta_star_hi,"
                 "env_median,env_lo,env_hi",
                 [[_unique_dim(trials), ns.p, ds.median, ds.ci_low, ds.ci_high,
                   env.median, env.ci_low, env.ci_high]])
    _emit("bootstrap", ns, opts, [ns.steps], [ns.out])
    print(f"wrote {ns.out}: {res.n_resamples} resamples "
          f"({res.n_failed} failed, {res.n_no_crossing} without crossing)")
    return 0


def cmd_sensitivity(ns, opts, parser) -> int:
    trials = store.read_steps(ns.steps)
    rows = structural.sensitivity_cmin(
        trials, bounds.BoundConfig(p=SENSITIVITY_LEVEL), ns.cmin, k_post=2)
    _write_table(ns.out, "n,cmin,delta_star,env_sup,min_count",
                 [[r.n, r.c_min, r.delta_star, r.envelope_sup, r.min_count]
                  for r in rows])
    _emit("sensitivity", ns, opts, [ns.steps], [ns.out])
    print(f"wrote {ns.out}: {len(rows)} settings at p={SENSITIVITY_LEVEL}")
    return 0


def cmd_diagnose_jump(ns, opts, parser) -> int:
    trials = store.read_steps(ns.steps)
    ids, deltas, rhos = dynamics.collect_pairs(trials, k_post=2)
    if deltas.size == 0:
        raise InsufficientData("no post-transient pairs")
    rep = structural.quantile_jump_scan(np.column_stack([deltas, rhos]),
                                        ns.grid, trial_ids=ids)
    _write_table(ns.out,
                 "n,n_pairs,max_ratio,p_low,p_high,q_low,q_high,"
                 "tail_count,tail_fraction,n_tail_trajectories",
                 [[_unique_dim(trials), rep.n_pairs, rep.max_ratio, rep.p_low,
                   rep.p_high, rep.q_low, rep.q_high, rep.tail_count,
                   rep.tail_fraction, rep.n_tail_trajectories]])
    _emit("diagnose-jump", ns, opts, [ns.steps], [ns.out])
    print(f"wrote {ns.out}: max ratio {rep.max_ratio:.4g} "
          f"at p={rep.p_low:.4g}")
    return 0


def _report_tables(n_dim: int, trials, out_dir: str) -> list[str]:
    """Plot-ready tables for one matrix dimension; returns written paths."""
    written = []
    ids, deltas, rhos = dynamics.collect_pairs(trials, k_post=2)
    pairs = np.column_stack([deltas, rhos])

    path = os.path.join(out_dir, f"scatter_delta_rho_n{n_dim}.csv")
    _write_table(path, "delta_norm,rho", [[d, r] for d, r in pairs])
    written.append(path)

    cfg = bounds.BoundConfig(p=0.95)
    try:
        bound = bounds.build_bound(pairs, cfg, n=n_dim, k_post=2,
                                   training_ids={t.trial_id for t in trials})
    except (CorrboundError, ValueError) as e:
        logger.warning("n=%d: skipping bound tables (%s)", n_dim, e)
        return written

    # binwise location/spread of the ratios on the bound's own partition
    edges = np.asarray(bound.partition.edges)
    d_lo, d_hi = edges[0], edges[-1]
    mask = (deltas >= d_lo) & (deltas <= d_hi)
    which = np.clip(np.searchsorted(edges, deltas[mask], side="right") - 1,
                    0, len(edges) - 2)
    rows = []
    rin = rhos[mask]
    for b in range(len(edges) - 1):
        member = rin[which == b]
        rows.append([edges[b], edges[b + 1], int(member.size),
                     bounds.order_statistic_quantile(member, 0.25),
                     bounds.order_statistic_quantile(member, 0.5),
                     bounds.order_statistic_quantile(member, 0.75)])
    path = os.path.join(out_dir, f"ratio_profile_n{n_dim}.csv")
    _write_table(path, "bin_left,bin_right,count,q25,median,q75", rows)
    written.append(path)

    params = bounds.DEFAULT_ENLARGEMENT
    rows = []
    for b in range(bound.partition.n_bins):
        mid = math.sqrt(edges[b] * edges[b + 1])
        rows.append([edges[b], edges[b + 1],
                     bounds.evaluate(bound, mid, variant="q"),
                     bounds.evaluate(bound, mid, params, variant="tc"),
                     bounds.evaluate(bound, mid, params, variant="tol")])
    path = os.path.join(out_dir, f"bound_bands_n{n_dim}.csv")
    _write_table(path, "delta_left,delta_right,b_q,b_tc,b_tol", rows)
    written.append(path)

    # out-of-sample coverage against nominal level
    try:
        spec = validation.SplitSpec(split_seed=REPORT_SPLIT_SEED)
        construction, held_out = validation.split_trajectories(trials, spec)
        rows = []
        for p in REPORT_LEVELS:
            _, dtr, rtr = dynamics.collect_pairs(construction, k_post=2)
            b = bounds.build_bound(
                np.column_stack([dtr, rtr]),
                bounds.BoundConfig(p=p, c_min=min(cfg.c_min, 50)),
                n=n_dim, k_post=2,
                training_ids={t.trial_id for t in construction})
            for variant in bounds.VARIANTS:
                rep = validation.coverage(b, held_out, variant=variant,
                                          params=params)
                rows.append([p, variant, rep.coverage, rep.n_pairs,
                             rep.covered])
        path = os.path.join(out_dir, f"coverage_vs_p_n{n_dim}.csv")
        _write_table(path, "p,variant,coverage,n_pairs,covered", rows)
        written.append(path)
    except CorrboundError as e:
        logger.warning("n=%d: skipping coverage table (%s)", n_dim, e)
    return written


def cmd_report(ns, opts, parser) -> int:
    datasets: dict[int, list] = {}
    sources = []
    for name in sorted(os.listdir(ns.in_dir)):
        if not name.endswith(".csv"):
            continue
        path = os.path.join(ns.in_dir, name)
        try:
            trials = store.read_steps(path)
        except CorrboundError:
            continue
        sources.append(path)
        for t in trials:
            datasets.setdefault(t.n, []).append(t)
    if not datasets:
        raise InsufficientData(f"no step tables found in {ns.in_dir}")
    os.makedirs(ns.out, exist_ok=True)
    written = []
    threshold_rows = []
    for n_dim in sorted(datasets):
        trials = datasets[n_dim]
        written.extend(_report_tables(n_dim, trials, ns.out))
        ids, deltas, rhos = dynamics.collect_pairs(trials, k_post=2)
        try:
            bound = bounds.build_bound(
                np.column_stack([deltas, rhos]), bounds.BoundConfig(p=0.95),
                n=n_dim, k_post=2)
            s = structural.expansion_threshold(bound)
            threshold_rows.append([n_dim, s.b_star, s.delta_star,
                                   s.envelope_sup])
        except CorrboundError:
            pass
    if threshold_rows:
        path = os.path.join(ns.out, "threshold_envelope_vs_n.csv")
        _write_table(path, "n,b_star,delta_star,envelope_sup", threshold_rows)
        written.append(path)
    store.write_manifest(
        "report", _flag_params(ns, COMMANDS["report"]),
        inputs={p: store.file_hash(p) for p in sources},
        outputs={p: store.file_hash(p) for p in written},
        path=os.path.join(ns.out, "report.manifest.json"))
    print(f"wrote {len(written)} tables to {ns.out}")
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "build": cmd_build,
    "validate": cmd_validate,
    "structural": cmd_structural,
    "bootstrap": cmd_bootstrap,
    "sensitivity": cmd_sensitivity,
    "diagnose-jump": cmd_diagnose_jump,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = COMMANDS[args.command]
    ns = _resolve(parser, args, opts)
    try:
        return HANDLERS[args.command](ns, opts, parser)
    except CorrboundError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: IoError: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
