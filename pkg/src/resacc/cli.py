"""Command-line entry point for reproducible RA experiments.

Subcommands: profile, probs, estimate, compare, oracle, gridsim, study.
Every output CSV opens with a comment line carrying a schema tag, the hash
of the run inputs, and the seed, so identical runs produce byte-identical
files. Exit codes: 0 success, 1 usage error, 2 validation failure, 3 scale
guard exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from .container import ContainerError, load_evalset, load_network
from .estimator import (
    PoCCriteria,
    SamplingStrategy,
    build_pdf,
    estimate_ra,
    fit_sdc_rates,
    hardening_study,
    ra_sw_baseline,
    ra_true_nc,
    uniform_site_mean,
)
from .microdnn import FaultSemantics, accuracy
from .oracle import (
    GridModel,
    ScaleGuardExceeded,
    analytical_class_probs,
    exhaustive_ra,
    grid_simulate,
    live_evaluator,
)
from .probtransfer import build_table
from .profile import (
    AcceleratorConfig,
    FFType,
    config_from_text,
    derive_profile,
    profile_to_text,
    validate_profile,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_SCALE = 3

CSV_VERSION = "v1"


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- output plumbing -------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunOutputs:
    """Tracks files written by one run so a failure leaves nothing behind."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: list[Path] = []

    def write_csv(self, name: str, schema: str, rows, spec_hash: str, seed) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        lines = [f"# resacc-csv {CSV_VERSION} schema={schema} spec={spec_hash} seed={seed}"]
        lines.append(schema)
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        self.written.append(path)
        return path

    def track(self, path: Path):
        self.written.append(path)

    def discard_all(self):
        for p in self.written:
            try:
                p.unlink()
            except OSError:
                pass


def read_csv(path: str | Path, schema: str) -> list[list[str]]:
    """Read a resacc CSV, enforcing the schema line (mismatch is an error,
    never silent coercion)."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# resacc-csv"):
        raise ValidationError(f"{path}: not a resacc CSV")
    if lines[1] != schema:
        raise ValidationError(f"{path}: schema {lines[1]!r} != expected {schema!r}")
    return [line.split(",") for line in lines[2:] if line]


def _spec_hash(paths: list[Path], extra: str) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    h.update(extra.encode())
    return h.hexdigest()[:12]


# --- input loading ---------------------------------------------------------

def _load_config(path: str) -> AcceleratorConfig:
    try:
        return config_from_text(Path(path).read_text())
    except (OSError, ValueError, KeyError) as e:
        raise ValidationError(f"config {path}: {e}") from e


def _load_net(path: str):
    try:
        return load_network(path)
    except (OSError, ContainerError) as e:
        raise ValidationError(f"network {path}: {e}") from e


def _load_eval(path: str, net):
    try:
        evalset, fmt = load_evalset(path)
    except (OSError, ContainerError) as e:
        raise ValidationError(f"evalset {path}: {e}") from e
    if fmt is not net.numeric_format:
        raise ValidationError(
            f"evalset format {fmt.name} != network format {net.numeric_format.name}"
        )
    return evalset


def _parse_utilization(text: str | None) -> dict[int, float] | None:
    if not text:
        return None
    out: dict[int, float] = {}
    try:
        for part in text.split(","):
            lid, frac = part.split("=")
            out[int(lid)] = float(frac)
    except ValueError as e:
        raise ValidationError(f"bad --utilization {text!r}: {e}") from e
    for lid, frac in out.items():
        if not 0.0 < frac <= 1.0:
            raise ValidationError(f"utilization for layer {lid} must be in (0, 1]")
    return out


def _build_context(args, need_evalset: bool):
    config = _load_config(args.config)
    net = _load_net(args.network)
    util = _parse_utilization(getattr(args, "utilization", None))
    profile = derive_profile(net, config, utilization=util)
    problems = validate_profile(profile, config)
    if problems:
        raise ValidationError("; ".join(problems))
    evalset = _load_eval(args.evalset, net) if need_evalset else None
    return config, net, profile, evalset


def _hash_for(args, need_evalset: bool) -> str:
    paths = [Path(args.config), Path(args.network)]
    if need_evalset:
        paths.append(Path(args.evalset))
    extra = repr(sorted(
        (k, v) for k, v in vars(args).items() if k not in ("func", "out")
    ))
    return _spec_hash(paths, extra)


def _semantics(args) -> FaultSemantics:
    return FaultSemantics.TRUE if args.semantics == "true" else FaultSemantics.SW


def _uf_map(args, profile):
    if getattr(args, "uf", "one") == "actual":
        return lambda lid: profile.layer(lid).utilization
    return None


def _apply_harden(config: AcceleratorConfig, args) -> AcceleratorConfig:
    name = getattr(args, "harden", None)
    if not name:
        return config
    try:
        t = FFType(name)
    except ValueError as e:
        raise ValidationError(f"unknown FF type {name!r}") from e
    return config.with_raw_fit({t: args.harden_fit})


# --- subcommands -----------------------------------------------------------

def cmd_profile(args, out: RunOutputs) -> int:
    config, net, profile, _ = _build_context(args, need_evalset=False)
    out.out_dir.mkdir(parents=True, exist_ok=True)
    path = out.out_dir / "profile.txt"
    path.write_text(profile_to_text(profile))
    out.track(path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_probs(args, out: RunOutputs) -> int:
    config, net, profile, _ = _build_context(args, need_evalset=False)
    config = _apply_harden(config, args)
    table = build_table(profile, config)
    rows = [
        (c.layer_id, c.var_type.value, c.per_var_per_bit_prob,
         c.total_prob(table.bit_width))
        for c in table.classes
    ]
    out.write_csv(
        "probs.csv",
        "layer_id,var_type,per_var_per_bit_prob,class_total_prob",
        rows,
        _hash_for(args, need_evalset=False),
        args.seed,
    )
    print(f"wrote {out.out_dir / 'probs.csv'}")
    return EXIT_OK


def _run_estimate(strategy, seed, table, profile, evaluator, sa, uf, args,
                  ground_truth=None):
    pdf = build_pdf(strategy, table, profile, sa=sa)
    if args.poc:
        if ground_truth is None:
            raise ValidationError("--poc needs a computable exhaustive ground truth")
        crit = PoCCriteria(mean_tol=args.threshold)
        return estimate_ra(
            pdf, table, evaluator, criteria=crit, ground_truth=ground_truth,
            seed=seed, sa=sa, uf=uf, max_samples=args.max_samples,
        )
    return estimate_ra(
        pdf, table, evaluator, samples=args.samples, seed=seed, sa=sa, uf=uf,
        ground_truth=ground_truth,
        criteria=PoCCriteria(mean_tol=args.threshold) if ground_truth else None,
    )


def _trace_rows(est):
    c = est.contribs
    n = len(c)
    idx = np.arange(1, n + 1)
    sq = np.cumsum(c * c)
    mean = est.trace
    var = np.zeros(n)
    if n > 1:
        var[1:] = np.maximum(sq[1:] - idx[1:] * mean[1:] ** 2, 0.0) / (idx[1:] - 1)
    return [(int(i), float(m), float(v)) for i, m, v in zip(idx, mean, var)]


def cmd_estimate(args, out: RunOutputs) -> int:
    if args.samples is None and not args.poc:
        raise UsageError("need --samples K or --poc")
    config, net, profile, evalset = _build_context(args, need_evalset=True)
    config = _apply_harden(config, args)
    table = build_table(profile, config)
    sa = accuracy(net, evalset, None, profile)
    uf = _uf_map(args, profile)
    semantics = _semantics(args)
    spec_hash = _hash_for(args, need_evalset=True)
    ground_truth = None
    if args.poc:
        uf_dict = {l.layer_id: l.utilization for l in profile.layers} if uf else None
        result, archive = exhaustive_ra(
            profile, config, net, evalset, semantics, uf=uf_dict
        )
        ground_truth = result.ra
        evaluator = archive.evaluator
    else:
        evaluator = live_evaluator(net, evalset, profile, config, semantics)
    strategy = SamplingStrategy(args.strategy)
    est = _run_estimate(
        strategy, args.seed, table, profile, evaluator, sa, uf, args, ground_truth
    )
    out.write_csv(
        f"trace_{strategy.value}_seed{args.seed}.csv",
        "sample_index,running_mean,running_variance",
        _trace_rows(est),
        spec_hash,
        args.seed,
    )
    out.write_csv(
        "summary.csv",
        "strategy,seed,ra,samples_to_poc",
        [(strategy.value, args.seed, est.mean,
          est.poc_index if est.poc_index is not None else "")],
        spec_hash,
        args.seed,
    )
    print(f"strategy={strategy.value} seed={args.seed} ra={est.mean!r} "
          f"samples={est.samples_drawn} poc={est.poc_index}")
    return EXIT_OK


def cmd_compare(args, out: RunOutputs) -> int:
    config, net, profile, evalset = _build_context(args, need_evalset=True)
    config = _apply_harden(config, args)
    table = build_table(profile, config)
    sa = accuracy(net, evalset, None, profile)
    uf = _uf_map(args, profile)
    semantics = _semantics(args)
    spec_hash = _hash_for(args, need_evalset=True)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    uf_dict = {l.layer_id: l.utilization for l in profile.layers} if uf else None
    result, archive = exhaustive_ra(profile, config, net, evalset, semantics, uf=uf_dict)
    strategies = [SamplingStrategy(s) for s in args.strategies.split(",")]
    summary = []
    per_strategy: dict[str, list] = {s.value: [] for s in strategies}
    for strategy in strategies:
        for seed in seeds:
            est = _run_estimate(
                strategy, seed, table, profile, archive.evaluator, sa, uf, args,
                ground_truth=result.ra,
            )
            out.write_csv(
                f"trace_{strategy.value}_seed{seed}.csv",
                "sample_index,running_mean,running_variance",
                _trace_rows(est),
                spec_hash,
                seed,
            )
            poc = est.poc_index if est.poc_index is not None else ""
            summary.append((strategy.value, seed, est.mean, poc))
            per_strategy[strategy.value].append(est.poc_index)
    for strategy in strategies:
        pocs = per_strategy[strategy.value]
        med = (
            float(np.median([p for p in pocs if p is not None]))
            if any(p is not None for p in pocs) else ""
        )
        ras = [row[2] for row in summary if row[0] == strategy.value]
        summary.append((strategy.value, "median", float(np.median(ras)), med))
    out.write_csv(
        "summary.csv", "strategy,seed,ra,samples_to_poc", summary, spec_hash, args.seed
    )
    print(f"exhaustive ra={result.ra!r}; wrote {len(strategies) * len(seeds)} traces")
    return EXIT_OK


def cmd_oracle(args, out: RunOutputs) -> int:
    config, net, profile, evalset = _build_context(args, need_evalset=True)
    config = _apply_harden(config, args)
    semantics = _semantics(args)
    spec_hash = _hash_for(args, need_evalset=True)
    result, archive = exhaustive_ra(
        profile, config, net, evalset, semantics, max_inferences=args.max_inferences
    )
    table = build_table(profile, config)
    rows = []
    for c in table.classes:
        for b in range(table.bit_width):
            rows.append((c.layer_id, c.var_type.value, b,
                         archive.class_mean(c.layer_id, c.var_type, b)))
    out.write_csv(
        "oracle.csv", "layer_id,var_type,bit_pos,accuracy", rows, spec_hash, args.seed
    )
    out.out_dir.mkdir(parents=True, exist_ok=True)
    archive.save(out.out_dir / "archive.npz")
    out.track(out.out_dir / "archive.npz")
    print(f"exhaustive ra={result.ra!r} sa={result.sa!r}")
    return EXIT_OK


def cmd_gridsim(args, out: RunOutputs) -> int:
    config, net, profile, _ = _build_context(args, need_evalset=False)
    config = _apply_harden(config, args)
    spec_hash = _hash_for(args, need_evalset=False)
    grid = GridModel.build(profile, config)
    tally = grid_simulate(grid, args.pins, args.seed)
    analytical = analytical_class_probs(profile, config)
    rows = []
    for (lid, t), p in analytical.items():
        emp = tally.empirical(lid, t) if (lid, t) in tally.counts else 0.0
        rows.append((lid, t.value, p, emp, tally.pins))
    out.write_csv(
        "gridsim.csv", "layer_id,var_type,analytical_p,empirical_p,pins",
        rows, spec_hash, args.seed,
    )
    print(f"pins={tally.pins} idle={tally.idle} occupied={tally.occupied_pins()}")
    return EXIT_OK


def cmd_study(args, out: RunOutputs) -> int:
    config, net, profile, evalset = _build_context(args, need_evalset=True)
    spec_hash = _hash_for(args, need_evalset=True)
    sa = accuracy(net, evalset, None, profile)
    uf = _uf_map(args, profile)
    table = build_table(profile, config)
    if args.study == "methods":
        true_res, true_arch = exhaustive_ra(
            profile, config, net, evalset, FaultSemantics.TRUE
        )
        sw_eval = live_evaluator(net, evalset, profile, config, FaultSemantics.SW)
        rows = [
            ("RA_True", true_res.ra),
            ("RA_True-nc", ra_true_nc(table, true_arch.evaluator, sa).ra),
            ("RA_SW", uniform_site_mean(sw_eval, table, include_control=False)),
            ("RA_SW-cA", uniform_site_mean(true_arch.evaluator, table, include_control=True)),
        ]
        out.write_csv("study_methods.csv", "method,ra", rows, spec_hash, args.seed)
    elif args.study == "harden":
        _, archive = exhaustive_ra(profile, config, net, evalset, FaultSemantics.TRUE)
        results = hardening_study(
            profile, config, archive.evaluator, sa,
            hardened_fit=args.harden_fit, uf=uf,
        )
        rows = [(name, r.ra) for name, r in results.items()]
        out.write_csv("study_harden.csv", "hardened,ra", rows, spec_hash, args.seed)
    else:
        _, archive = exhaustive_ra(profile, config, net, evalset, FaultSemantics.TRUE)
        rows = []
        for t in args.thresholds:
            fit, sdc = fit_sdc_rates(archive.evaluator, table, config, t, sa)
            rows.append((t, fit, sdc))
        out.write_csv(
            "study_fitrate.csv", "threshold,fit_rate,sdc_rate", rows, spec_hash, args.seed
        )
    print(f"wrote study_{args.study}.csv")
    return EXIT_OK


# --- argument wiring -------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="resacc", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="accelerator config text file")
    common.add_argument("--network", required=True, help="network weights container")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--utilization", default=None,
                        help="per-layer utilization overrides, e.g. 0=0.7,2=0.9")
    common.add_argument("--harden", default=None, choices=[t.value for t in FFType],
                        help="lower one FF type's raw FIT to --harden-fit")
    common.add_argument("--harden-fit", type=float, default=200.0, dest="harden_fit")

    evalc = argparse.ArgumentParser(add_help=False)
    evalc.add_argument("--evalset", required=True, help="evalset container")
    evalc.add_argument("--semantics", choices=["true", "sw"], default="true",
                       help="fault semantics: hardware-faithful or software-style")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("profile", parents=[common]).set_defaults(func=cmd_profile)
    sub.add_parser("probs", parents=[common]).set_defaults(func=cmd_probs)

    est = sub.add_parser("estimate", parents=[common, evalc])
    est.add_argument("--strategy", required=True,
                     choices=[s.value for s in SamplingStrategy])
    est.add_argument("--samples", type=int, default=None)
    est.add_argument("--poc", action="store_true",
                     help="run until the point of convergence vs the exhaustive RA")
    est.add_argument("--threshold", type=float, default=0.003,
                     help="relative mean tolerance for convergence")
    est.add_argument("--uf", choices=["one", "actual"], default="one")
    est.add_argument("--max-samples", type=int, default=200_000, dest="max_samples")
    est.set_defaults(func=cmd_estimate)

    cmp_ = sub.add_parser("compare", parents=[common, evalc])
    cmp_.add_argument("--strategies", default="uniform,mac,is,is-b")
    cmp_.add_argument("--seeds", default="0,1,2")
    cmp_.add_argument("--threshold", type=float, default=0.003)
    cmp_.add_argument("--uf", choices=["one", "actual"], default="one")
    cmp_.add_argument("--max-samples", type=int, default=200_000, dest="max_samples")
    cmp_.set_defaults(func=cmd_compare, poc=True, samples=None)

    orc = sub.add_parser("oracle", parents=[common, evalc])
    orc.add_argument("--max-inferences", type=int, default=10**6, dest="max_inferences")
    orc.set_defaults(func=cmd_oracle)

    grd = sub.add_parser("gridsim", parents=[common])
    grd.add_argument("--pins", type=int, default=1_000_000)
    grd.set_defaults(func=cmd_gridsim)

    stu = sub.add_parser("study", parents=[common, evalc])
    stu.add_argument("--study", required=True, choices=["methods", "harden", "fitrate"])
    stu.add_argument("--thresholds", type=float, nargs="+", default=[0.2, 0.4])
    stu.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = RunOutputs(Path(args.out))
    try:
        return args.func(args, out)
    except UsageError as e:
        out.discard_all()
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScaleGuardExceeded as e:
        out.discard_all()
        print(f"scale guard: {e}", file=sys.stderr)
        return EXIT_SCALE
    except (ValidationError, ValueError) as e:
        out.discard_all()
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def entry():  # console_scripts hook
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
