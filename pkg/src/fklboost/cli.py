"""Command-line interface: ``fklboost {fit, experiment, estimate}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from .blr import BlrGaussianTarget, BlrHeavyTailTarget, load_dataset
from .boost import BoostConfig, boost
from .errors import ConfigError, NumericalError
from .harness import (
    DEFAULT_BLR_METHODS,
    EXPERIMENT_DEFAULTS,
    aggregate,
    median_curve,
    run_blr_experiment,
    run_cauchy_experiment,
    run_gmm20_experiment,
    write_aggregate_json,
    write_curve_csv,
    write_residual_grids,
    write_results_csv,
)
from .io import atomic_write_json, atomic_write_text
from .mixture import MixtureProposal, sample
from .snis import score_batch, snis_fkl
from .targets import CauchyTarget, GaussianTarget, gmm20_target

logger = logging.getLogger("fklboost")

METHODS = ("rkl-vi", "fkl-vi", "rkl-vb", "fkl-vb")


def parse_target(spec: str):
    """Return ``(target, profile)`` for a target string.

    ``cauchy``, ``gmm20``, ``gaussian`` or ``gaussian:<d>`` (standard normal),
    ``blr:<csv>`` and ``blr-heavy:<csv>``.
    """
    if spec == "cauchy":
        return CauchyTarget(), "cauchy"
    if spec == "gmm20":
        return gmm20_target(), "gmm20"
    if spec == "gaussian" or spec.startswith("gaussian:"):
        d = 1
        if ":" in spec:
            try:
                d = int(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad dimension in target {spec!r}") from None
        if d < 1:
            raise ConfigError(f"bad dimension in target {spec!r}")
        return GaussianTarget(np.zeros(d), np.ones(d)), "cauchy"
    for prefix, cls in (("blr:", BlrGaussianTarget), ("blr-heavy:", BlrHeavyTailTarget)):
        if spec.startswith(prefix):
            return cls(load_dataset(spec[len(prefix):])), "blr"
    raise ConfigError(f"unknown target {spec!r}")


def _resolve_seed(flag, doc) -> int:
    if flag is not None:
        return flag
    if "seed" in doc:
        return int(doc["seed"])
    env = os.environ.get("FKLBOOST_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FKLBOOST_SEED must be an integer, got {env!r}") from None
    return 0


def _pick(flag, *fallbacks):
    if flag is not None:
        return flag
    for v in fallbacks:
        if v is not None:
            return v
    return None


def cmd_fit(args, doc) -> int:
    target_spec = _pick(args.target, doc.get("target"))
    if target_spec is None:
        raise ConfigError("missing required setting 'target' (--target)")
    method = _pick(args.method, doc.get("method"), "fkl-vb")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    target, profile = parse_target(target_spec)
    seed = _resolve_seed(args.seed, doc)
    k = _pick(args.k, doc.get("k"), doc.get("boost", {}).get("K"), EXPERIMENT_DEFAULTS[profile]["K"])
    base = BoostConfig.for_method(method, K=k, **{x: v for x, v in EXPERIMENT_DEFAULTS[profile].items() if x != "K"})
    file_boost = {x: v for x, v in doc.get("boost", {}).items() if x not in ("K", "first", "divergence")}
    cfg = config_mod.build_boost_config(vars(base), file_boost, {"seed": seed})
    q, report = boost(target, cfg)
    out = _pick(args.out, doc.get("output", {}).get("out"), ".")
    atomic_write_text(os.path.join(out, "proposal.json"), q.to_json() + "\n")
    atomic_write_text(os.path.join(out, "report.json"), report.to_json() + "\n")
    print(json.dumps({"proposal": os.path.join(out, "proposal.json"), "report": os.path.join(out, "report.json"),
                      "k": q.k, "snis_fkl": report.records[-1].snis_fkl}))
    return 0


def cmd_experiment(args, doc) -> int:
    ex = doc.get("experiment", {})
    name = _pick(args.name, ex.get("name"))
    if name not in ("cauchy", "gmm20", "blr"):
        raise ConfigError(f"experiment name must be cauchy, gmm20 or blr, got {name!r}")
    seed = _resolve_seed(args.seed, doc)
    jobs = int(_pick(args.jobs, ex.get("jobs"), 1))
    out = _pick(args.out, doc.get("output", {}).get("out"), ".")
    k = _pick(args.k, ex.get("k"), doc.get("k"))
    flags = {"K": k} if k is not None else {}
    cfg = config_mod.build_boost_config(EXPERIMENT_DEFAULTS[name], doc.get("boost", {}), flags)
    if name in ("cauchy", "gmm20"):
        n_seeds = int(_pick(args.seeds, ex.get("seeds"), 10 if name == "cauchy" else 5))
        seeds = range(seed, seed + n_seeds)
        if name == "cauchy":
            rows = run_cauchy_experiment(cfg, seeds=seeds, jobs=jobs)
        else:
            dump = bool(args.dump_grids or ex.get("dump_grids", False))
            rows, grids = run_gmm20_experiment(cfg, seeds=seeds, keep_grids=dump, jobs=jobs)
            if dump:
                write_residual_grids(os.path.join(out, "residuals"), grids)
        write_curve_csv(os.path.join(out, "curve.csv"), rows)
        summary = {}
        for m in sorted({r.method for r in rows}):
            summary[m] = {met: {str(kk): v for kk, v in median_curve(rows, m, met).items()}
                          for met in sorted({r.metric for r in rows if r.method == m})}
        atomic_write_json(os.path.join(out, "summary.json"), summary)
        print(json.dumps(summary))
        return 0
    data = _pick(args.data, ex.get("data"))
    if data is None:
        raise ConfigError("missing required setting 'data' (--data) for the blr experiment")
    methods = args.methods.split(",") if args.methods else ex.get("methods", list(DEFAULT_BLR_METHODS))
    hmc_cfg = config_mod.build_hmc_config({"n_samples": 2000, "n_chains": 3, **doc.get("hmc", {})}, {})
    try:
        rows = run_blr_experiment(
            data, prior=_pick(args.prior, ex.get("prior"), "gaussian"), methods=methods,
            n_splits=int(_pick(args.splits, ex.get("splits"), 20)), cfg=cfg, hmc_cfg=hmc_cfg, seed=seed,
            n_samples=int(_pick(args.samples, ex.get("samples"), 6000)),
            weighting=_pick(args.weighting, ex.get("weighting"), "is"), jobs=jobs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    write_results_csv(os.path.join(out, "results.csv"), rows)
    write_aggregate_json(os.path.join(out, "aggregate.json"), rows)
    print(json.dumps(aggregate(rows)))
    return 0


def cmd_estimate(args, doc) -> int:
    est = doc.get("estimate", {})
    path = _pick(args.proposal, est.get("proposal"))
    target_spec = _pick(args.target, doc.get("target"))
    if path is None or target_spec is None:
        raise ConfigError("estimate needs --proposal and --target")
    try:
        with open(path) as fh:
            q = MixtureProposal.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read proposal {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid proposal file {path}: {exc}") from exc
    target, _ = parse_target(target_spec)
    if q.dim != target.dim:
        raise ConfigError(f"proposal dimension {q.dim} does not match target dimension {target.dim}")
    S = int(_pick(args.samples, est.get("samples"), 10000))
    if S < 1:
        raise ConfigError("samples must be >= 1")
    seed = _resolve_seed(args.seed, doc)
    batch = score_batch(sample(q, S, np.random.default_rng(seed)), target)
    w = batch.norm_weights
    mean = w @ batch.points
    var = w @ (batch.points - mean) ** 2
    res = snis_fkl(batch)
    print(json.dumps({"mean": mean.tolist(), "var_diag": var.tolist(), "ess": res.ess, "snis_fkl": res.value}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fklboost", description="Forward-KL boosted importance-sampling proposals.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="random seed (fallback: $FKLBOOST_SEED, then 0)")

    f = sub.add_parser("fit", help="fit a proposal to one target")
    common(f)
    f.add_argument("--target", help="cauchy | gmm20 | gaussian[:d] | blr:<csv> | blr-heavy:<csv>")
    f.add_argument("--method", choices=METHODS)
    f.add_argument("--k", type=int, help="number of mixture components")
    f.add_argument("--out", help="output directory for proposal.json and report.json")

    e = sub.add_parser("experiment", help="run one experiment suite")
    common(e)
    e.add_argument("--name", choices=("cauchy", "gmm20", "blr"))
    e.add_argument("--seeds", type=int, help="number of seeds (cauchy, gmm20)")
    e.add_argument("--k", type=int, help="boosting iterations")
    e.add_argument("--data", help="CSV for the blr experiment (header row, last column is y)")
    e.add_argument("--splits", type=int)
    e.add_argument("--prior", choices=("gaussian", "heavy", "conjugate"))
    e.add_argument("--methods", help="comma-separated method tags, e.g. fkl_vi,fkl_vb_2,hmc")
    e.add_argument("--samples", type=int, help="proposal samples per split for prediction")
    e.add_argument("--weighting", choices=("is", "uniform"))
    e.add_argument("--dump-grids", action="store_true", help="write residual grids (gmm20)")
    e.add_argument("--jobs", type=int, help="worker processes across seeds or splits")
    e.add_argument("--out", help="output directory")

    s = sub.add_parser("estimate", help="SNIS moments of a target under a saved proposal")
    common(s)
    s.add_argument("--proposal")
    s.add_argument("--target")
    s.add_argument("--samples", type=int)
    return p


COMMANDS = {"fit": cmd_fit, "experiment": cmd_experiment, "estimate": cmd_estimate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = config_mod.load(args.config) if args.config else {}
        return COMMANDS[args.command](args, doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
