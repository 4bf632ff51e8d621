"""Command-line front end: canned experiments emitting CSV data.

Every experiment validates its configuration before touching the output
directory, writes a fixed set of CSV files plus a summary.json, and is
bit-reproducible: the same configuration (including seed) always yields
byte-identical CSVs, for any worker count.

Exit codes: 0 success, 2 invalid configuration or cache refusal,
3 solver failure, 4 simulation truncation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .chain import ModelParams, equilibrium, gw_extinction_prob, threshold_u, transition_log_row
from .simulate import (
    TruncationError,
    estimate_conditioned_length,
    estimate_hitting_prob,
    graph_from_name,
    particle_step_counts,
    tv_distance,
)
from .solver import (
    HARMONICITY_TOL,
    HittingProfile,
    KernelConsistencyError,
    ProfileFormatError,
    SolverError,
    conditional_expected_extinction,
    conditional_occupation_time,
    hitting_profile,
    read_profile,
    tilted_kernel,
    unconditional_expected_extinction,
    write_profile,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TRUNCATION = 4


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs; unset fields stay None."""

    experiment: str
    out_dir: Path
    lam: float | None = None
    n: int | None = None
    n_sweep: tuple[int, ...] = ()
    epsilon: float | None = None
    delta: float | None = None
    alpha: float | None = None
    x0: int | None = None
    u: int | None = None
    mode: str | None = None
    trials: int | None = None
    seed: int | None = None
    graph: str | None = None
    self_loops: bool = True
    workers: int = 1
    cache_dir: Path | None = None


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _g17(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _require(config: ExperimentConfig, *names: str) -> None:
    for name in names:
        if getattr(config, name) is None:
            flag = "lambda" if name == "lam" else name.replace("_", "-")
            raise ValueError(f"{config.experiment}: --{flag} is required")


def _params(config: ExperimentConfig) -> ModelParams:
    _require(config, "lam", "n")
    return ModelParams(config.lam, config.n)


def _resolve_u(config: ExperimentConfig, params: ModelParams, default_mode: str) -> int:
    """Threshold from --u (custom) or --mode/--epsilon, with a per-experiment default."""
    if config.u is not None:
        if not 1 <= config.u <= params.n:
            raise ValueError(f"threshold {config.u} outside [1, {params.n}]")
        return config.u
    mode = config.mode or default_mode
    if mode == "custom":
        raise ValueError("mode=custom requires --u")
    if config.epsilon is None:
        raise ValueError(f"mode={mode} requires --epsilon")
    return threshold_u(params, config.epsilon, mode)


# ---------------------------------------------------------------------------
# profile cache
# ---------------------------------------------------------------------------


def cache_path(cache_dir: str | Path, lam: float, n: int, u: int) -> Path:
    return Path(cache_dir) / f"profile_lambda{_g17(lam)}_n{n}_u{u}.txt"


def cache_lookup(cache_dir: str | Path, lam: float, n: int, u: int) -> HittingProfile | None:
    """Return the cached profile, or None on any mismatch (never silent reuse).

    A file that exists but fails to parse raises ProfileFormatError; a file
    whose header disagrees with the requested key, or whose recorded
    residual is out of contract, is a miss.
    """
    path = cache_path(cache_dir, lam, n, u)
    if not path.exists():
        return None
    profile = read_profile(path)
    if (
        _g17(profile.params.lam) != _g17(lam)
        or profile.params.n != n
        or profile.u != u
        or not profile.residual <= HARMONICITY_TOL
    ):
        return None
    return profile


def cache_store(cache_dir: str | Path, profile: HittingProfile) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_path(cache_dir, profile.params.lam, profile.params.n, profile.u)
    write_profile(profile, path)
    return path


def _get_profile(config: ExperimentConfig, params: ModelParams, u: int) -> HittingProfile:
    """Compute, or reuse from cache; an existing-but-mismatched file is refused."""
    if config.cache_dir is None:
        return hitting_profile(params, u)
    path = cache_path(config.cache_dir, params.lam, params.n, u)
    if path.exists():
        cached = cache_lookup(config.cache_dir, params.lam, params.n, u)
        if cached is None:
            raise ValueError(
                f"cache file {path} exists but does not match the requested "
                "profile (key, version or residual); refusing to reuse or overwrite"
            )
        return cached
    profile = hitting_profile(params, u)
    cache_store(config.cache_dir, profile)
    return profile


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _constants(params: ModelParams, epsilon: float | None, u: int | None) -> dict:
    out = {
        "eq": equilibrium(params),
        "q": gw_extinction_prob(params.lam),
    }
    if u is not None:
        out["u"] = u
    b = bnd.make_bound_set(params.lam, params.n, epsilon) if epsilon is not None else None
    if b is not None:
        out["q1"] = None if math.isnan(b.q1) else b.q1
        out["q2"] = b.q2
        out["theta"] = b.theta
        out["kappa_n"] = None if math.isnan(b.kappa_n) else b.kappa_n
    else:
        kappa = bnd.kappa_floor(params.lam, params.n)
        out["kappa_n"] = None if math.isnan(kappa) else kappa
    return out


def _exp_profile(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    u = _resolve_u(config, params, "custom")
    profile = _get_profile(config, params, u)
    rows = []
    for x in range(u):
        v = math.exp(profile.log_phi[x])
        rows.append((x, profile.log_phi[x], v if v > 0.0 else ""))
    _write_csv(out / "phi.csv", ["x", "log_phi_natural", "phi_if_representable"], rows)
    return {
        "files": ["phi.csv"],
        "constants": _constants(params, config.epsilon, u),
        "residual": profile.residual,
        "method": profile.method,
    }


def _exp_figure1(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "epsilon")
    u = threshold_u(params, config.epsilon, "window")
    profile = _get_profile(config, params, u)
    ln10 = math.log(10.0)
    rows = [(x, profile.log_phi[x] / ln10) for x in range(u)]
    _write_csv(out / "logh.csv", ["x", "log10_h"], rows)
    return {
        "files": ["logh.csv"],
        "constants": _constants(params, config.epsilon, u),
        "residual": profile.residual,
    }


def _exp_figure2(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "epsilon")
    u = threshold_u(params, config.epsilon, "window")
    profile = _get_profile(config, params, u)
    kernel = tilted_kernel(profile)
    rows = (
        (x, y, kernel.rows[x - 1, y]) for x in range(1, u) for y in range(u)
    )
    _write_csv(out / "kernel.csv", ["x", "y", "p_phi"], rows)
    return {
        "files": ["kernel.csv"],
        "constants": _constants(params, config.epsilon, u),
        "residual": profile.residual,
    }


def _exp_cond_time(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    u = _resolve_u(config, params, "window")
    profile = _get_profile(config, params, u)
    t = conditional_expected_extinction(tilted_kernel(profile)).values
    rows = [(0, 0.0, "")]
    rows.extend((x, t[x], t[x] / math.log1p(x)) for x in range(1, u))
    _write_csv(out / "t.csv", ["x", "t", "t_over_log1p"], rows)
    return {
        "files": ["t.csv"],
        "constants": _constants(params, config.epsilon, u),
        "residual": profile.residual,
    }


def _exp_uncond_time(config: ExperimentConfig, out: Path) -> dict:
    _require(config, "lam")
    if not config.n_sweep:
        raise ValueError("uncond-time: --n takes a comma-separated sweep, e.g. 20,30,40,50")
    rows = []
    for n in config.n_sweep:
        params = ModelParams(config.lam, n)
        x = config.x0 if config.x0 is not None else -(-n // 2)
        if not 0 <= x <= n:
            raise ValueError(f"start {x} outside [0, {n}]")
        t = unconditional_expected_extinction(params).values
        rows.append((n, x, t[x], math.log(t[x])))
    _write_csv(out / "T.csv", ["n", "x", "expected_T0", "ln_expected_T0"], rows)
    return {"files": ["T.csv"], "constants": {"q": gw_extinction_prob(config.lam)}}


def _exp_occupation(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "delta")
    u = _resolve_u(config, params, "window")
    profile = _get_profile(config, params, u)
    t = conditional_occupation_time(tilted_kernel(profile), config.delta).values
    rows = [(x, t[x]) for x in range(u)]
    _write_csv(out / "h_occ.csv", ["x", "expected_band_time"], rows)
    return {
        "files": ["h_occ.csv"],
        "constants": _constants(params, config.epsilon, u),
        "delta": config.delta,
        "residual": profile.residual,
    }


def _exp_mc_hitting(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "x0", "trials", "seed")
    u = _resolve_u(config, params, "low")
    est = estimate_hitting_prob(
        params, u, config.x0, config.trials, config.seed, workers=config.workers
    )
    _write_csv(
        out / "est.csv",
        ["estimate", "std_error", "trials", "seed"],
        [(est.mean, est.std_error, est.trials, est.seed)],
    )
    return {"files": ["est.csv"], "constants": _constants(params, config.epsilon, u)}


def _exp_mc_cond_path(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "x0", "trials", "seed")
    u = _resolve_u(config, params, "window")
    profile = _get_profile(config, params, u)
    kernel = tilted_kernel(profile)
    est = estimate_conditioned_length(
        kernel, config.x0, config.trials, config.seed, workers=config.workers
    )
    _write_csv(
        out / "est.csv",
        ["estimate", "std_error", "trials", "seed"],
        [(est.mean, est.std_error, est.trials, est.seed)],
    )
    return {"files": ["est.csv"], "constants": _constants(params, config.epsilon, u)}


def _exp_equivalence(config: ExperimentConfig, out: Path) -> dict:
    _require(config, "lam", "x0", "trials", "seed")
    if config.graph is not None:
        graph = graph_from_name(config.graph, config.self_loops)
    else:
        _require(config, "n")
        graph = graph_from_name(f"complete:{config.n}", config.self_loops)
    n = graph.vertex_count
    params = ModelParams(config.lam, n)
    counts = particle_step_counts(
        graph, config.x0, config.lam, config.trials, config.seed, workers=config.workers
    )
    empirical = np.bincount(counts, minlength=n + 1)[: n + 1] / config.trials
    exact = np.exp(transition_log_row(params, config.x0))
    tv = tv_distance(empirical, exact)
    _write_csv(
        out / "tv.csv",
        ["n", "lambda", "x", "trials", "tv_distance"],
        [(n, params.lam, config.x0, config.trials, tv)],
    )
    return {"files": ["tv.csv"], "constants": _constants(params, None, None)}


def _exp_bounds_report(config: ExperimentConfig, out: Path) -> dict:
    params = _params(config)
    _require(config, "epsilon")
    bset = bnd.make_bound_set(params.lam, params.n, config.epsilon, config.alpha)
    reports = []
    u_low = threshold_u(params, config.epsilon, "low")
    low_profile = _get_profile(config, params, u_low)
    if bset.envelope_ok:
        reports.append(bnd.check_envelope(low_profile, bset))
    reports.append(bnd.check_ratio_beta(low_profile))
    eq_rate = math.log(params.lam) / params.lam
    if config.epsilon < eq_rate:
        u_win = threshold_u(params, config.epsilon, "window")
        win_profile = _get_profile(config, params, u_win)
        # the geometric bound needs the drift factor to clear exp(lam*eps)
        # at every transient state
        if params.lam * math.exp(-params.lam * (u_win - 1) / params.n) >= math.exp(
            params.lam * config.epsilon
        ):
            reports.append(bnd.check_geometric(win_profile, bset))
        if bset.kappa_ok:
            reports.append(bnd.check_ratio_kappa(win_profile, bset))
    if bset.gamma_ok:
        reports.append(bnd.check_gamma_ratio(params, config.epsilon, bset.alpha))
    (out / "report.txt").write_text(bnd.render_reports(reports))
    summary = {
        "files": ["report.txt"],
        "constants": _constants(params, config.epsilon, None),
        "alpha": bset.alpha,
        "gamma": None if math.isnan(bset.gamma) else bset.gamma,
        "checks": {r.name: r.passed for r in reports},
    }
    return summary


_EXPERIMENTS = {
    "profile": _exp_profile,
    "figure1": _exp_figure1,
    "figure2": _exp_figure2,
    "cond-time": _exp_cond_time,
    "uncond-time": _exp_uncond_time,
    "occupation": _exp_occupation,
    "mc-hitting": _exp_mc_hitting,
    "mc-cond-path": _exp_mc_cond_path,
    "equivalence": _exp_equivalence,
    "bounds-report": _exp_bounds_report,
}

_STOCHASTIC = {"mc-hitting", "mc-cond-path", "equivalence"}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one experiment; returns the summary also written to summary.json."""
    if config.experiment not in _EXPERIMENTS:
        raise ValueError(f"unknown experiment {config.experiment!r}")
    if config.experiment in _STOCHASTIC and config.seed is None:
        raise ValueError(f"{config.experiment}: --seed is mandatory for stochastic experiments")
    if config.workers < 1:
        raise ValueError("workers must be at least 1")
    started = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _EXPERIMENTS[config.experiment](config, out)
    summary["experiment"] = config.experiment
    summary["elapsed_seconds"] = time.perf_counter() - started
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barw",
        description="Exact analysis and simulation of mean-field branching-annihilating random walk.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in _EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--lambda", dest="lam", type=float, help="offspring mean (> 1)")
        if name == "uncond-time":
            sp.add_argument("--n", type=str, help="comma-separated site counts, e.g. 20,30,40,50")
        else:
            sp.add_argument("--n", type=int, help="number of sites")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--x0", type=int)
        sp.add_argument("--u", type=int)
        sp.add_argument("--mode", choices=["low", "window", "custom"])
        sp.add_argument("--trials", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--graph", type=str, help="graph file path or complete:<n>")
        sp.add_argument("--self-loops", dest="self_loops", type=int, choices=[0, 1], default=1)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--cache", type=Path, default=None)
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    n = None
    n_sweep: tuple[int, ...] = ()
    if args.experiment == "uncond-time":
        if args.n:
            try:
                n_sweep = tuple(int(tok) for tok in args.n.split(","))
            except ValueError:
                raise ValueError(f"bad --n sweep {args.n!r}") from None
    else:
        n = args.n
    return ExperimentConfig(
        experiment=args.experiment,
        out_dir=args.out,
        lam=args.lam,
        n=n,
        n_sweep=n_sweep,
        epsilon=args.epsilon,
        delta=args.delta,
        alpha=args.alpha,
        x0=args.x0,
        u=args.u,
        mode=args.mode,
        trials=args.trials,
        seed=args.seed,
        graph=args.graph,
        self_loops=bool(args.self_loops),
        workers=args.workers,
        cache_dir=args.cache,
    )


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        summary = run_experiment(_config_from_args(args))
    except (ValueError, ProfileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, KernelConsistencyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TruncationError as exc:
        print(f"simulation truncated: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    files = ", ".join(summary.get("files", []))
    print(f"{summary['experiment']}: wrote {files} and summary.json to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
