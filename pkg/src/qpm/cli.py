"""Command line front end: ``qpm solve | scan | check | oracle-compare``.

Exit codes: 0 success, 1 configuration or usage error, 2 failed verification
or non-converged run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .divisors import DEFAULT_SEED, measure_scan
from .membrane import eval_J, membrane_residual, reconstruct_embedding, timelike_margin, write_embedding_csv
from .nash_moser import NonDiophantineError, Schedule, StepFailure, run
from .operator import SplitOperator, assemble_diagonal, assemble_T, field_to_vector
from .params import ConfigError, ModelParams
from .resolvent import SingularClusterError, SolveFailure, dense_solve, resolvent_solve
from .spectra import SpectralField, sobolev_norm

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# ------------------------------------------------------------------ solve


def solve_config(cfg: io.RunConfig):
    """Run the driver for a parsed config; returns (bundle, trace)."""
    p = cfg.params
    sched = Schedule.from_params(p, N_cap=cfg.N_cap)
    forcing = cfg.forcing_field()
    w, trace = run(p, cfg.seed_field(), forcing, override_diophantine=cfg.override_diophantine, schedule=sched)
    emb = reconstruct_embedding(w, p, cfg.grid)
    resid = membrane_residual(emb)
    bound = io.residual_sup_bound(w, p)
    E_final = eval_J(w, p, trace.final_N, forcing)
    meta = {
        "config": cfg.semantic(),
        "config_hash": io.config_hash(cfg),
        "verdict": trace.verdict,
        "message": trace.message,
        "steps": len(trace.steps) - 1,
        "final_N": trace.final_N,
        "norm_w_sigma_bar": sobolev_norm(w, p.sigma_bar),
        "distance_from_constants": trace.distance_from_constants,
        "residual_sigma_bar": sobolev_norm(E_final, p.sigma_bar),
        "gauge_mean": 0.0,
        "timelike_margin": timelike_margin(emb),
        "membrane_residual": resid,
        # the residual is bounded by eps * sum |coeff| of the untruncated map; pad for round-off
        "residual_bound": max(2.0 * bound, 2.0 * resid, 1e-13),
        "rate": list(trace.rate) if trace.rate else None,
        "resonant": trace.resonant,
    }
    ref = cfg.reference_field()
    if ref is not None:
        meta["final_error"] = sobolev_norm(w - ref, p.sigma_bar)
    return io.SolutionBundle(meta, w, ref), trace, emb


def cmd_solve(args) -> int:
    try:
        cfg = io.load_config(args.config)
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_CONFIG
    if args.override_diophantine:
        cfg = io.RunConfig(**{**cfg.__dict__, "override_diophantine": True})
    out = Path(args.out or cfg.outputs.get("out", "solution.json"))
    trace_path = Path(args.trace or cfg.outputs.get("trace", out.with_suffix(".trace.csv")))
    emb_path = Path(args.embedding or cfg.outputs.get("embedding", out.with_suffix(".embedding.csv")))
    try:
        bundle, trace, emb = solve_config(cfg)
    except NonDiophantineError as exc:
        _err(f"diophantine check: {exc}")
        return EXIT_CONFIG
    except (StepFailure, SolveFailure, SingularClusterError) as exc:
        _err(f"linear solve: {exc}")
        return EXIT_FAIL
    bundle.save(out)
    io.write_trace_csv(trace, trace_path)
    write_embedding_csv(emb, emb_path)
    m = bundle.metadata
    print(json.dumps({k: m[k] for k in ("verdict", "steps", "norm_w_sigma_bar", "residual_sigma_bar",
                                         "timelike_margin", "membrane_residual", "resonant")}, sort_keys=True))
    if trace.verdict != "converged":
        _err(f"driver: verdict {trace.verdict} {trace.message}".rstrip())
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------------- scan


def cmd_scan(args) -> int:
    lo, hi = args.omega_min, args.omega_max
    if not (0 < lo <= hi):
        _err(f"scan: bad range [{lo}, {hi}]")
        return EXIT_CONFIG
    gammas = args.gamma or [0.01]
    try:
        params = ModelParams(n=args.n, omega=lo, gamma=max(gammas) if max(gammas) > 0 else 0.5, tau=args.tau)
    except ConfigError as exc:
        _err(f"scan: {exc}")
        return EXIT_CONFIG
    samples = 1 if lo == hi else args.samples
    scan = measure_scan((lo, hi), params, samples, args.L_max, seed=args.seed)
    io.write_scan_csv(scan, args.csv, gammas[0])
    summaries = [scan.summary(g) for g in gammas]
    payload: dict = {"summaries": summaries}
    if len(gammas) >= 2:
        g = np.array(gammas)
        f = np.array([s["fraction"] for s in summaries])
        C = float(g @ f / (g @ g))
        ss_tot = float(np.sum((f - f.mean()) ** 2))
        payload["linear_fit"] = {"C": C, "r_squared": 1 - float(np.sum((f - C * g) ** 2)) / ss_tot if ss_tot > 0 else None}
    Path(args.summary).write_text(io.dumps(payload))
    print(io.dumps(payload), end="")
    return EXIT_OK


# ------------------------------------------------------------------ check


def cmd_check(args) -> int:
    try:
        bundle = io.SolutionBundle.load(args.solution)
        params = bundle.params()
    except (OSError, ValueError, KeyError) as exc:
        _err(f"check: cannot load bundle: {exc}")
        return EXIT_CONFIG
    grid = (args.grid, args.grid_theta or args.grid)
    emb = reconstruct_embedding(bundle.solution, params, grid)
    resid, r_at = membrane_residual(emb, where=True)
    margin, m_at = timelike_margin(emb, where=True)
    bound = float(bundle.metadata["residual_bound"])
    print(json.dumps({"membrane_residual": resid, "residual_bound": bound, "timelike_margin": margin}, sort_keys=True))
    ok = True
    if not margin > 0:
        t, th = emb.t[m_at[0]], emb.theta[m_at[1]]
        _err(f"check: timelike margin {margin!r} <= 0 at (t, theta) = ({t!r}, {th!r})")
        ok = False
    if not resid <= bound:
        t, th = emb.t[r_at[0]], emb.theta[r_at[1]]
        _err(f"check: membrane residual {resid!r} exceeds bound {bound!r} at (t, theta) = ({t!r}, {th!r})")
        ok = False
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------- oracle compare


def oracle_compare(N: int, epsilon: float, trials: int, seed: int, n: int = 2, omega: float = 1.0,
                   w_cutoff: int = 4) -> list[dict]:
    params = ModelParams(n=n, omega=omega, epsilon=epsilon)
    rng = np.random.default_rng(seed)
    D = assemble_diagonal(params, N)
    rows = []
    for k in range(trials):
        w = SpectralField.random(n, min(w_cutoff, N), rng, decay=0.5)
        w = w * (1.0 / sobolev_norm(w, params.sigma_bar))
        T = assemble_T(w, params, N) if epsilon else D.scale(0.0)
        op = SplitOperator(D, T, params.coupling)
        r = field_to_vector(SpectralField.random(n, N, rng), N)
        try:
            h, rep = resolvent_solve(op, r, params)
            route, terms = rep.route, rep.neumann_terms_used
        except (SolveFailure, SingularClusterError) as exc:
            rows.append({"trial": k, "rel_err": None, "route": "failed", "neumann_terms": 0, "error": str(exc)})
            continue
        hd = dense_solve(op, r)
        rel = float(np.linalg.norm(h - hd) / np.linalg.norm(hd))
        rows.append({"trial": k, "rel_err": rel, "route": route, "neumann_terms": terms})
    return rows


def cmd_oracle_compare(args) -> int:
    if args.n_cutoff < 1 or args.trials < 1 or args.epsilon < 0:
        _err("oracle-compare: need n-cutoff >= 1, trials >= 1, epsilon >= 0")
        return EXIT_CONFIG
    rows = oracle_compare(args.n_cutoff, args.epsilon, args.trials, args.seed, args.n, args.omega)
    tol = 1e-12 if args.epsilon == 0 else 1e-8
    text = io.dumps(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    bad = [r for r in rows if r["rel_err"] is None or r["rel_err"] > tol]
    if bad:
        _err("oracle-compare: failing trials " + ", ".join(str(r["trial"]) for r in bad))
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qpm", description="Quasi-periodic membrane solver.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the Newton iteration from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--trace")
    s.add_argument("--embedding")
    s.add_argument("--override-diophantine", action="store_true")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("scan", help="Monte Carlo scan of the Diophantine condition")
    s.add_argument("--omega-min", type=float, required=True)
    s.add_argument("--omega-max", type=float, required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--tau", type=float, default=2.0)
    s.add_argument("--gamma", type=float, action="append", help="repeat for several values")
    s.add_argument("--L-max", dest="L_max", type=int, default=200)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--csv", default="scan.csv")
    s.add_argument("--summary", default="scan_summary.json")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("check", help="verify a stored solution on a grid")
    s.add_argument("solution")
    s.add_argument("--grid", type=int, default=256)
    s.add_argument("--grid-theta", type=int)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("oracle-compare", help="structured vs dense linear solves")
    s.add_argument("--n-cutoff", type=int, default=8)
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--omega", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_oracle_compare)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
