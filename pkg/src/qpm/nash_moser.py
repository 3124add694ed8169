"""Newton iteration on a growing sequence of Fourier truncations."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .divisors import check_diophantine_primary, partition_sites
from .membrane import eval_J
from .operator import SplitOperator, assemble_diagonal, assemble_T
from .params import ModelParams
from .resolvent import resolvent_solve
from .spectra import SpectralField, sobolev_norm

__all__ = [
    "N_CAP",
    "Schedule",
    "StepRecord",
    "IterationTrace",
    "NonDiophantineError",
    "InsufficientDecay",
    "StepFailure",
    "newton_step",
    "run",
    "fit_convergence_rate",
    "uniqueness_probe",
    "UniquenessResult",
]

N_CAP = 128


class NonDiophantineError(ValueError):
    def __init__(self, msg: str, site: tuple[int, int]):
        super().__init__(msg)
        self.site = site


class InsufficientDecay(ValueError):
    pass


class StepFailure(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class Schedule:
    N0: int
    p_max: int
    sigma: float
    sigma_bar: float
    N_cap: int = N_CAP

    @classmethod
    def from_params(cls, params: ModelParams, N_cap: int = N_CAP) -> Schedule:
        return cls(params.N0, params.p_max, params.sigma, params.sigma_bar, N_cap)

    def N_raw(self, p: int) -> int:
        return self.N0**p

    def N(self, p: int) -> int:
        return min(self.N_raw(p), self.N_cap)

    def clamped(self, p: int) -> bool:
        return self.N_raw(p) > self.N_cap

    def sigma_p(self, p: int) -> float:
        return self.sigma_bar + (self.sigma - self.sigma_bar) / 2**p

    def alpha(self, p: int) -> float:
        """``sigma_{p-1} - sigma_p``."""
        return (self.sigma - self.sigma_bar) / 2**p

    def max_N(self) -> int:
        return self.N(self.p_max)


@dataclass
class StepRecord:
    p: int
    N_p: int
    sigma_p: float
    norm_w_p: float
    norm_E_p: float
    norm_E_bar: float
    route: str
    seconds: float
    clamped: bool = False
    neumann_terms: int = 0
    residual_mean: float = 0.0

    CSV_FIELDS = ("p", "N_p", "sigma_p", "norm_w_p", "norm_E_p", "route", "seconds")

    def csv_row(self) -> list:
        return [self.p, self.N_p, self.sigma_p, self.norm_w_p, self.norm_E_p, self.route, self.seconds]


@dataclass
class IterationTrace:
    steps: list[StepRecord] = field(default_factory=list)
    verdict: str = "max-steps"
    message: str = ""
    rate: tuple[float, float] | None = None
    norm_w_final: float = 0.0
    distance_from_constants: float = 0.0
    resonant: bool = False

    @property
    def residuals(self) -> list[float]:
        return [s.norm_E_p for s in self.steps]

    @property
    def final_N(self) -> int:
        return self.steps[-1].N_p if self.steps else 0


def newton_step(
    w_acc: SpectralField,
    params: ModelParams,
    N_p: int,
    forcing: SpectralField | None = None,
    dense: bool | None = None,
):
    """One correction ``w^p`` solving ``(D - 2 omega^2 eps T(w_acc)) w^p = E^{p-1}``.

    ``E^{p-1} = eval_J(w_acc, N_p)``; since the derivative of ``eval_J`` is
    ``-D + 2 omega^2 eps T`` this is the Newton update.  The mean mode is outside
    the index set and is left untouched.  Returns ``(w_p, E_p, report)``.
    """
    E_prev = eval_J(w_acc, params, N_p, forcing)
    D = assemble_diagonal(params, N_p)
    w = w_acc.resize(min(w_acc.N, N_p))
    T = assemble_T(w, params, N_p, dense=dense) if params.epsilon != 0 else D.scale(0.0)
    op = SplitOperator(D, T, -params.coupling)
    part = partition_sites(D, params.varsigma)
    w_p, report = resolvent_solve(op, E_prev.without_mean(), params, part)
    w_p = w_p.real_part()
    E_p = eval_J(w_acc.resize(N_p) + w_p, params, N_p, forcing)
    return w_p, E_p, report


def _require_diophantine(params: ModelParams, L_max: int):
    rep = check_diophantine_primary(params, L_max)
    if not rep.ok:
        raise NonDiophantineError(
            f"omega={params.omega!r} is not Diophantine for n={params.n}: "
            f"|n omega^2 l^2 - j^2| |l|^tau / gamma = {rep.min_ratio:.3e} at (l, j) = {rep.argmin}",
            rep.argmin,
        )
    return rep


def run(
    params: ModelParams,
    w0: SpectralField,
    forcing: SpectralField | None = None,
    override_diophantine: bool = False,
    schedule: Schedule | None = None,
    dense: bool | None = None,
    log=None,
):
    """Iterate Newton steps with ``N_p = N0^p`` (capped) until the residual is below ``tol``.

    Termination needs ``||E^p||`` below ``params.tol`` both at ``sigma_p`` and at
    ``sigma_bar``.  The run aborts as diverged when ``||w||_{sigma_bar} > 1``, when the
    residual grows three steps in a row, or on non-finite values; the last good
    iterate is returned.  Returns ``(w, trace)``.
    """
    sched = schedule or Schedule.from_params(params)
    trace = IterationTrace()
    if w0.n != params.n:
        raise ValueError("seed has the wrong number of components")
    if np.any(np.abs(w0.mean()) > 0):
        raise ValueError("seed must have zero mean")
    if w0.N > sched.N0 and np.any(w0.coeffs != w0.resize(sched.N0).resize(w0.N).coeffs):
        raise ValueError(f"seed has modes beyond N0={sched.N0}")
    try:
        _require_diophantine(params, sched.max_N())
    except NonDiophantineError:
        if not override_diophantine:
            raise
        trace.resonant = True

    w = w0.resize(sched.N0)
    E0 = eval_J(w, params, sched.N0, forcing)
    trace.steps.append(
        StepRecord(0, sched.N0, sched.sigma_p(0), sobolev_norm(w, sched.sigma_p(0)), sobolev_norm(E0, sched.sigma_p(0)),
                   sobolev_norm(E0, sched.sigma_bar), "seed", 0.0)
    )
    grow = 0
    for p in range(1, sched.p_max + 1):
        Np, sp = sched.N(p), sched.sigma_p(p)
        t0 = time.perf_counter()
        try:
            w_p, E_p, rep = newton_step(w, params, Np, forcing, dense=dense)
        except Exception as exc:
            raise StepFailure(f"linear solve failed at step {p} (N={Np}): {exc}", p) from exc
        w_new = w.resize(Np) + w_p
        dt = time.perf_counter() - t0
        rec = StepRecord(
            p, Np, sp, sobolev_norm(w_p, sp), sobolev_norm(E_p, sp), sobolev_norm(E_p, sched.sigma_bar),
            rep.route, dt, sched.clamped(p), rep.neumann_terms_used, float(np.max(np.abs(E_p.mean()))),
        )
        if log:
            log(rec)
        if not (math.isfinite(rec.norm_E_p) and math.isfinite(rec.norm_w_p)):
            trace.verdict, trace.message = "diverged", f"non-finite values at step {p}"
            break
        trace.steps.append(rec)
        w = w_new
        if sobolev_norm(w, sched.sigma_bar) > 1.0:
            trace.verdict, trace.message = "diverged", f"iterate left the unit ball at step {p}"
            break
        grow = grow + 1 if rec.norm_E_p > trace.steps[-2].norm_E_p else 0
        if grow >= 3:
            trace.verdict, trace.message = "diverged", f"residual grew for 3 consecutive steps (step {p})"
            break
        if rec.norm_E_p < params.tol and rec.norm_E_bar < params.tol:
            trace.verdict = "converged"
            break
    else:
        trace.verdict = "stagnated-at-zero" if sobolev_norm(w, sched.sigma_bar) <= params.tol else "max-steps"
    trace.norm_w_final = sobolev_norm(w, sched.sigma_bar)
    trace.distance_from_constants = sobolev_norm(w.without_mean(), sched.sigma_bar)
    try:
        trace.rate = fit_convergence_rate(trace)
    except InsufficientDecay:
        trace.rate = None
    return w, trace


def _decaying_tail(res: list[float], ceiling: float) -> list[tuple[int, float]]:
    pts = [(p, r) for p, r in enumerate(res) if 0 < r < ceiling]
    tail: list[tuple[int, float]] = []
    for p, r in reversed(pts):
        if tail and not (r > tail[0][1] and p == tail[0][0] - 1):
            break
        tail.insert(0, (p, r))
    return tail


def fit_convergence_rate(
    trace: IterationTrace | list[float], last: int | None = None, ceiling: float = 1e-2
) -> tuple[float, float]:
    """Fit ``log(-log E_p) = p * rate + log(-log d)`` over the trailing run of decaying residuals.

    Returns ``(rate, d)``.  ``rate = log 4`` corresponds to ``E_p = d^(4^p)``, ``log 2``
    to quadratic convergence.  ``last`` restricts the fit to the final ``last`` points.
    """
    res = trace.residuals if isinstance(trace, IterationTrace) else list(trace)
    tail = _decaying_tail(res, ceiling)
    if last is not None:
        tail = tail[-last:]
    if len(tail) < 3:
        raise InsufficientDecay(f"need at least 3 decaying steps below {ceiling}, found {len(tail)}")
    p = np.array([t[0] for t in tail], dtype=float)
    y = np.log(-np.log(np.array([t[1] for t in tail])))
    slope, intercept = np.polyfit(p, y, 1)
    return float(slope), float(math.exp(-math.exp(intercept)))


@dataclass
class UniquenessResult:
    verdict: str  # "unique" | "distinct" | "inconclusive"
    max_distance: float
    converged: int
    traces: list[IterationTrace]
    solutions: list[SpectralField]


def uniqueness_probe(
    params: ModelParams,
    seeds: list[SpectralField],
    forcing: SpectralField | None = None,
    threshold: float = 1e-8,
    **run_kwargs,
) -> UniquenessResult:
    """Run from every seed and report the largest pairwise ``sigma_bar`` distance among converged runs."""
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    for s in seeds:
        if sobolev_norm(s, params.sigma_bar) > 1:
            raise ValueError("seeds must lie in the unit ball")
    sols, traces = [], []
    for s in seeds:
        w, tr = run(params, s, forcing, **run_kwargs)
        traces.append(tr)
        if tr.verdict == "converged":
            sols.append(w)
    if len(sols) < 2:
        return UniquenessResult("inconclusive", math.nan, len(sols), traces, sols)
    dist = max(sobolev_norm(a - b, params.sigma_bar) for a, b in itertools.combinations(sols, 2))
    return UniquenessResult("unique" if dist <= threshold else "distinct", dist, len(sols), traces, sols)
