"""Structured inversion of ``D + c T``: Neumann series on regular sites, Schur complement on singular ones."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .divisors import SitePartition, partition_sites
from .operator import SplitOperator, field_to_vector, vector_to_field
from .params import ModelParams
from .spectra import SpectralField, sobolev_norm

__all__ = [
    "NeumannDivergence",
    "SingularClusterError",
    "SolveFailure",
    "NeumannReport",
    "ResolventSolveReport",
    "invert_regular_apply",
    "schur_complement",
    "resolvent_solve",
    "dense_solve",
    "measure_tame_ratio",
    "weighted_inverse_norm",
    "growth_exponent",
]

NEUMANN_REL_TOL = 1e-14
NEUMANN_MAX_TERMS = 200
ROUNDOFF_FLOOR = 1e-10  # relative term size below which stalling is attributed to round-off
RESIDUAL_TOL = 1e-10
DENSE_SOLVE_LIMIT = 8000


class NeumannDivergence(RuntimeError):
    pass


class SingularClusterError(np.linalg.LinAlgError):
    def __init__(self, msg: str, cluster: int | None = None, condition: float = math.inf):
        super().__init__(msg)
        self.cluster = cluster
        self.condition = condition


class SolveFailure(RuntimeError):
    pass


@dataclass
class NeumannReport:
    terms: int = 0
    term_norms: list[float] = field(default_factory=list)
    tail_estimate: float = 0.0
    contraction: float = 0.0


@dataclass
class ResolventSolveReport:
    neumann_terms_used: int = 0
    neumann_tail_estimate: float = 0.0
    schur_condition: float = 1.0
    route: str = "structured"
    measured_tame_ratio: float | None = None
    term_norms: list[float] = field(default_factory=list)
    residual: float = 0.0
    n_singular: int = 0
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "neumann_terms_used": self.neumann_terms_used,
            "neumann_tail_estimate": self.neumann_tail_estimate,
            "schur_condition": self.schur_condition,
            "route": self.route,
            "measured_tame_ratio": self.measured_tame_ratio,
            "residual": self.residual,
            "n_singular": self.n_singular,
            "failure": self.failure,
        }


def _component_index(site_idx: np.ndarray, n: int) -> np.ndarray:
    return (np.asarray(site_idx)[:, None] * n + np.arange(n)[None, :]).ravel()


class _Blocks:
    """Restrictions of a split operator to the regular/singular index sets."""

    def __init__(self, op: SplitOperator, part: SitePartition):
        self.op = op
        self.c = op.coupling
        n = op.n
        self.iR = _component_index(part.R, n)
        self.iS = _component_index(part.S, n)
        dv = op.D.diag_vector()
        self.dR = dv[self.iR]
        self.dS = dv[self.iS]

    def T_from_R(self, x: np.ndarray) -> np.ndarray:
        """``T`` applied to vectors supported on R (full-length result)."""
        full = np.zeros(x.shape[:-1] + (self.op.size,), dtype=complex)
        full[..., self.iR] = x
        return self.op.T.dot(full)

    def T_RR(self, x: np.ndarray) -> np.ndarray:
        return self.T_from_R(x)[..., self.iR]

    def T_columns_S(self) -> np.ndarray:
        """Columns of ``T`` at singular indices, shape (nS, size)."""
        E = np.zeros((len(self.iS), self.op.size), dtype=complex)
        E[np.arange(len(self.iS)), self.iS] = 1.0
        return self.op.T.dot(E)


def invert_regular_apply(
    D_R: np.ndarray,
    T_R,
    rhs: np.ndarray,
    coupling: float,
    rel_tol: float = NEUMANN_REL_TOL,
    max_terms: int = NEUMANN_MAX_TERMS,
) -> tuple[np.ndarray, NeumannReport]:
    """``(D_R + c T_R)^{-1} rhs`` by the series ``sum_m (-c D_R^{-1} T_R)^m D_R^{-1} rhs``.

    ``T_R`` is a callable acting on stacks of R-vectors (or a dense matrix). Several
    right-hand sides may be stacked along leading axes.  Summation stops once every
    column's newest term is below ``rel_tol`` times that column's first term.
    Raises :class:`NeumannDivergence` if the terms grow or ``max_terms`` is reached.
    """
    if not callable(T_R):
        M = np.asarray(T_R)
        T_R = lambda x: x @ M.T  # noqa: E731
    D_R = np.asarray(D_R)
    if np.any(D_R == 0):
        raise NeumannDivergence("zero diagonal entry on the regular block")
    rhs = np.asarray(rhs, dtype=complex)
    term = rhs / D_R
    x = term.copy()
    first = np.linalg.norm(term, axis=-1)
    scale = np.where(first > 0, first, 1.0)
    rep = NeumannReport(terms=1, term_norms=[float(np.max(first / scale, initial=0.0))])
    if coupling == 0 or not np.any(first > 0):
        return x, rep
    prev = 1.0
    q = 0.0
    for m in range(1, max_terms):
        term = -coupling * T_R(term) / D_R
        tn = float(np.max(np.linalg.norm(term, axis=-1) / scale, initial=0.0))
        if not math.isfinite(tn):
            raise NeumannDivergence(f"non-finite Neumann term at index {m}")
        if tn >= prev and m >= 2:
            if prev <= ROUNDOFF_FLOOR:
                # terms have reached transform round-off; the stalled term is noise
                rep.tail_estimate = prev
                rep.contraction = q
                return x, rep
            raise NeumannDivergence(f"Neumann terms stopped decreasing at term {m} (norm {tn:.3e})")
        x += term
        rep.terms = m + 1
        rep.term_norms.append(tn)
        q = tn / prev if prev > 0 else 0.0
        prev = tn
        if tn <= rel_tol:
            rep.contraction = q
            rep.tail_estimate = tn * q / (1 - q) if q < 1 else math.inf
            return x, rep
    raise NeumannDivergence(f"Neumann series not converged after {max_terms} terms")


def schur_complement(blocks: _Blocks) -> tuple[np.ndarray, np.ndarray, NeumannReport]:
    """``J_S - J_S^R J_R^{-1} J_R^S`` with ``J_R^{-1} J_R^S`` computed column-wise.

    Returns the Schur matrix, ``X = J_R^{-1} J_R^S`` (shape (nS, nR), one row per
    singular column) and the Neumann report of the column solves.
    """
    nS = len(blocks.iS)
    if nS == 0:
        return np.zeros((0, 0), dtype=complex), np.zeros((0, len(blocks.iR)), dtype=complex), NeumannReport()
    c = blocks.c
    J_S = np.diag(blocks.dS.astype(complex))
    if c == 0:
        return J_S, np.zeros((nS, len(blocks.iR)), dtype=complex), NeumannReport(terms=1)
    cols = blocks.T_columns_S()  # (nS, size): column s of T
    J_S = J_S + c * cols[:, blocks.iS].T
    J_RS = c * cols[:, blocks.iR]  # row s holds column s of J_R^S
    X, rep = invert_regular_apply(blocks.dR, blocks.T_RR, J_RS, c)
    JSR_X = c * blocks.T_from_R(X)[:, blocks.iS]  # row s: J_S^R X[:, s]
    return J_S - JSR_X.T, X, rep


def dense_solve(op: SplitOperator, rhs: np.ndarray) -> np.ndarray:
    return sla.solve(op.to_dense(), rhs)


def _worst_cluster(part: SitePartition, schur: np.ndarray, n: int) -> int | None:
    if not part.clusters:
        return None
    _, _, vh = np.linalg.svd(schur)
    v = np.abs(vh[-1].conj()) ** 2
    weight = v.reshape(-1, n).sum(axis=1)
    site = tuple(int(x) for x in part.lj[part.S[int(np.argmax(weight))]])
    return part.cluster_of(site)


def _structured(op: SplitOperator, part: SitePartition, r: np.ndarray, report: ResolventSolveReport):
    B = _Blocks(op, part)
    schur, X, rep_s = schur_complement(B)
    rR, rS = r[B.iR], r[B.iS]
    zR, rep_r = invert_regular_apply(B.dR, B.T_RR, rR, B.c)
    report.neumann_terms_used = max(rep_r.terms, rep_s.terms)
    report.neumann_tail_estimate = max(rep_r.tail_estimate, rep_s.tail_estimate)
    report.term_norms = rep_r.term_norms
    report.n_singular = len(part.S)
    h = np.zeros(op.size, dtype=complex)
    h[B.iR] = zR
    if len(B.iS):
        cond = float(np.linalg.cond(schur))
        report.schur_condition = cond
        if not math.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
            k = _worst_cluster(part, schur, op.n)
            where = f"cluster {k}: {part.clusters[k].sites}" if k is not None else "singular block"
            raise SingularClusterError(f"singular Schur complement (cond {cond:.3e}) at {where}", k, cond)
        yS = rS - (B.c * B.T_from_R(zR)[B.iS] if B.c != 0 else 0)
        zS = np.linalg.solve(schur, yS)
        h[B.iR] = zR - zS @ X
        h[B.iS] = zS
    return h


def resolvent_solve(
    op: SplitOperator,
    rhs: SpectralField | np.ndarray,
    params: ModelParams,
    partition: SitePartition | None = None,
    tol: float = RESIDUAL_TOL,
    allow_dense: bool = True,
):
    """Solve ``(D + c T) h = rhs`` through the block factorisation

    ``[[I, 0], [J_S^R J_R^{-1}, I]] diag(J_R, Schur) [[I, J_R^{-1} J_R^S], [0, I]]``.

    If the structured route fails (Neumann divergence or residual above ``tol``)
    a dense LU solve is used instead and the report says so.  A numerically
    singular Schur complement raises :class:`SingularClusterError`.

    Returns ``(h, report)``; ``h`` has the same type as ``rhs``.
    """
    as_field = isinstance(rhs, SpectralField)
    r = field_to_vector(rhs, op.N) if as_field else np.asarray(rhs, dtype=complex)
    if partition is None:
        partition = partition_sites(op.D, params.varsigma)
    report = ResolventSolveReport()
    rn = float(np.linalg.norm(r))
    h = None
    try:
        h = _structured(op, partition, r, report)
        res = float(np.linalg.norm(op.dot(h) - r))
        report.residual = res / rn if rn > 0 else res
        if report.residual > tol:
            report.failure = f"structured residual {report.residual:.3e} above {tol:.1e}"
            h = None
    except NeumannDivergence as exc:
        report.failure = str(exc)
    if h is None:
        if not allow_dense or op.size > DENSE_SOLVE_LIMIT:
            raise SolveFailure(f"structured solve failed ({report.failure}) and dense fallback unavailable")
        h = dense_solve(op, r)
        report.route = "dense-fallback"
        res = float(np.linalg.norm(op.dot(h) - r))
        report.residual = res / rn if rn > 0 else res
        if report.residual > tol:
            raise SolveFailure(f"dense solve residual {report.residual:.3e} above {tol:.1e}")
    if as_field:
        return vector_to_field(h, op.n, op.N), report
    return h, report


def kappa0(tau: float) -> float:
    return tau + 3.0


def measure_tame_ratio(
    op: SplitOperator,
    params: ModelParams,
    s1: float,
    s2: float,
    trials: int,
    rng: np.random.Generator | None = None,
    partition: SitePartition | None = None,
) -> float:
    """Largest ``||J^{-1} h||_{s1} / (N^{tau + kappa0} ||h||_{s2})`` over random real ``h``.

    ``kappa0 = tau + 3``.
    """
    if not s1 < s2:
        raise ValueError("need s1 < s2")
    rng = np.random.default_rng(0) if rng is None else rng
    if partition is None:
        partition = partition_sites(op.D, params.varsigma)
    scale = op.N ** (params.tau + kappa0(params.tau))
    best = 0.0
    for _ in range(trials):
        h = SpectralField.random(op.n, op.N, rng)
        x, _ = resolvent_solve(op, h, params, partition)
        best = max(best, sobolev_norm(x, s1) / (scale * sobolev_norm(h, s2)))
    return best


def weighted_inverse_norm(op: SplitOperator, s1: float, s2: float) -> float:
    """``sup_h ||J^{-1} h||_{s1} / ||h||_{s2}`` in the weighted l2 norm over all components.

    Computed exactly from a dense SVD, so only intended for moderate cutoffs.
    """
    from .operator import sites

    lj = sites(op.N).lj
    wt = np.exp(np.abs(lj).sum(axis=1).astype(float))
    w1 = np.repeat(wt**s1, op.n)
    w2 = np.repeat(wt**s2, op.n)
    Ainv = np.linalg.inv(op.to_dense())
    return float(np.linalg.norm(w1[:, None] * Ainv / w2[None, :], 2))


def growth_exponent(Ns, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(N)``."""
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
