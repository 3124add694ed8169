"""Small divisors: Diophantine predicates, excluded-measure scans and singular-site clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .operator import BlockOperator
from .params import ModelParams

__all__ = [
    "DiophantineReport",
    "check_diophantine_primary",
    "check_diophantine_secondary",
    "ScanResult",
    "measure_scan",
    "min_scaled_divisor",
    "Cluster",
    "ClusterReport",
    "SitePartition",
    "partition_sites",
    "cluster_singular",
    "set_distance",
    "DEFAULT_SEED",
]

DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class DiophantineReport:
    ok: bool
    min_ratio: float  # smallest |divisor| / bound; the condition holds iff this is >= 1
    argmin: tuple[int, int]
    checked: int

    def describe(self) -> str:
        status = "ok" if self.ok else "violated"
        return f"{status}: min ratio {self.min_ratio:.6g} at {self.argmin}"


def check_diophantine_primary(params: ModelParams, L_max: int) -> DiophantineReport:
    """Exhaustive check of ``|n omega^2 l^2 - j^2| >= gamma / |l|^tau``.

    Covers ``0 < |l| <= L_max`` and ``|j| <= ceil(sqrt(n) omega L_max) + 1``.  Rows with
    ``l = 0`` are held to ``j^2 >= gamma``.  Signs of ``l`` and ``j`` do not change the
    divisor, so only nonnegative indices are scanned and the reported argmin is positive.
    """
    if L_max < 1:
        raise ValueError("L_max must be >= 1")
    a = params.n * params.omega**2
    J = math.ceil(math.sqrt(params.n) * params.omega * L_max) + 1
    j = np.arange(0, J + 1, dtype=float)
    # l = 0 rows: |d| = j^2 >= 1, no |l|^tau factor
    best = (1.0 / params.gamma, (0, 1))
    chunk = max(1, 2_000_000 // (J + 1))
    for lo in range(1, L_max + 1, chunk):
        l = np.arange(lo, min(L_max, lo + chunk - 1) + 1, dtype=float)
        ratio = np.abs(a * l[:, None] ** 2 - j[None, :] ** 2) * l[:, None] ** params.tau / params.gamma
        i = np.unravel_index(np.argmin(ratio), ratio.shape)
        if ratio[i] < best[0]:
            best = (float(ratio[i]), (int(l[i[0]]), int(j[i[1]])))
    ok = best[0] >= 1.0 and best[0] > 0
    return DiophantineReport(ok, best[0], best[1], L_max * (J + 1) + J)


def check_diophantine_secondary(params: ModelParams, Q_max: int) -> DiophantineReport:
    """Exhaustive check of ``|omega^2 q - p| >= gamma / max(1, |p|^mu)``.

    Covers ``0 < q <= Q_max`` (the sign flip ``(q, p) -> (-q, -p)`` is a symmetry) and
    ``|p| <= omega^2 Q_max + 1``.
    """
    if Q_max < 1:
        raise ValueError("Q_max must be >= 1")
    w2 = params.omega**2
    P = math.floor(w2 * Q_max) + 1
    p = np.arange(-P, P + 1, dtype=float)
    q = np.arange(1, Q_max + 1, dtype=float)
    ratio = np.abs(w2 * q[:, None] - p[None, :]) * np.maximum(1.0, np.abs(p[None, :]) ** params.mu) / params.gamma
    i = np.unravel_index(np.argmin(ratio), ratio.shape)
    r = float(ratio[i])
    return DiophantineReport(r >= 1.0 and r > 0, r, (int(q[i[0]]), int(p[i[1]])), ratio.size)


def min_scaled_divisor(omegas: np.ndarray, n: int, tau: float, L_max: int):
    """``min_l |n omega^2 l^2 - j^2| l^tau`` over ``1 <= l <= L_max`` for each omega.

    For fixed ``l`` the divisor is smallest at ``j`` = floor or ceil of ``sqrt(n) omega l``,
    so only those two candidates are examined.  Returns (values, argmin_l, argmin_j).
    """
    omegas = np.asarray(omegas, dtype=float)
    l = np.arange(1, L_max + 1, dtype=float)
    x = math.sqrt(n) * omegas[:, None] * l[None, :]
    a = n * omegas[:, None] ** 2 * l[None, :] ** 2
    best = np.full(omegas.shape, np.inf)
    bl = np.zeros(omegas.shape, dtype=int)
    bj = np.zeros(omegas.shape, dtype=int)
    for jc in (np.floor(x), np.ceil(x)):
        v = np.abs(a - jc**2) * l[None, :] ** tau
        k = np.argmin(v, axis=1)
        vk = v[np.arange(len(omegas)), k]
        upd = vk < best
        best[upd] = vk[upd]
        bl[upd] = k[upd] + 1
        bj[upd] = jc[np.arange(len(omegas)), k][upd].astype(int)
    return best, bl, bj


@dataclass(frozen=True)
class ScanResult:
    omegas: np.ndarray
    min_divisor: np.ndarray  # min_l |d| l^tau per sample
    argmin_l: np.ndarray
    argmin_j: np.ndarray
    gamma: float
    seed: int

    @property
    def passed(self) -> np.ndarray:
        return (self.min_divisor >= self.gamma) & (self.min_divisor > 0)

    def excluded_fraction(self, gamma: float | None = None) -> float:
        g = self.gamma if gamma is None else gamma
        return float(np.mean(~((self.min_divisor >= g) & (self.min_divisor > 0))))

    def confidence_interval(self, gamma: float | None = None, level: float = 0.95) -> tuple[float, float]:
        g = self.gamma if gamma is None else gamma
        k = int(np.sum(~((self.min_divisor >= g) & (self.min_divisor > 0))))
        ci = binomtest(k, len(self.omegas)).proportion_ci(confidence_level=level, method="wilson")
        return float(ci.low), float(ci.high)

    def summary(self, gamma: float | None = None) -> dict:
        g = self.gamma if gamma is None else gamma
        lo, hi = self.confidence_interval(g)
        return {"gamma": g, "fraction": self.excluded_fraction(g), "ci_low": lo, "ci_high": hi, "seed": self.seed}


def measure_scan(
    omega_range: tuple[float, float],
    params: ModelParams,
    samples: int,
    L_max: int,
    seed: int = DEFAULT_SEED,
) -> ScanResult:
    """Monte Carlo estimate of the fraction of ``[omega1, omega2]`` failing the primary condition.

    A degenerate range ``omega1 == omega2`` evaluates the single point ``samples`` times.
    """
    lo, hi = map(float, omega_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo or lo <= 0:
        raise ValueError(f"bad omega range [{lo}, {hi}]")
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    om = rng.uniform(lo, hi, size=samples) if hi > lo else np.full(samples, lo)
    vals = np.empty(samples)
    bl = np.empty(samples, dtype=int)
    bj = np.empty(samples, dtype=int)
    step = max(1, 4_000_000 // L_max)
    for i in range(0, samples, step):
        s = slice(i, i + step)
        vals[s], bl[s], bj[s] = min_scaled_divisor(om[s], params.n, params.tau, L_max)
    return ScanResult(om, vals, bl, bj, params.gamma, seed)


# ------------------------------------------------------------- site machinery


@dataclass(frozen=True)
class Cluster:
    sites: tuple[tuple[int, int], ...]

    @property
    def M(self) -> int:
        return max(max(abs(l), abs(j)) for l, j in self.sites)

    @property
    def m(self) -> int:
        return min(max(abs(l), abs(j)) for l, j in self.sites)

    @property
    def dyadic(self) -> bool:
        return self.M <= 2 * self.m


@dataclass(frozen=True)
class ClusterReport:
    clusters: list[Cluster]
    dyadic_ok: bool
    separation_ok: bool
    lam: float
    c_sep: float
    violations: list[tuple] = field(default_factory=list)


@dataclass(frozen=True)
class SitePartition:
    """Regular/singular split of ``Omega_N`` minus the origin.

    ``R`` and ``S`` are index arrays into :func:`qpm.operator.sites`.
    """

    N: int
    lj: np.ndarray
    R: np.ndarray
    S: np.ndarray
    report: ClusterReport

    @property
    def clusters(self) -> list[Cluster]:
        return self.report.clusters

    def singular_modes(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in self.lj[i]) for i in self.S]

    def regular_modes(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in self.lj[i]) for i in self.R]

    def cluster_of(self, site: tuple[int, int]) -> int:
        for k, c in enumerate(self.clusters):
            if site in c.sites:
                return k
        raise KeyError(site)


def set_distance(A, B) -> int:
    a = np.asarray(A)
    b = np.asarray(B)
    return int(np.min(np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=-1)))


def _separation_scale(Ma: int, Mb: int, lam: float, c_sep: float) -> float:
    return c_sep * (Ma + Mb) ** lam


def cluster_singular(S, lam: float = 0.5, c_sep: float = 1.0) -> ClusterReport:
    """Group singular sites into clusters that are well separated and dyadic.

    Clusters closer than ``c_sep (M_a + M_b)^lam`` are merged until none are;
    clusters with ``M > 2 m`` are then cut into magnitude shells.  Both properties
    are re-examined at the end and reported rather than enforced.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    if c_sep <= 0:
        raise ValueError("c_sep must be positive")
    pts = [tuple(int(v) for v in s) for s in S]
    if not pts:
        return ClusterReport([], True, True, lam, c_sep)
    groups: list[list[tuple[int, int]]] = [[p] for p in sorted(set(pts))]

    def mag(g):
        return max(max(abs(l), abs(j)) for l, j in g)

    merged = True
    while merged:
        merged = False
        k = len(groups)
        for a in range(k):
            for b in range(a + 1, k):
                if set_distance(groups[a], groups[b]) < _separation_scale(mag(groups[a]), mag(groups[b]), lam, c_sep):
                    groups[a] = groups[a] + groups[b]
                    del groups[b]
                    merged = True
                    break
            if merged:
                break

    shells: list[list[tuple[int, int]]] = []
    for g in groups:
        g = sorted(g, key=lambda s: (max(abs(s[0]), abs(s[1])), s))
        cur = [g[0]]
        lo = max(abs(g[0][0]), abs(g[0][1]))
        for s in g[1:]:
            r = max(abs(s[0]), abs(s[1]))
            if r <= 2 * lo:
                cur.append(s)
            else:
                shells.append(cur)
                cur, lo = [s], r
        shells.append(cur)

    clusters = [Cluster(tuple(sorted(c))) for c in shells]
    violations = []
    for a in range(len(clusters)):
        if not clusters[a].dyadic:
            violations.append(("dyadic", a))
        for b in range(a + 1, len(clusters)):
            d = set_distance(clusters[a].sites, clusters[b].sites)
            if d < _separation_scale(clusters[a].M, clusters[b].M, lam, c_sep):
                violations.append(("separation", a, b, d))
    dyadic_ok = not any(v[0] == "dyadic" for v in violations)
    sep_ok = not any(v[0] == "separation" for v in violations)
    return ClusterReport(clusters, dyadic_ok, sep_ok, lam, c_sep, violations)


def partition_sites(D: BlockOperator, varsigma: float, lam: float = 0.5, c_sep: float = 1.0) -> SitePartition:
    """``R = {|d| >= varsigma}``, ``S = {|d| < varsigma}``, then cluster ``S``."""
    if D.tag != "diagonal":
        raise ValueError("partition needs a diagonal operator")
    d = np.abs(np.asarray(D.diag, dtype=float))
    S = np.nonzero(d < varsigma)[0]
    R = np.nonzero(d >= varsigma)[0]
    lj = D.sites.lj
    report = cluster_singular([lj[i] for i in S], lam, c_sep)
    return SitePartition(D.N, lj, R, S, report)
