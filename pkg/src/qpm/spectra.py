"""Truncated Fourier fields on the 2-torus.

A field is stored as a dense complex array ``coeffs[k, l + N, j + N]`` holding
the coefficient of ``exp(i(l t + j y))`` in component ``k``.  The first torus
slot is called ``t`` and the second ``y``.  Truncation uses the max-norm
``|(l, j)| = max(|l|, |j|)`` while Sobolev weights use ``|l| + |j|``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import scipy.fft as sfft

__all__ = [
    "SpectralField",
    "sobolev_norm",
    "sobolev_weights",
    "project",
    "differentiate",
    "pointwise_product",
    "synthesize",
    "analyze",
    "to_grid",
    "from_grid",
    "alias_free_size",
    "field_to_json",
    "field_from_json",
]

DERIVATIVES = {
    "t": (1, 0),
    "y": (0, 1),
    "tt": (2, 0),
    "ty": (1, 1),
    "yy": (0, 2),
}


def _workers() -> int:
    return int(os.environ.get("QPM_THREADS", "1"))


def mode_range(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of an R^n valued trigonometric polynomial on T^2."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[1] != c.shape[2] or c.shape[1] % 2 != 1:
            raise ValueError(f"coeffs must have shape (n, 2N+1, 2N+1), got {c.shape}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def N(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @classmethod
    def zeros(cls, n: int, N: int) -> SpectralField:
        return cls(np.zeros((n, 2 * N + 1, 2 * N + 1), dtype=complex))

    @classmethod
    def from_modes(
        cls, n: int, N: int, modes: Mapping[tuple[int, int, int], complex]
    ) -> SpectralField:
        """Build a real field from ``{(k, l, j): coefficient}``.

        The conjugate partner ``(k, -l, -j)`` is filled in automatically; if both
        partners are given they must already be conjugate.
        """
        c = np.zeros((n, 2 * N + 1, 2 * N + 1), dtype=complex)
        for (k, l, j), val in modes.items():
            if max(abs(l), abs(j)) > N:
                raise ValueError(f"mode ({l}, {j}) outside cutoff {N}")
            c[k, l + N, j + N] = val
            if (l, j) == (0, 0):
                c[k, N, N] = complex(val).real
            else:
                c[k, -l + N, -j + N] = np.conj(val)
        for (k, l, j), val in modes.items():
            if abs(c[k, l + N, j + N] - val) > 1e-14 * max(1.0, abs(val)):
                raise ValueError(f"inconsistent conjugate pair at ({k}, {l}, {j})")
        return cls(c)

    @classmethod
    def cosine(cls, n: int, N: int, k: int, l: int, j: int, amp: float = 1.0):
        """``amp * cos(l t + j y)`` in component ``k``."""
        if (l, j) == (0, 0):
            return cls.from_modes(n, N, {(k, 0, 0): amp})
        return cls.from_modes(n, N, {(k, l, j): amp / 2})

    @classmethod
    def random(
        cls,
        n: int,
        N: int,
        rng: np.random.Generator,
        decay: float = 0.0,
        zero_mean: bool = True,
        scale: float = 1.0,
    ) -> SpectralField:
        """Random real field with coefficients damped by ``exp(-decay(|l|+|j|))``."""
        ls = mode_range(N)
        c = rng.standard_normal((n, 2 * N + 1, 2 * N + 1)) + 1j * rng.standard_normal(
            (n, 2 * N + 1, 2 * N + 1)
        )
        c *= np.exp(-decay * (np.abs(ls)[:, None] + np.abs(ls)[None, :]))
        c = 0.5 * (c + np.conj(c[:, ::-1, ::-1]))
        if zero_mean:
            c[:, N, N] = 0.0
        return cls(scale * c)

    def mode(self, l: int, j: int) -> np.ndarray:
        N = self.N
        if max(abs(l), abs(j)) > N:
            return np.zeros(self.n, dtype=complex)
        return self.coeffs[:, l + N, j + N].copy()

    def resize(self, N: int) -> SpectralField:
        """Truncate or zero-pad to cutoff ``N``."""
        return SpectralField(resize_coeffs(self.coeffs, N))

    def mean(self) -> np.ndarray:
        return self.coeffs[:, self.N, self.N].copy()

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        return bool(np.max(np.abs(c - np.conj(c[:, ::-1, ::-1])), initial=0.0) <= tol)

    def real_part(self) -> SpectralField:
        """Nearest reality-constrained field (symmetrised coefficients)."""
        c = self.coeffs
        return SpectralField(0.5 * (c + np.conj(c[:, ::-1, ::-1])))

    def without_mean(self) -> SpectralField:
        c = self.coeffs.copy()
        c[:, self.N, self.N] = 0.0
        return SpectralField(c)

    def _coerce(self, other: SpectralField) -> tuple[np.ndarray, np.ndarray]:
        if other.n != self.n:
            raise ValueError(f"component count mismatch: {self.n} vs {other.n}")
        N = max(self.N, other.N)
        return resize_coeffs(self.coeffs, N), resize_coeffs(other.coeffs, N)

    def __add__(self, other: SpectralField) -> SpectralField:
        a, b = self._coerce(other)
        return SpectralField(a + b)

    def __sub__(self, other: SpectralField) -> SpectralField:
        a, b = self._coerce(other)
        return SpectralField(a - b)

    def __neg__(self) -> SpectralField:
        return SpectralField(-self.coeffs)

    def __mul__(self, scalar) -> SpectralField:
        return SpectralField(self.coeffs * scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"SpectralField(n={self.n}, N={self.N})"


def resize_coeffs(c: np.ndarray, N: int) -> np.ndarray:
    """Resize the two trailing mode axes of ``c`` to cutoff ``N``."""
    N_old = (c.shape[-1] - 1) // 2
    if N == N_old:
        return c
    if N < N_old:
        s = slice(N_old - N, N_old + N + 1)
        return c[..., s, s].copy()
    out = np.zeros(c.shape[:-2] + (2 * N + 1, 2 * N + 1), dtype=complex)
    s = slice(N - N_old, N + N_old + 1)
    out[..., s, s] = c
    return out


def sobolev_weights(N: int, s: float) -> np.ndarray:
    """``exp((|l| + |j|) s)`` on the (2N+1)^2 mode grid (square root of the norm weight)."""
    a = np.abs(mode_range(N))
    return np.exp(s * (a[:, None] + a[None, :]))


def sobolev_norm(u: SpectralField, s: float) -> float:
    """Sum over components of the weighted l2 norms of the coefficients."""
    if s < 0:
        raise ValueError("Sobolev index must be nonnegative")
    weighted = np.abs(u.coeffs) * sobolev_weights(u.N, s)
    return float(np.sum(np.sqrt(np.sum(weighted**2, axis=(1, 2)))))


def cutoff_mask(N_field: int, N: int) -> np.ndarray:
    a = np.abs(mode_range(N_field))
    return np.maximum(a[:, None], a[None, :]) <= N


def project(u: SpectralField, N: int) -> SpectralField:
    """Drop every mode with max(|l|, |j|) > N (the cutoff of the result is min(N, u.N))."""
    if N < 0:
        raise ValueError("cutoff must be nonnegative")
    return u.resize(min(N, u.N))


def derivative_symbol(N: int, which: str) -> np.ndarray:
    try:
        a, b = DERIVATIVES[which]
    except KeyError:
        raise ValueError(f"unknown derivative {which!r}; expected one of {sorted(DERIVATIVES)}")
    k = mode_range(N).astype(complex)
    return (1j * k[:, None]) ** a * (1j * k[None, :]) ** b


def differentiate(u: SpectralField, which: str) -> SpectralField:
    """Spectral derivative: mode (l, j) times il, ij, -l^2, -lj or -j^2."""
    return SpectralField(u.coeffs * derivative_symbol(u.N, which))


def _grid_index(N: int, P: int) -> np.ndarray:
    return mode_range(N) % P


def to_grid(c: np.ndarray, Pt: int, Py: int | None = None) -> np.ndarray:
    """Complex samples on a ``Pt x Py`` uniform grid of coefficient array(s) ``c``.

    Works on any leading batch shape. Requires ``Pt, Py >= 2N + 1``.
    """
    Py = Pt if Py is None else Py
    N = (c.shape[-1] - 1) // 2
    if min(Pt, Py) < 2 * N + 1:
        raise ValueError(f"grid {Pt}x{Py} too small for cutoff {N}")
    G = np.zeros(c.shape[:-2] + (Pt, Py), dtype=complex)
    it = _grid_index(N, Pt)
    iy = _grid_index(N, Py)
    G[..., it[:, None], iy[None, :]] = c
    return sfft.ifft2(G, norm="forward", workers=_workers())


def from_grid(samples: np.ndarray, N: int) -> np.ndarray:
    """Fourier coefficients up to cutoff ``N`` of grid samples (inverse of :func:`to_grid`)."""
    Pt, Py = samples.shape[-2:]
    if min(Pt, Py) < 2 * N + 1:
        raise ValueError(f"grid {Pt}x{Py} too small for cutoff {N}")
    G = sfft.fft2(samples, norm="forward", workers=_workers())
    it = _grid_index(N, Pt)
    iy = _grid_index(N, Py)
    return G[..., it[:, None], iy[None, :]]


def alias_free_size(degree: int, N_out: int) -> int:
    """Smallest fast FFT length that recovers modes <= N_out of a degree-``degree`` product."""
    return sfft.next_fast_len(max(degree + N_out + 1, 2 * max(degree, N_out) + 1))


def pointwise_product(u: SpectralField, v: SpectralField, N_out: int) -> SpectralField:
    """Coefficients of the pointwise product ``u v`` truncated to ``N_out``.

    Component counts must agree unless one factor is scalar (n = 1), in which case
    it multiplies every component of the other.
    """
    if u.n != v.n and 1 not in (u.n, v.n):
        raise ValueError(f"incompatible component counts {u.n} and {v.n}")
    M = alias_free_size(u.N + v.N, N_out)
    prod = to_grid(u.coeffs, M) * to_grid(v.coeffs, M)
    return SpectralField(from_grid(prod, N_out))


def synthesize(u: SpectralField, grid: tuple[int, int]) -> np.ndarray:
    """Real samples of shape ``(Pt, Py, n)`` at ``t_p = 2 pi p / Pt``, ``y_q = 2 pi q / Py``."""
    Pt, Py = grid
    return np.moveaxis(to_grid(u.coeffs, Pt, Py).real, 0, -1)


def analyze(samples: np.ndarray, N: int) -> SpectralField:
    """Coefficients up to ``N`` of real samples shaped ``(Pt, Py, n)``."""
    return SpectralField(from_grid(np.moveaxis(np.asarray(samples, dtype=float), -1, 0), N)).real_part()


def field_to_records(u: SpectralField) -> list[dict]:
    """Half-plane records ``l > 0`` or ``l = 0, j >= 0``; the rest follows by symmetry."""
    N = u.N
    out = []
    for k in range(u.n):
        for l in range(0, N + 1):
            for j in range(-N, N + 1):
                if l == 0 and j < 0:
                    continue
                c = u.coeffs[k, l + N, j + N]
                if c != 0:
                    out.append({"k": k, "l": l, "j": j, "re": float(c.real), "im": float(c.imag)})
    return out


def field_from_records(n: int, N: int, records: Iterable[Mapping]) -> SpectralField:
    modes = {}
    for r in records:
        l, j = int(r["l"]), int(r["j"])
        if l < 0 or (l == 0 and j < 0):
            raise ValueError(f"record ({l}, {j}) outside the stored half-plane")
        modes[(int(r["k"]), l, j)] = complex(r["re"], r["im"])
    return SpectralField.from_modes(n, N, modes)


def field_to_json(u: SpectralField) -> dict:
    return {"n": u.n, "N": u.N, "modes": field_to_records(u)}


def field_from_json(payload: Mapping | str) -> SpectralField:
    if isinstance(payload, str):
        payload = json.loads(payload)
    return field_from_records(int(payload["n"]), int(payload["N"]), payload["modes"])
