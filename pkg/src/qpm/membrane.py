"""The Born-Infeld type nonlinearity, its linearization and the membrane embedding.

Field slot conventions: for a field ``w(t, y)`` the first slot ``t`` carries the
fast phase ``omega * time`` and the second slot ``y`` carries ``time + theta``.
All inner products below are bilinear (no conjugation) so that the same code
evaluates complexified probes used when assembling operators column by column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .params import ModelParams
from .spectra import (
    SpectralField,
    alias_free_size,
    derivative_symbol,
    from_grid,
    resize_coeffs,
    to_grid,
)

__all__ = [
    "eval_f",
    "eval_Df",
    "eval_Df_batch",
    "eval_J",
    "eval_J_untruncated",
    "taylor_remainder",
    "diagonal_symbol",
    "EmbeddingSamples",
    "reconstruct_embedding",
    "membrane_lhs",
    "membrane_residual",
    "timelike_margin",
    "write_embedding_csv",
]

_ORDER = ("t", "y", "tt", "ty", "yy")


def _derivative_grids(c: np.ndarray, M: int) -> dict[str, np.ndarray]:
    """Grid samples of the five derivatives of coefficient array(s) ``c`` (batch dims allowed)."""
    N = (c.shape[-1] - 1) // 2
    stack = np.stack([c * derivative_symbol(N, name) for name in _ORDER], axis=0)
    g = to_grid(stack, M)
    return dict(zip(_ORDER, g))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # component axis is the one just before the two grid axes
    return np.sum(a * b, axis=-3)


def _coefficient_grids(w: dict[str, np.ndarray], eps: float):
    P = np.sum(w["y"], axis=-3) + 0.5 * eps * _dot(w["y"], w["y"])
    Q = np.sum(w["t"], axis=-3) + eps * _dot(w["t"], w["y"])
    R = 0.5 * eps * _dot(w["t"], w["t"])
    return P, Q, R


def _f_on_grid(w: dict[str, np.ndarray], eps: float) -> np.ndarray:
    P, Q, R = _coefficient_grids(w, eps)
    return P[..., None, :, :] * w["tt"] - Q[..., None, :, :] * w["ty"] + R[..., None, :, :] * w["yy"]


def eval_f(w: SpectralField, params: ModelParams, N_out: int) -> SpectralField:
    """Coefficients up to ``N_out`` of

    ``(sum_k w_ky + eps/2 |w_y|^2) w_tt - (sum_k w_kt + eps <w_t, w_y>) w_ty + eps/2 |w_t|^2 w_yy``.
    """
    M = alias_free_size(3 * w.N, N_out)
    g = _derivative_grids(w.coeffs, M)
    return SpectralField(from_grid(_f_on_grid(g, params.epsilon), N_out))


def _Df_on_grid(w: dict, h: dict, eps: float, printed: bool = False) -> np.ndarray:
    P, Q, R = _coefficient_grids(w, eps)
    dP = np.sum(h["y"], axis=-3) + eps * _dot(w["y"], h["y"])
    dQ = np.sum(h["t"], axis=-3) + eps * (_dot(h["t"], w["y"]) + _dot(w["t"], h["y"]))
    dR = eps * _dot(w["t"], h["t"])
    if printed:
        # the published form: w_ky inside the h_ty prefactor and a doubled eps <w_y, h_y> term
        Q = np.sum(w["y"], axis=-3) + eps * _dot(w["t"], w["y"])
        dP = np.sum(h["y"], axis=-3) + 2 * eps * _dot(w["y"], h["y"])
    x = lambda a: a[..., None, :, :]  # noqa: E731
    return (
        x(P) * h["tt"] + x(dP) * w["tt"]
        - x(Q) * h["ty"] - x(dQ) * w["ty"]
        + x(R) * h["yy"] + x(dR) * w["yy"]
    )


def eval_Df_batch(
    w: SpectralField, H: np.ndarray, params: ModelParams, N_out: int, printed: bool = False
) -> np.ndarray:
    """``Df(w) h`` for a stack of direction coefficient arrays ``H[..., n, 2Nh+1, 2Nh+1]``."""
    H = np.asarray(H, dtype=complex)
    if H.shape[-3] != w.n:
        raise ValueError(f"dimension mismatch: w has {w.n} components, h has {H.shape[-3]}")
    Nh = (H.shape[-1] - 1) // 2
    M = alias_free_size(2 * w.N + Nh, N_out)
    gw = _derivative_grids(w.coeffs, M)
    gh = _derivative_grids(H, M)
    return from_grid(_Df_on_grid(gw, gh, params.epsilon, printed), N_out)


def eval_Df(
    w: SpectralField, h: SpectralField, params: ModelParams, N_out: int, printed: bool = False
) -> SpectralField:
    """Frechet derivative of :func:`eval_f` at ``w`` applied to ``h``.

    ``printed=True`` evaluates the uncorrected published expression instead; it
    exists only so that tests can show it is not the derivative.
    """
    if h.n != w.n:
        raise ValueError(f"dimension mismatch: w has {w.n} components, h has {h.n}")
    return SpectralField(eval_Df_batch(w, h.coeffs, params, N_out, printed))


def taylor_remainder(
    w: SpectralField, h: SpectralField, params: ModelParams, N_out: int, printed: bool = False
) -> SpectralField:
    """Closed form of ``f(w + h) - f(w) - Df(w) h``.

    With ``dP = sum h_ky + eps <w_y,h_y>`` and friends the exact remainder is
    ``dP h_tt + eps/2 |h_y|^2 (w_tt + h_tt) - dQ h_ty - eps <h_t,h_y> (w_ty + h_ty)
    + dR h_yy + eps/2 |h_t|^2 (w_yy + h_yy)``.
    """
    eps = params.epsilon
    N = max(w.N, h.N)
    M = alias_free_size(3 * N, N_out)
    gw = _derivative_grids(resize_coeffs(w.coeffs, N), M)
    gh = _derivative_grids(resize_coeffs(h.coeffs, N), M)
    x = lambda a: a[None]  # noqa: E731
    hy2 = _dot(gh["y"], gh["y"])
    ht2 = _dot(gh["t"], gh["t"])
    hth = _dot(gh["t"], gh["y"])
    if printed:
        r = (
            x(np.sum(gh["y"], axis=0)) * gh["tt"]
            + x(0.5 * eps * (2 * _dot(gw["y"], gh["y"]) + hy2)) * gh["tt"]
            + x(eps * hy2) * gw["tt"]
            + x(np.sum(gh["t"], axis=0)) * gh["ty"]
            + eps * (x(_dot(gw["t"], gh["y"]) + _dot(gw["y"], gh["t"])) * gh["ty"] + x(hth) * gw["ty"])
            + x(2 * eps * (_dot(gw["t"], gh["t"]) + ht2)) * gh["yy"]
        )
        return SpectralField(from_grid(r, N_out))
    dP = np.sum(gh["y"], axis=0) + eps * _dot(gw["y"], gh["y"])
    dQ = np.sum(gh["t"], axis=0) + eps * (_dot(gh["t"], gw["y"]) + _dot(gw["t"], gh["y"]))
    dR = eps * _dot(gw["t"], gh["t"])
    r = (
        x(dP) * gh["tt"] + x(0.5 * eps * hy2) * (gw["tt"] + gh["tt"])
        - x(dQ) * gh["ty"] - x(eps * hth) * (gw["ty"] + gh["ty"])
        + x(dR) * gh["yy"] + x(0.5 * eps * ht2) * (gw["yy"] + gh["yy"])
    )
    return SpectralField(from_grid(r, N_out))


def diagonal_symbol(n: int, omega: float, N: int) -> np.ndarray:
    """``d(l, j) = n omega^2 l^2 - j^2`` on the (2N+1)^2 mode grid, rows indexed by l."""
    k = np.arange(-N, N + 1, dtype=float)
    return n * omega**2 * k[:, None] ** 2 - k[None, :] ** 2


def eval_J(
    w: SpectralField, params: ModelParams, N: int, forcing: SpectralField | None = None
) -> SpectralField:
    """Truncated map ``J_omega w + 2 omega^2 eps Psi_N f(w) - forcing`` on modes ``<= N``.

    ``J_omega = n omega^2 d_tt - d_yy`` acts on mode (l, j) as multiplication by ``-d(l, j)``.
    Modes of ``w`` beyond ``N`` are dropped first.
    """
    wN = w.resize(N)
    out = -diagonal_symbol(params.n, params.omega, N)[None] * wN.coeffs
    if params.epsilon != 0:
        out = out + params.coupling * eval_f(wN, params, N).coeffs
    if forcing is not None:
        if forcing.n != w.n:
            raise ValueError("forcing has the wrong number of components")
        out = out - resize_coeffs(forcing.coeffs, N)
    return SpectralField(out)


def eval_J_untruncated(w: SpectralField, params: ModelParams) -> SpectralField:
    """``J_omega w + 2 omega^2 eps f(w)`` keeping every mode of the cubic product."""
    return eval_J(w, params, 3 * w.N)


# ---------------------------------------------------------------- embedding


@dataclass(frozen=True)
class EmbeddingSamples:
    """Samples of ``x(t, theta)`` and its partials on a uniform ``(t, theta)`` grid.

    Arrays have shape ``(P_t, P_theta, n)``.
    """

    t: np.ndarray
    theta: np.ndarray
    x: np.ndarray
    x_t: np.ndarray
    x_th: np.ndarray
    x_tt: np.ndarray
    x_tth: np.ndarray
    x_thth: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[-1]

    @property
    def grid(self) -> tuple[int, int]:
        return self.x.shape[0], self.x.shape[1]


def _torus_eval(c: np.ndarray, omega: float, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``sum c[k,l,j] exp(i(l omega t + j (t + theta)))`` at all (t, theta) pairs, shape (Pt, Pth, n)."""
    N = (c.shape[-1] - 1) // 2
    k = np.arange(-N, N + 1)
    El = np.exp(1j * omega * np.outer(t, k))  # (Pt, L)
    Ej_t = np.exp(1j * np.outer(t, k))  # (Pt, J)
    Ej_th = np.exp(1j * np.outer(k, theta))  # (J, Pth)
    B = np.einsum("pl,klj->kpj", El, c) * Ej_t[None]
    return np.moveaxis((B @ Ej_th).real, 0, -1)


def reconstruct_embedding(
    u: SpectralField, params: ModelParams, grid: tuple[int, int] = (256, 256)
) -> EmbeddingSamples:
    """``x_k(t, theta) = t + theta + eps u_k(omega t, t + theta)`` with chain-rule partials.

    The mean of ``u`` is a gauge constant and is taken to be zero.
    """
    Pt, Pth = grid
    t = 2 * np.pi * np.arange(Pt) / Pt
    theta = 2 * np.pi * np.arange(Pth) / Pth
    eps, om = params.epsilon, params.omega
    c = u.without_mean().coeffs
    N = u.N

    def ev(which: str | None) -> np.ndarray:
        cc = c if which is None else c * derivative_symbol(N, which)
        return _torus_eval(cc, om, t, theta)

    u0 = ev(None)
    uT, uY = ev("t"), ev("y")
    uTT, uTY, uYY = ev("tt"), ev("ty"), ev("yy")
    base = (t[:, None] + theta[None, :])[..., None] * np.ones(u.n)
    return EmbeddingSamples(
        t=t,
        theta=theta,
        x=base + eps * u0,
        x_t=1 + eps * (uY + om * uT),
        x_th=1 + eps * uY,
        x_tt=eps * (uYY + 2 * om * uTY + om**2 * uTT),
        x_tth=eps * (uYY + om * uTY),
        x_thth=eps * uYY,
    )


def membrane_lhs(x: EmbeddingSamples) -> np.ndarray:
    """``|x_th|^2 x_tt - 2 <x_t, x_th> x_tth + (|x_t|^2 - 1) x_thth`` at every grid point."""
    th2 = np.sum(x.x_th**2, axis=-1, keepdims=True)
    tth = np.sum(x.x_t * x.x_th, axis=-1, keepdims=True)
    t2 = np.sum(x.x_t**2, axis=-1, keepdims=True)
    return th2 * x.x_tt - 2 * tth * x.x_tth + (t2 - 1) * x.x_thth


def membrane_residual(x: EmbeddingSamples, where: bool = False):
    """Sup over the grid of the Euclidean norm of the membrane equation.

    With ``where=True`` also return the grid index of the worst point.
    """
    r = np.linalg.norm(membrane_lhs(x), axis=-1)
    val = float(r.max())
    if where:
        return val, tuple(int(i) for i in np.unravel_index(np.argmax(r), r.shape))
    return val


def margin_field(x: EmbeddingSamples) -> np.ndarray:
    tth = np.sum(x.x_t * x.x_th, axis=-1)
    t2 = np.sum(x.x_t**2, axis=-1)
    th2 = np.sum(x.x_th**2, axis=-1)
    return tth**2 - (t2 - 1) * th2


def timelike_margin(x: EmbeddingSamples, where: bool = False):
    """Minimum over the grid of ``<x_t, x_th>^2 - (|x_t|^2 - 1) |x_th|^2``."""
    m = margin_field(x)
    val = float(m.min())
    if where:
        return val, tuple(int(i) for i in np.unravel_index(np.argmin(m), m.shape))
    return val


def write_embedding_csv(x: EmbeddingSamples, path) -> None:
    m = margin_field(x)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "theta"] + [f"x_{k + 1}" for k in range(x.n)] + ["margin"])
        for p in range(x.grid[0]):
            for q in range(x.grid[1]):
                wr.writerow(
                    [repr(float(x.t[p])), repr(float(x.theta[q]))]
                    + [repr(float(v)) for v in x.x[p, q]]
                    + [repr(float(m[p, q]))]
                )
