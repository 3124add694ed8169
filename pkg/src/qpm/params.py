"""Scalar parameters of the reduced membrane problem."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace


class ConfigError(ValueError):
    """Invalid or inconsistent parameter set."""


@dataclass(frozen=True)
class ModelParams:
    """Every scalar entering the equation, the small-divisor analysis and the iteration.

    ``gamma1`` defaults to ``gamma`` when left as ``None``.
    """

    n: int = 2
    omega: float = 1.0
    epsilon: float = 1e-3
    gamma: float = 0.01
    tau: float = 2.0
    mu: float = 2.0
    varsigma: float = 1.5
    gamma1: float | None = None
    N0: int = 4
    sigma: float = 0.2
    sigma_bar: float = 0.1
    tol: float = 1e-10
    p_max: int = 8
    omega_window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.gamma1 is None:
            object.__setattr__(self, "gamma1", self.gamma)
        if self.omega_window is not None:
            object.__setattr__(self, "omega_window", tuple(float(x) for x in self.omega_window))
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.n, int) and self.n >= 1, f"n must be a positive integer, got {self.n!r}")
        need(isinstance(self.N0, int) and self.N0 >= 2, f"N0 must be an integer >= 2, got {self.N0!r}")
        need(isinstance(self.p_max, int) and self.p_max >= 1, f"p_max must be a positive integer, got {self.p_max!r}")
        for name in ("omega", "tau", "varsigma", "gamma1", "sigma", "sigma_bar", "tol"):
            v = getattr(self, name)
            need(math.isfinite(v) and v > 0, f"{name} must be positive, got {v!r}")
        need(math.isfinite(self.epsilon) and self.epsilon >= 0, f"epsilon must be >= 0, got {self.epsilon!r}")
        need(0 < self.gamma < 1, f"gamma must lie in (0, 1), got {self.gamma!r}")
        need(self.mu > 1, f"mu must exceed 1, got {self.mu!r}")
        need(0 < self.sigma_bar < self.sigma, "need 0 < sigma_bar < sigma")
        if self.omega_window is not None:
            lo, hi = self.omega_window
            need(lo <= self.omega <= hi, f"omega={self.omega} outside window [{lo}, {hi}]")

    @property
    def coupling(self) -> float:
        """The factor ``2 omega^2 epsilon`` in front of the nonlinearity."""
        return 2.0 * self.omega**2 * self.epsilon

    def with_(self, **changes) -> ModelParams:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["omega_window"] is not None:
            d["omega_window"] = list(d["omega_window"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**d)
