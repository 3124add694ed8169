"""Configuration files, solution bundles and CSV writers."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .membrane import eval_J_untruncated
from .params import ConfigError, ModelParams
from .spectra import SpectralField, field_from_records, field_to_json, field_from_json, sobolev_norm

__all__ = [
    "RunConfig",
    "load_config",
    "config_hash",
    "SolutionBundle",
    "dumps",
    "residual_sup_bound",
    "write_trace_csv",
    "write_scan_csv",
]

BUNDLE_FORMAT = "qpm-solution/1"
_PARAM_KEYS = {f.name for f in fields(ModelParams)}
_RUN_KEYS = {"N_cap", "seed", "forcing", "manufactured", "grid", "override_diophantine", "rng_seed"}
_OUTPUT_KEYS = {"out", "trace", "embedding"}


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    N_cap: int = 128
    seed: dict = field(default_factory=lambda: {"kind": "single-mode", "k": 0, "l": 1, "j": 1, "amp": 1e-2})
    forcing: list | None = None
    manufactured: list | None = None
    grid: tuple[int, int] = (256, 256)
    override_diophantine: bool = False
    rng_seed: int = 0
    outputs: dict = field(default_factory=dict)

    def semantic(self) -> dict:
        """Everything that influences the computed answer (output paths excluded)."""
        return {
            "params": self.params.to_dict(),
            "N_cap": self.N_cap,
            "seed": self.seed,
            "forcing": self.forcing,
            "manufactured": self.manufactured,
            "grid": list(self.grid),
            "override_diophantine": self.override_diophantine,
            "rng_seed": self.rng_seed,
        }

    def seed_field(self) -> SpectralField:
        p = self.params
        kind = self.seed.get("kind")
        if kind == "zero":
            return SpectralField.zeros(p.n, p.N0)
        if kind == "single-mode":
            s = self.seed
            return SpectralField.cosine(p.n, p.N0, int(s["k"]), int(s["l"]), int(s["j"]), float(s["amp"]))
        if kind == "random":
            rng = np.random.default_rng(int(self.seed.get("seed", self.rng_seed)))
            w = SpectralField.random(p.n, p.N0, rng, decay=float(self.seed.get("decay", 0.5)))
            return w * (float(self.seed["norm"]) / sobolev_norm(w, p.sigma_bar))
        raise ConfigError(f"unknown seed kind {kind!r}")

    def reference_field(self) -> SpectralField | None:
        if self.manufactured is None:
            return None
        N = max(max(abs(int(r["l"])), abs(int(r["j"]))) for r in self.manufactured)
        return field_from_records(self.params.n, N, self.manufactured)

    def forcing_field(self) -> SpectralField | None:
        if self.manufactured is not None:
            return eval_J_untruncated(self.reference_field(), self.params)
        if self.forcing:
            N = max(max(abs(int(r["l"])), abs(int(r["j"]))) for r in self.forcing)
            return field_from_records(self.params.n, N, self.forcing)
        return None


def _check_modes(records, n: int, what: str):
    if not isinstance(records, list) or not records:
        raise ConfigError(f"{what} must be a nonempty list of {{k, l, j, re, im}} records")
    for r in records:
        if set(r) != {"k", "l", "j", "re", "im"}:
            raise ConfigError(f"{what} record {r!r} must have exactly the keys k, l, j, re, im")
        if not 0 <= int(r["k"]) < n:
            raise ConfigError(f"{what} component index {r['k']} out of range")


def load_config(source: str | Path | dict) -> RunConfig:
    """Parse and validate a run configuration (a path, JSON text or a dict)."""
    if isinstance(source, dict):
        raw = dict(source)
    else:
        try:
            text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
            raw = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _PARAM_KEYS - _RUN_KEYS - _OUTPUT_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    try:
        params = ModelParams.from_dict({k: raw[k] for k in raw if k in _PARAM_KEYS})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    kw: dict[str, Any] = {"params": params}
    if "N_cap" in raw:
        if not isinstance(raw["N_cap"], int) or not 1 <= raw["N_cap"] <= 128:
            raise ConfigError("N_cap must be an integer in [1, 128]")
        kw["N_cap"] = raw["N_cap"]
    if "seed" in raw:
        s = raw["seed"]
        if not isinstance(s, dict) or s.get("kind") not in ("zero", "single-mode", "random"):
            raise ConfigError("seed must be {kind: zero | single-mode | random, ...}")
        need = {"zero": set(), "single-mode": {"k", "l", "j", "amp"}, "random": {"norm"}}[s["kind"]]
        allowed = need | {"kind"} | ({"seed", "decay"} if s["kind"] == "random" else set())
        if not need <= set(s) or not set(s) <= allowed:
            raise ConfigError(f"seed of kind {s['kind']} needs keys {sorted(need)}")
        kw["seed"] = s
    if raw.get("forcing") is not None and raw.get("manufactured") is not None:
        raise ConfigError("give either forcing or manufactured, not both")
    for key in ("forcing", "manufactured"):
        if raw.get(key) is not None:
            _check_modes(raw[key], params.n, key)
            kw[key] = raw[key]
    if "grid" in raw:
        g = raw["grid"]
        if not (isinstance(g, list) and len(g) == 2 and all(isinstance(x, int) and x >= 4 for x in g)):
            raise ConfigError("grid must be two integers >= 4")
        kw["grid"] = tuple(g)
    if "override_diophantine" in raw:
        kw["override_diophantine"] = bool(raw["override_diophantine"])
    if "rng_seed" in raw:
        kw["rng_seed"] = int(raw["rng_seed"])
    kw["outputs"] = {k: raw[k] for k in _OUTPUT_KEYS if k in raw}
    cfg = RunConfig(**kw)
    cfg.seed_field()  # validates the seed mode against N0
    return cfg


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps(cfg.semantic()).encode()).hexdigest()


def residual_sup_bound(w: SpectralField, params: ModelParams, forcing: SpectralField | None = None) -> float:
    """Upper bound for the sup-norm of the membrane residual of ``w``.

    The residual equals ``eps * (J_omega w + 2 omega^2 eps f(w))`` along the torus;
    the sum of coefficient moduli per component bounds each component pointwise.
    """
    r = eval_J_untruncated(w, params)
    per_comp = np.sum(np.abs(r.coeffs), axis=(1, 2))
    return float(params.epsilon * np.sqrt(np.sum(per_comp**2)))


@dataclass
class SolutionBundle:
    metadata: dict
    solution: SpectralField
    reference: SpectralField | None = None

    def to_json(self) -> dict:
        out = {"format": BUNDLE_FORMAT, "metadata": self.metadata, "solution": field_to_json(self.solution)}
        if self.reference is not None:
            out["reference"] = field_to_json(self.reference)
        return out

    def dumps(self) -> str:
        return dumps(self.to_json())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> SolutionBundle:
        d = json.loads(text)
        if d.get("format") != BUNDLE_FORMAT:
            raise ValueError(f"not a solution bundle (format {d.get('format')!r})")
        ref = field_from_json(d["reference"]) if "reference" in d else None
        return cls(d["metadata"], field_from_json(d["solution"]), ref)

    @classmethod
    def load(cls, path) -> SolutionBundle:
        return cls.loads(Path(path).read_text())

    def params(self) -> ModelParams:
        return ModelParams.from_dict(self.metadata["config"]["params"])


def write_trace_csv(trace, path) -> None:
    from .nash_moser import StepRecord

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(StepRecord.CSV_FIELDS)
        for s in trace.steps:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in s.csv_row()])


def write_scan_csv(scan, path, gamma: float) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["omega", "pass", "min_margin", "argmin_l", "argmin_j"])
        ok = (scan.min_divisor >= gamma) & (scan.min_divisor > 0)
        for i in range(len(scan.omegas)):
            wr.writerow([
                repr(float(scan.omegas[i])),
                int(ok[i]),
                repr(float(scan.min_divisor[i] - gamma)),
                int(scan.argmin_l[i]),
                int(scan.argmin_j[i]),
            ])
