"""Run configuration: a flat key = value text file with a versioned schema.

Unknown keys are rejected, every numeric default is recorded back into the
emitted JSON reports, and identical configs (plus seed) give byte-identical
outputs downstream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .potential import (
    PeriodicPotential,
    cosine_potential,
    free_potential,
    lame_potential,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    potential: str = "cosine"  # free | cosine | lame | fourier
    q: float = 1.0
    kappa: float = 0.9
    cos_coeffs: tuple[float, ...] = (0.0,)
    sin_coeffs: tuple[float, ...] = (0.0,)
    period: float = 1.0
    mu: float = 1.0
    n_max: int = 64
    n_bands: int = 0  # 0 -> n_max + 2
    nodes_per_band: int = 48
    bloch_nodes: int = 40
    nx: int = 128
    t_list: tuple[float, ...] = (20.0, 40.0, 80.0, 160.0, 320.0)
    r_spacing: float = 0.1
    r_below: float = 25.0
    r_above: float = 4.0
    x_offsets: int = 16
    ode_rate: float = 16.0
    dscan_rate: float = 48.0
    dset_k_max: float = 0.0  # 0 -> n_max-derived
    quad_rel_tol: float = 1e-8
    quad_max_panels: int = 8192
    delta_edge_factor: float = 1e-2
    cutoff_c: float = 8.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("cos_coeffs", "sin_coeffs", "t_list"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        for name in ("ode_rate", "dscan_rate", "quad_rel_tol", "delta_edge_factor",
                     "r_spacing", "period"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.potential not in ("free", "cosine", "lame", "fourier"):
            raise ValueError(f"unknown potential preset '{self.potential}'")

    # -- derived objects -------------------------------------------------

    def build_potential(self) -> PeriodicPotential:
        if self.potential == "free":
            return free_potential(self.period)
        if self.potential == "cosine":
            return cosine_potential(self.q, self.period)
        if self.potential == "lame":
            return lame_potential(self.kappa)
        return PeriodicPotential(self.cos_coeffs, self.sin_coeffs, self.period)

    @property
    def effective_n_bands(self) -> int:
        return self.n_bands if self.n_bands > 0 else self.n_max + 2

    @property
    def effective_dset_k_max(self) -> float:
        if self.dset_k_max > 0:
            return self.dset_k_max
        return (self.n_max - 1) * np.pi / self.period

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cos_coeffs"] = list(self.cos_coeffs)
        d["sin_coeffs"] = list(self.sin_coeffs)
        d["t_list"] = list(self.t_list)
        return d


_TUPLE_KEYS = {"cos_coeffs", "sin_coeffs", "t_list"}
_INT_KEYS = {
    "schema_version", "n_max", "n_bands", "nodes_per_band", "bloch_nodes",
    "nx", "x_offsets", "quad_max_panels", "seed",
}
_STR_KEYS = {"potential"}


def parse_config_text(text: str) -> RunConfig:
    """Parse the flat key = value format ('#' comments, commas for lists)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in RunConfig.__dataclass_fields__:
            raise ValueError(f"line {lineno}: unknown key '{key}'")
        if key in _STR_KEYS:
            values[key] = val
        elif key in _TUPLE_KEYS:
            values[key] = tuple(float(v) for v in val.split(",") if v.strip())
        elif key in _INT_KEYS:
            values[key] = int(val)
        else:
            values[key] = float(val)
    cfg = RunConfig(**values)
    if cfg.schema_version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {cfg.schema_version}")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
