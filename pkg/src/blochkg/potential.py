"""Periodic potentials represented by finite Fourier series.

The potential is stored as

    P(x) = c[0] + sum_{m>=1} ( c[m] cos(2*pi*m*x/L) + s[m] sin(2*pi*m*x/L) )

so periodicity and the mean value are exact by construction.  Arbitrary
callables are deliberately not supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special


@dataclass(frozen=True)
class PeriodicPotential:
    """Finite Fourier representation of a real L-periodic potential.

    cos_coeffs[m] multiplies cos(2*pi*m*x/L); cos_coeffs[0] is the constant
    term.  sin_coeffs[m] multiplies sin(2*pi*m*x/L); entry 0 is ignored.
    """

    cos_coeffs: tuple[float, ...]
    sin_coeffs: tuple[float, ...] = field(default=(0.0,))
    period: float = 1.0

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("period must be positive")
        if len(self.cos_coeffs) == 0:
            object.__setattr__(self, "cos_coeffs", (0.0,))
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))

    # -- basic quantities ------------------------------------------------

    @property
    def mean(self) -> float:
        """Mean value (1/L) * integral of P over one period."""
        return self.cos_coeffs[0]

    @property
    def q0(self) -> float:
        """Half the mean value, (1/2L) * integral of P over one period."""
        return 0.5 * self.mean

    @property
    def sup_norm_bound(self) -> float:
        """Cheap upper bound for max |P|: sum of coefficient magnitudes."""
        return sum(abs(c) for c in self.cos_coeffs) + sum(abs(s) for s in self.sin_coeffs[1:])

    @property
    def is_constant(self) -> bool:
        return all(c == 0.0 for c in self.cos_coeffs[1:]) and all(
            s == 0.0 for s in self.sin_coeffs[1:]
        )

    # -- evaluation ------------------------------------------------------

    def __call__(self, x):
        """Evaluate P at x (scalar or array), exactly L-periodic."""
        x = np.asarray(x, dtype=float)
        om = 2.0 * np.pi / self.period
        out = np.full(x.shape, self.cos_coeffs[0], dtype=float)
        for m in range(1, len(self.cos_coeffs)):
            if self.cos_coeffs[m] != 0.0:
                out += self.cos_coeffs[m] * np.cos(om * m * x)
        for m in range(1, len(self.sin_coeffs)):
            if self.sin_coeffs[m] != 0.0:
                out += self.sin_coeffs[m] * np.sin(om * m * x)
        return out if out.ndim else float(out)

    def shifted(self, delta: float) -> "PeriodicPotential":
        """Return the potential P + delta (constant shift)."""
        cc = list(self.cos_coeffs)
        cc[0] += float(delta)
        return PeriodicPotential(tuple(cc), self.sin_coeffs, self.period)


def free_potential(period: float = 1.0) -> PeriodicPotential:
    """The zero potential (test fixture; the one permitted constant case)."""
    return PeriodicPotential((0.0,), (0.0,), period)


def cosine_potential(q: float = 1.0, period: float = 1.0) -> PeriodicPotential:
    """P(x) = 2 q cos(2 pi x / L), the single-mode (Mathieu-type) example."""
    return PeriodicPotential((0.0, 2.0 * float(q)), (0.0,), period)


def lame_potential(kappa: float, n_modes: int = 48, n_grid: int = 4096) -> PeriodicPotential:
    """P(x) = 2 kappa^2 sn^2(x, kappa) on its natural period L = 2 K(kappa).

    sn^2 is even with period 2K, so a cosine series suffices.  Coefficients
    below 1e-15 of the largest are dropped; the nome decays fast enough that
    a few dozen modes reach machine precision for kappa < 0.95.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    m = kappa * kappa
    bigk = float(special.ellipk(m))
    period = 2.0 * bigk
    x = np.arange(n_grid) * (period / n_grid)
    sn = special.ellipj(x, m)[0]
    vals = 2.0 * m * sn * sn
    coeffs = np.fft.rfft(vals) / n_grid
    cos_c = [float(coeffs[0].real)]
    cos_c += [2.0 * float(c.real) for c in coeffs[1 : n_modes + 1]]
    cutoff = 1e-15 * max(abs(c) for c in cos_c)
    while len(cos_c) > 1 and abs(cos_c[-1]) < cutoff:
        cos_c.pop()
    return PeriodicPotential(tuple(cos_c), (0.0,), period)


def eval_potential(pot: PeriodicPotential, x) -> float:
    """Evaluate P(x) through the Fourier representation."""
    return pot(x)
