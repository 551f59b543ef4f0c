"""Truncated Fourier (plane-wave) discretization of Hill's operator.

Serves as the independent oracle for band edges and for the quasimomentum
inverse: eigenvalues of the Bloch-reduced operator at phase theta are
computed by direct Hermitian diagonalization, which resolves nearly
degenerate edge pairs that root-finding on the discriminant cannot.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .potential import PeriodicPotential


def hill_matrix(pot: PeriodicPotential, theta: float, dim: int = 64) -> np.ndarray:
    """Hermitian Bloch-phase matrix over plane waves exp(2i pi m x / L).

    A solution u = exp(i theta x / L) p(x) with p L-periodic turns
    -u'' + P u = lam u into an eigenproblem for the returned dim x dim
    matrix; theta in [0, pi] covers periodic (0) and antiperiodic (pi)
    boundary conditions.
    """
    L = pot.period
    m_lo = -(dim // 2)
    modes = np.arange(m_lo, m_lo + dim)
    diag = ((2.0 * np.pi * modes + theta) / L) ** 2
    H = np.zeros((dim, dim), dtype=complex)
    H[np.diag_indices(dim)] = diag
    # P-hat(m) for P = sum c_m cos + s_m sin: (c_m - i s_m)/2 at m>0.
    n_cos = len(pot.cos_coeffs)
    n_sin = len(pot.sin_coeffs)
    for m in range(1, max(n_cos, n_sin)):
        c = pot.cos_coeffs[m] if m < n_cos else 0.0
        s = pot.sin_coeffs[m] if m < n_sin else 0.0
        if c == 0.0 and s == 0.0:
            continue
        ph = 0.5 * (c - 1j * s)
        idx = np.arange(dim - m)
        H[idx + m, idx] += ph
        H[idx, idx + m] += np.conj(ph)
    H[np.diag_indices(dim)] += pot.cos_coeffs[0]
    return H


def bloch_eigenvalues(pot: PeriodicPotential, theta: float, dim: int = 64) -> np.ndarray:
    """Sorted eigenvalues of the Bloch-phase matrix."""
    return np.linalg.eigvalsh(hill_matrix(pot, theta, dim))


def band_edges_oracle(pot: PeriodicPotential, n_bands: int, dim: int = 64):
    """Band edges from periodic/antiperiodic eigenvalues.

    Returns (a_plus, a_minus) where a_plus[n] = A_n^+ for n = 0..n_bands
    and a_minus[n] = A_n^- for n = 1..n_bands (index 0 unused, set to nan).
    Classical ordering: the periodic spectrum supplies A_0^+ and the gap
    edges of even index, the antiperiodic spectrum those of odd index.
    """
    need = 2 * n_bands + 2
    if need > dim:
        dim = 2 * need
    per = bloch_eigenvalues(pot, 0.0, dim)
    anti = bloch_eigenvalues(pot, np.pi, dim)
    a_plus = np.full(n_bands + 1, np.nan)
    a_minus = np.full(n_bands + 1, np.nan)
    a_plus[0] = per[0]
    for n in range(1, n_bands + 1):
        if n % 2 == 1:
            j = n - 1  # antiperiodic pair (a[j], a[j+1])
            a_minus[n], a_plus[n] = anti[j], anti[j + 1]
        else:
            j = n - 1  # periodic pair (p[j], p[j+1])
            a_minus[n], a_plus[n] = per[j], per[j + 1]
    return a_plus, a_minus


def k_of_lambda_oracle(
    pot: PeriodicPotential, lam: float, band_n: int, dim: int = 64
) -> float:
    """Quasimomentum at lam inside band band_n, via Bloch-phase inversion.

    The band_n-th sorted eigenvalue of the phase-theta matrix sweeps the
    band monotonically (upward for even bands), so brentq on theta and the
    branch map k L = n pi + theta (even n) or (n+1) pi - theta (odd n)
    recovers k.
    """

    def f(theta: float) -> float:
        return float(bloch_eigenvalues(pot, theta, dim)[band_n]) - lam

    eps = 1e-9
    lo, hi = eps, np.pi - eps
    if f(lo) * f(hi) > 0:
        raise ValueError("lam is not interior to the requested band")
    theta = brentq(f, lo, hi, xtol=1e-13)
    L = pot.period
    if band_n % 2 == 0:
        return (band_n * np.pi + theta) / L
    return ((band_n + 1) * np.pi - theta) / L
