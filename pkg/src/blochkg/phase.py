"""Klein-Gordon phase eta(k) = sqrt(E(k) + mu) and the degenerate-mass set.

The degenerate set collects masses mu* > 0 for which the system

    Edd = Ed^2 / (2 (E + mu)),     Eddd = 0

has a real solution; at such masses the second and third phase derivatives
vanish together and the t^(-1/3) stationary-phase argument degenerates.
The scan is mass-independent: every interior root k* of Eddd = 0 with
Edd(k*) > 0 emits the unique candidate mu* = Ed^2/(2 Edd) - E, kept when
positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bands import QuasimomentumMap, _disc
from .errors import NonMonotonePhase

DSCAN_RATE = 48.0  # third-derivative chains need a finer mesh than tables


@dataclass(frozen=True)
class PhaseModel:
    """Evaluators for eta = sqrt(E + mu) and its first three k-derivatives."""

    mu: float
    km: QuasimomentumMap
    ode_rate: float = DSCAN_RATE
    _profile_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    def eta_derivs(self, k, check_collar: bool = True):
        """(eta, eta', eta'', eta''') in k, by the chain rule through E."""
        E, Ed, Edd, Eddd = self.km.E_derivs(k, check_collar=check_collar, rate=self.ode_rate)
        return eta_chain(self.mu, E, Ed, Edd, Eddd)

    def eta(self, k):
        E = self.km.lambda_of_k(np.abs(k))
        out = np.sqrt(E + self.mu)
        return out

    @property
    def k_max(self) -> float:
        return self.km.k_max


def eta_chain(mu: float, E, Ed, Edd, Eddd):
    """Algebra of the phase derivatives given E and its k-derivatives."""
    root = np.sqrt(E + mu)
    eta_d = Ed / (2.0 * root)
    eta_dd = Edd / (2.0 * root) - Ed * Ed / (4.0 * root**3)
    eta_ddd = (
        Eddd / (2.0 * root)
        - 3.0 * Ed * Edd / (4.0 * root**3)
        + 3.0 * Ed**3 / (8.0 * root**5)
    )
    return root, eta_d, eta_dd, eta_ddd


def eta_derivs(pm: PhaseModel, k):
    """Module-level wrapper for PhaseModel.eta_derivs."""
    return pm.eta_derivs(k)


# ---------------------------------------------------------------------------
# degenerate set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegenerateWitness:
    mu_star: float
    k_star: float
    band: int
    e3_residual: float
    system_residual: float


@dataclass(frozen=True)
class DegenerateSet:
    """Candidate masses with witnesses; an empty list is a valid result."""

    mus: tuple[float, ...]
    witnesses: tuple[DegenerateWitness, ...] = field(repr=False)
    k_max: float = 0.0

    def distance(self, mu: float) -> float:
        if not self.mus:
            return np.inf
        return float(min(abs(mu - m) for m in self.mus))

    def is_degenerate(self, mu: float, margin: float = 1e-2) -> bool:
        return self.distance(mu) < margin


def _e3_lambda_batch(km: QuasimomentumMap, lams: np.ndarray, rate: float):
    """E, Ed, Edd, Eddd and k at in-band lam values, one ODE solve per call.

    k is reconstructed from the arccos branch of Delta/2, so bisection in
    lam needs no separate inversion step.
    """
    bt = km.bt
    d = _disc(bt.pot_norm, lams, 3, rate)
    L = bt.period
    idx = np.searchsorted(bt.edges_minus[1:], lams, side="right")
    idx = np.clip(idx, 0, bt.n_bands - 1)
    half = np.clip(0.5 * d["delta"], -1.0, 1.0)
    theta = np.arccos(half)
    even = idx % 2 == 0
    kL = np.where(even, idx * np.pi + theta, (idx + 1) * np.pi - theta)
    k = kL / L
    sin_kL = np.sin(kL)
    cos_kL = np.cos(kL)
    kp = -d["d1"] / (2.0 * L * sin_kL)
    kpp = -(0.5 * d["d2"] + L * L * cos_kL * kp * kp) / (L * sin_kL)
    kppp = (L**3 * sin_kL * kp**3 - 3.0 * L * L * cos_kL * kp * kpp - 0.5 * d["d3"]) / (
        L * sin_kL
    )
    Ed = 1.0 / kp
    Edd = -kpp / kp**3
    Eddd = (3.0 * kpp * kpp - kp * kppp) / kp**5
    return k, Ed, Edd, Eddd


def find_degenerate_set(
    km: QuasimomentumMap,
    k_max: float,
    nodes_per_band: int = 256,
    rate: float = DSCAN_RATE,
    mu_min: float = 1e-6,
    collar_c: float = 8.0,
    stability_tol: float = 1e-6,
) -> DegenerateSet:
    """Scan (0, k_max) for roots of Eddd and emit mass candidates.

    Near-edge collars of width max(c |g|, |g|^(3/5)) in w are excluded from
    the scan (the system provably has no roots there), matching where the
    third-derivative chain loses conditioning anyway.  Roots are located by
    sign change on the per-band grid, bisected in lam (one ODE solve per
    sweep), and kept only when the emitted mass reproduces under mesh
    refinement within stability_tol.
    """
    bt = km.bt
    lam_cap = k_max * k_max * 1.5
    scan_lams = []
    scan_band = []
    gaps = bt.gaps_w()
    for n in range(bt.n_bands):
        a, b = bt.band_interval(n)
        if a >= lam_cap:
            break
        wa, wb = np.sqrt(max(a, 0.0)), np.sqrt(b)
        g_lo = gaps[n]
        g_hi = gaps[n + 1] if n + 1 < len(gaps) else 0.0
        # paper collars in |g| plus a conditioning floor: within ~3e-3 of an
        # edge the sin(kL)^-3 factors in the chain amplify rounding noise
        c_lo = max(collar_c * g_lo, g_lo**0.6, 3e-3 * (wb - wa))
        c_hi = max(collar_c * g_hi, g_hi**0.6, 3e-3 * (wb - wa))
        w_lo, w_hi = wa + c_lo, min(wb - c_hi, k_max * 1.2)
        if w_hi <= w_lo:
            continue
        w_grid = np.linspace(w_lo, w_hi, nodes_per_band)
        scan_lams.append(w_grid**2)
        scan_band.append(np.full(w_grid.size, n))
    if not scan_lams:
        return DegenerateSet((), (), k_max)
    lams = np.concatenate(scan_lams)
    bands = np.concatenate(scan_band)

    k, Ed, Edd, Eddd = _e3_lambda_batch(km, lams, rate)
    _, _, _, Eddd_f = _e3_lambda_batch(km, lams, 2.0 * rate)
    keep = k <= k_max
    # A sign change only counts where Eddd stands clear of its own noise
    # floor (estimated from the mesh-refinement difference); otherwise the
    # third derivative is numerically zero there (free operator, high bands).
    noise = np.abs(Eddd - Eddd_f) + 1e-12 * np.abs(Edd) + 1e-15
    clear = np.abs(Eddd_f) > 10.0 * noise
    sign = np.sign(Eddd_f)
    flips = np.flatnonzero(
        (np.diff(sign) != 0)
        & (bands[:-1] == bands[1:])
        & keep[:-1]
        & keep[1:]
        & (sign[:-1] != 0)
        & (clear[:-1] | clear[1:])
    )
    if flips.size == 0:
        return DegenerateSet((), (), k_max)

    lo = lams[flips]
    hi = lams[flips + 1]
    s_lo = sign[flips]
    for _ in range(46):
        mid = 0.5 * (lo + hi)
        _, _, _, e3 = _e3_lambda_batch(km, mid, rate)
        same = np.sign(e3) == s_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    lam_star = 0.5 * (lo + hi)
    k_star, Ed_s, Edd_s, Eddd_s = _e3_lambda_batch(km, lam_star, rate)
    # Noise flips of Eddd (it can sit at the derivative-chain noise floor,
    # e.g. identically zero for the free operator) produce junk masses that
    # move under mesh refinement; genuine witnesses reproduce.
    _, Ed_f, Edd_f, _ = _e3_lambda_batch(km, lam_star, 2.0 * rate)

    witnesses = []
    mus = []
    for j in range(lam_star.size):
        if Edd_s[j] <= 0 or Edd_f[j] <= 0:
            continue
        mu_star = Ed_s[j] ** 2 / (2.0 * Edd_s[j]) - lam_star[j]
        mu_fine = Ed_f[j] ** 2 / (2.0 * Edd_f[j]) - lam_star[j]
        if mu_star <= mu_min:
            continue
        if abs(mu_star - mu_fine) > stability_tol * (1.0 + abs(mu_star)):
            continue
        sys_res = abs(Edd_s[j] - Ed_s[j] ** 2 / (2.0 * (lam_star[j] + mu_star)))
        witnesses.append(
            DegenerateWitness(
                mu_star=float(mu_star),
                k_star=float(k_star[j]),
                band=int(bands[flips[j]]),
                e3_residual=float(abs(Eddd_s[j])),
                system_residual=float(sys_res),
            )
        )
        mus.append(float(mu_star))
    order = np.argsort(mus) if mus else []
    return DegenerateSet(
        mus=tuple(mus[i] for i in order),
        witnesses=tuple(witnesses[i] for i in order),
        k_max=k_max,
    )


# ---------------------------------------------------------------------------
# stationary points
# ---------------------------------------------------------------------------


def _band_velocity_profile(pm: PhaseModel, n: int, n_pts: int = 33):
    """(k grid, eta') on the interior of band n, cached per model."""
    if n in pm._profile_cache:
        return pm._profile_cache[n]
    km = pm.km
    L = km.period
    k_lo = n * np.pi / L
    k_hi = (n + 1) * np.pi / L
    pad = 1e-6 * (k_hi - k_lo)
    k = np.linspace(k_lo + pad, k_hi - pad, n_pts)
    E, Ed, _, _ = km.E_derivs(k, check_collar=False)
    etad = Ed / (2.0 * np.sqrt(E + pm.mu))
    pm._profile_cache[n] = (k, etad)
    return k, etad


def stationary_point(pm: PhaseModel, t: float, R: float) -> float | None:
    """The smallest k0 >= 0 with eta'(k0) = R/t, or None beyond range.

    eta' rises from 0 (k = 0 is the spectrum bottom) through the band
    maxima which increase toward sup eta' < 1; the root is bisected on the
    rising stretch of the first band whose maximum reaches R/t.  Raises
    NonMonotonePhase if eta'' changes sign on that stretch (mass too close
    to the degenerate set for a clean inversion).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    v = abs(R) / t
    if v == 0.0:
        return 0.0
    km = pm.km
    for n in range(km.bt.n_bands):
        k_grid, etad = _band_velocity_profile(pm, n)
        j_max = int(np.argmax(etad))
        if etad[j_max] < v:
            continue
        # rising stretch: from the band start (or previous sub-v point) up
        rising = etad[: j_max + 1]
        below = np.flatnonzero(rising < v)
        if below.size == 0:
            lo_k = k_grid[0]
            if n > 0:
                # root lies below the sampled pad; treat pad point as bracket
                lo_k = k_grid[0] - 0.5 * (k_grid[1] - k_grid[0])
        else:
            lo_k = k_grid[below[-1]]
        hi_k = k_grid[j_max]
        dd = np.diff(rising[max(0, below[-1] if below.size else 0) :])
        if np.any(dd < -1e-10 * max(1.0, np.max(np.abs(rising)))):
            raise NonMonotonePhase(
                f"eta' non-monotone on the rising stretch of band {n}"
            )
        lo, hi = lo_k, hi_k
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            E, Ed, _, _ = km.E_derivs(np.array([mid]), check_collar=False)
            val = Ed[0] / (2.0 * np.sqrt(E[0] + pm.mu))
            if val < v:
                lo = mid
            else:
                hi = mid
        return float(0.5 * (lo + hi))
    return None


def stationary_points_in(
    pm: PhaseModel, t: float, R: float, k_lo: float, k_hi: float, n_scan: int = 64
) -> list[float]:
    """All zeros of d/dk [t eta(k) - R k] in [k_lo, k_hi], by sign scan.

    Used by the kernel to seed oscillatory panels; R may be negative (the
    conjugate exponential), in which case there are no zeros for k > 0 and
    the scan returns empty quickly.
    """
    if t <= 0 or R <= 0:
        return []
    km = pm.km
    pad = 1e-9 * (k_hi - k_lo)
    k = np.linspace(k_lo + pad, k_hi - pad, n_scan)
    E, Ed, _, _ = km.E_derivs(k, check_collar=False)
    hp = t * Ed / (2.0 * np.sqrt(E + pm.mu)) - R
    sign = np.sign(hp)
    flips = np.flatnonzero(np.diff(sign) != 0)
    out = []
    for j in flips:
        lo, hi = k[j], k[j + 1]
        s = sign[j]
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            E, Ed, _, _ = km.E_derivs(np.array([mid]), check_collar=False)
            val = t * Ed[0] / (2.0 * np.sqrt(E[0] + pm.mu)) - R
            if np.sign(val) == s:
                lo = mid
            else:
                hi = mid
        out.append(float(0.5 * (lo + hi)))
    return out
