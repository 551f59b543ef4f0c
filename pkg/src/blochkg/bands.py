"""Band edges, gap table, and the real quasimomentum map k(lam).

Edges are refined as roots of the gap indicator

    G(lam) = Delta(lam)^2 - 4 = (c - s')^2 + 4 c' s

evaluated in the factored form on the right.  Unlike Delta -+ 2, the
factored form has no catastrophic cancellation near closed gaps: each of
c - s', c', s is an O(integration error) quantity there, so gaps down to
the integration noise floor are resolved and anything narrower is
classified as closed instead of being smeared over.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import EdgePairingFailed, NonMonotonic, TooCloseToEdge
from .hill import DEFAULT_RATE, monodromy_batch
from .potential import PeriodicPotential

_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# discriminant helpers
# ---------------------------------------------------------------------------


def _disc(pot: PeriodicPotential, lams, order: int, rate: float):
    """Delta and derivatives plus the stable gap indicator G = Delta^2 - 4.

    Returns dict with delta, d1..d{order}, G, G1 (if order >= 1).
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    M, dM, _ = monodromy_batch(pot, lams, deriv_order=order, rate=rate)
    c, s = M[:, 0, 0], M[:, 0, 1]
    cp, sp = M[:, 1, 0], M[:, 1, 1]
    out = {
        "delta": c + sp,
        "G": (c - sp) ** 2 + 4.0 * cp * s,
    }
    for j in range(order):
        out[f"d{j + 1}"] = dM[:, j, 0, 0] + dM[:, j, 1, 1]
    if order >= 1:
        dc, ds = dM[:, 0, 0, 0], dM[:, 0, 0, 1]
        dcp, dsp = dM[:, 0, 1, 0], dM[:, 0, 1, 1]
        out["G1"] = 2.0 * (c - sp) * (dc - dsp) + 4.0 * (dcp * s + cp * ds)
        if order >= 2:
            d2c, d2s = dM[:, 1, 0, 0], dM[:, 1, 0, 1]
            d2cp, d2sp = dM[:, 1, 1, 0], dM[:, 1, 1, 1]
            out["G2"] = (
                2.0 * (dc - dsp) ** 2
                + 2.0 * (c - sp) * (d2c - d2sp)
                + 4.0 * (d2cp * s + 2.0 * dcp * ds + cp * d2s)
            )
    return out


def _newton_bisect(fun, lo, hi, n_bisect: int, n_newton: int, x0=None):
    """Safeguarded vectorized root finder on brackets with sign change.

    fun(x) -> (f, fprime); fun(lo) and fun(hi) have opposite signs
    elementwise.  Bisection narrows the bracket, Newton (seeded at x0 when
    given) polishes; steps leaving the bracket fall back to the midpoint.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    f_lo, _ = fun(lo)
    s_lo = np.sign(f_lo)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        f, _ = fun(mid)
        same = np.sign(f) == s_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    if x0 is None:
        x = 0.5 * (lo + hi)
    else:
        x = np.clip(np.array(x0, dtype=float), lo, hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(n_newton):
        f, fp = fun(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = -f / fp
        # A sub-eps step means the root is resolved to rounding; freeze the
        # element so bracket noise cannot bounce it away again.
        done = ~np.isfinite(step) | (np.abs(step) <= 8e-16 * (1.0 + np.abs(x)))
        same = np.sign(f) == s_lo
        upd = active & ~done
        lo = np.where(upd & same, x, lo)
        hi = np.where(upd & ~same, x, hi)
        active = upd
        if not np.any(active):
            break
        x_new = x + step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        x = np.where(active, x_new, x)
    return x


# ---------------------------------------------------------------------------
# band table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandTable:
    """Normalized band edges (A_0^+ shifted to 0) and gap data.

    edges_plus[n]  = A_n^+  (lower edge of band n), n = 0..n_gaps
    edges_minus[n] = A_n^-  (upper edge of band n-1), n = 1..n_gaps
    ell[n] follows the arccos branch count; gap n is closed when the gap
    indicator could not resolve a positive width.
    """

    pot: PeriodicPotential
    pot_norm: PeriodicPotential
    shift: float
    edges_plus: np.ndarray
    edges_minus: np.ndarray
    ell: np.ndarray
    closed: np.ndarray
    normalized: bool = True
    ode_rate: float = DEFAULT_RATE

    @property
    def n_bands(self) -> int:
        """Number of complete bands [A_n^+, A_{n+1}^-]."""
        return len(self.edges_plus) - 1

    @property
    def period(self) -> float:
        return self.pot.period

    def band_interval(self, n: int) -> tuple[float, float]:
        return float(self.edges_plus[n]), float(self.edges_minus[n + 1])

    @property
    def w_plus(self) -> np.ndarray:
        """a_n^+ = sqrt(A_n^+) in the w variable."""
        return np.sqrt(np.maximum(self.edges_plus, 0.0))

    @property
    def w_minus(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.edges_minus, 0.0))

    def gap_w(self, n: int) -> float:
        """|g_n| = a_n^+ - a_n^- in the w variable (0 for closed gaps)."""
        if n < 1 or n >= len(self.edges_plus):
            return 0.0
        if self.closed[n]:
            return 0.0
        return float(self.w_plus[n] - self.w_minus[n])

    def gaps_w(self) -> np.ndarray:
        g = self.w_plus - self.w_minus
        g[0] = 0.0
        g[self.closed] = 0.0
        return np.maximum(g, 0.0)

    # -- serialization (cache file) -----------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": _SCHEMA_VERSION,
            "kind": "band_table",
            "potential": {
                "cos_coeffs": list(self.pot.cos_coeffs),
                "sin_coeffs": list(self.pot.sin_coeffs),
                "period": self.pot.period,
            },
            "shift": self.shift,
            "edges_plus": self.edges_plus.tolist(),
            "edges_minus": self.edges_minus.tolist(),
            "ell": self.ell.tolist(),
            "closed": self.closed.astype(int).tolist(),
            "normalized": self.normalized,
            "ode_rate": self.ode_rate,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "BandTable":
        if d.get("schema_version") != _SCHEMA_VERSION or d.get("kind") != "band_table":
            raise ValueError("unrecognized band table file")
        p = d["potential"]
        pot = PeriodicPotential(tuple(p["cos_coeffs"]), tuple(p["sin_coeffs"]), p["period"])
        shift = float(d["shift"])
        return cls(
            pot=pot,
            pot_norm=pot.shifted(-shift),
            shift=shift,
            edges_plus=np.asarray(d["edges_plus"], dtype=float),
            edges_minus=np.asarray(d["edges_minus"], dtype=float),
            ell=np.asarray(d["ell"], dtype=int),
            closed=np.asarray(d["closed"], dtype=bool),
            normalized=bool(d["normalized"]),
            ode_rate=float(d["ode_rate"]),
        )

    @classmethod
    def load(cls, path) -> "BandTable":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _band_mid_candidates(pot, lam0, n_gaps, rate):
    """A point with |Delta| < 2 inside each band 0..n_gaps.

    First tries the Theorem-2.3 style estimate, then repairs failures with
    a per-band Chebyshev scan.
    """
    L = pot.period
    two_q0 = pot.mean - lam0
    n = np.arange(n_gaps + 1)
    mids = lam0 + ((n + 0.5) * np.pi / L) ** 2 + two_q0
    mids[0] = lam0 + 0.45 * (np.pi / L) ** 2
    delta = _disc(pot, mids, 0, rate)["delta"]
    bad = np.abs(delta) >= 1.9
    if np.any(bad):
        for i in np.flatnonzero(bad):
            lo = lam0 + (i * np.pi / L) ** 2 + (two_q0 if i else 0.0)
            hi = lam0 + ((i + 1) * np.pi / L) ** 2 + two_q0
            lo, hi = min(lo, mids[i]), max(hi, mids[i])
            grid = lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * np.linspace(0, 1, 33)))
            dg = _disc(pot, grid, 0, rate)["delta"]
            j = int(np.argmin(np.abs(dg)))
            if np.abs(dg[j]) >= 2.0 - 1e-9:
                raise EdgePairingFailed(
                    f"no interior point with |Delta|<2 found for band {i}"
                )
            mids[i] = grid[j]
    return mids


def find_bands(
    pot: PeriodicPotential,
    lambda_max: float,
    n_bands: int | None = None,
    rate: float = DEFAULT_RATE,
) -> BandTable:
    """Locate all band edges up to lambda_max and normalize A_0^+ to 0.

    Edges are seeded by the (ell pi / L)^2 asymptotics, bracketed between
    consecutive band interiors, and refined on the gap indicator G; a gap
    whose indicator maximum stays below the integration noise floor is
    recorded as closed (zero length) with the branch count still advancing.
    """
    L = pot.period
    if n_bands is None:
        if lambda_max <= 0:
            raise ValueError("lambda_max must be positive (or pass n_bands)")
        n_bands = int(np.ceil(L * np.sqrt(lambda_max) / np.pi)) + 1
    n_gaps = n_bands

    # -- ground edge A_0^+ by upward scan on G ------------------------
    start = -pot.sup_norm_bound + pot.mean - 0.5
    step = 0.08 * (np.pi / L) ** 2 + 1e-3
    grid = start + step * np.arange(256)
    d0 = _disc(pot, grid, 0, rate)
    inside = np.flatnonzero(np.abs(d0["delta"]) < 2.0)
    while inside.size == 0:
        grid = grid + 256 * step
        d0 = _disc(pot, grid, 0, rate)
        inside = np.flatnonzero(np.abs(d0["delta"]) < 2.0)
        if grid[0] > abs(lambda_max) + pot.sup_norm_bound + 10.0:
            raise EdgePairingFailed("could not locate the first spectral band")
    i_in = int(inside[0])
    if i_in == 0:
        raise EdgePairingFailed("scan started inside the spectrum; lower the start")

    def g_fun(x):
        d = _disc(pot, x, 1, rate)
        return d["G"], d["G1"]

    lam0 = float(
        _newton_bisect(g_fun, np.array([grid[i_in - 1]]), np.array([grid[i_in]]), 24, 8)[0]
    )

    # -- interior points and gap brackets ------------------------------
    mids = _band_mid_candidates(pot, lam0, n_gaps, rate)
    if np.any(np.diff(mids) <= 0):
        raise EdgePairingFailed("band interior points are not increasing")

    # mu_n = argmax of G in gap n, located as the zero of Delta' between
    # consecutive band interiors (Delta' keeps one sign inside each band).
    def dprime_fun(x):
        d = _disc(pot, x, 2, rate)
        return d["d1"], d["d2"]

    def dprime_fun_fine(x):
        d = _disc(pot, x, 2, 4.0 * rate)
        return d["d1"], d["d2"]

    lo = mids[:-1].copy()
    hi = mids[1:].copy()
    f_lo, _ = dprime_fun(lo)
    f_hi, _ = dprime_fun(hi)
    if np.any(np.sign(f_lo) == np.sign(f_hi)):
        raise EdgePairingFailed("Delta' does not change sign across a gap bracket")
    mu = _newton_bisect(dprime_fun, lo, hi, 22, 8)

    # polish the extrema at higher resolution; closed-gap edges sit there
    mu = _newton_bisect(dprime_fun_fine, lo, hi, 0, 4, x0=mu)
    dmu = _disc(pot, mu, 2, rate)
    sign_ok = np.abs(dmu["delta"]) > 2.0 - 1e-6
    alternation = dmu["delta"] * (-1.0) ** np.arange(1, n_gaps + 1) > 0
    if not np.all(sign_ok & alternation):
        raise EdgePairingFailed("discriminant sign pattern at gap extrema is wrong")

    # -- classify closed gaps -------------------------------------------
    # A gap is open only when the indicator maximum G(mu) reproduces under
    # mesh refinement; otherwise it sits at the integration noise floor
    # and is recorded as closed (the misclassification error is then below
    # the noise-resolvable half-width, far inside any edge tolerance).
    g_a = _disc(pot, mu, 0, 2.0 * rate)["G"]
    dmu4 = _disc(pot, mu, 2, 4.0 * rate)
    g_b = dmu4["G"]
    g2_b = dmu4["G2"]
    open_gap = (g_b > 0.0) & (np.abs(g_a - g_b) < 0.3 * g_b) & (g2_b < 0.0)
    closed = np.concatenate(([False], ~open_gap))

    edges_minus = np.full(n_gaps + 1, np.nan)
    edges_plus = np.full(n_gaps + 1, np.nan)
    edges_plus[0] = lam0
    idx = np.flatnonzero(open_gap)
    if idx.size:
        # parabola-model seeds mu -+ d, then safeguarded Newton on G
        d_half = np.sqrt(-2.0 * g_b[idx] / g2_b[idx])

        def edge_fun(x):
            d = _disc(pot, x, 1, 2.0 * rate)
            return d["G"], d["G1"]

        e_lo = _newton_bisect(edge_fun, lo[idx], mu[idx], 0, 10, x0=mu[idx] - d_half)
        e_hi = _newton_bisect(edge_fun, mu[idx], hi[idx], 0, 10, x0=mu[idx] + d_half)
        edges_minus[idx + 1] = e_lo
        edges_plus[idx + 1] = e_hi
    for n in np.flatnonzero(~open_gap):
        edges_minus[n + 1] = mu[n]
        edges_plus[n + 1] = mu[n]

    order = np.concatenate(([edges_plus[0]], np.ravel(np.column_stack(
        (edges_minus[1:], edges_plus[1:])))))
    if np.any(np.diff(order) < -1e-12 * np.maximum(1.0, np.abs(order[:-1]))):
        raise EdgePairingFailed("band edges are out of order after refinement")

    edges_plus -= lam0
    edges_minus -= lam0
    edges_plus[0] = 0.0
    return BandTable(
        pot=pot,
        pot_norm=pot.shifted(-lam0),
        shift=lam0,
        edges_plus=edges_plus,
        edges_minus=edges_minus,
        ell=np.arange(n_gaps + 1),
        closed=closed,
        ode_rate=rate,
    )


def gap_decay_report(bt: BandTable):
    """Rows (ell_n, |g_n|, <ell_n>^N |g_n| for N=1..4) for each gap n >= 1."""
    if bt.n_bands < 8:
        raise ValueError("need at least 8 bands for a meaningful decay report")
    rows = []
    gaps = bt.gaps_w()
    for n in range(1, len(bt.edges_plus)):
        ell = int(bt.ell[n])
        g = float(gaps[n])
        bracket = np.sqrt(1.0 + ell * ell)
        rows.append((ell, g, *(bracket**N * g for N in range(1, 5))))
    return rows


# ---------------------------------------------------------------------------
# quasimomentum map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _BandMap:
    n: int
    lam_nodes: np.ndarray
    k_nodes: np.ndarray
    lam_of_k: PchipInterpolator = field(repr=False)
    k_of_lam: PchipInterpolator = field(repr=False)


@dataclass(frozen=True)
class QuasimomentumMap:
    """Monotone per-band tabulation of k(lam) with exact-derivative queries.

    Interpolation (monotone cubic) provides seeds only; every query is
    Newton-refined on cos(kL) = Delta(lam)/2 and all derivatives are
    recomputed from the discriminant derivatives at the refined point.
    E(-k) = E(k) holds by construction: queries use |k|.
    """

    bt: BandTable
    bands: tuple[_BandMap, ...]
    delta_edge_factor: float = 1e-2
    ode_rate: float = DEFAULT_RATE

    @property
    def period(self) -> float:
        return self.bt.period

    @property
    def k_max(self) -> float:
        return float(self.bands[-1].k_nodes[-1])

    def band_index_of_k(self, k) -> np.ndarray:
        k = np.abs(np.atleast_1d(np.asarray(k, dtype=float)))
        idx = np.floor(k * self.period / np.pi).astype(int)
        return np.clip(idx, 0, len(self.bands) - 1)

    # -- edge collars ---------------------------------------------------

    def edge_collar_w(self, n: int) -> tuple[float, float]:
        """(lower, upper) exclusion distances in w for band n."""
        g_lo = self.bt.gap_w(n)
        g_hi = self.bt.gap_w(n + 1)
        f = self.delta_edge_factor
        return f * np.sqrt(g_lo), f * np.sqrt(g_hi)

    def _check_collar(self, k: np.ndarray, lam: np.ndarray, idx: np.ndarray) -> None:
        L = self.period
        w = np.sqrt(np.maximum(lam, 0.0))
        w_lo = self.bt.w_plus[idx]
        w_hi = self.bt.w_minus[idx + 1]
        c_lo = self.delta_edge_factor * np.sqrt(self.bt.gaps_w()[idx])
        c_hi = self.delta_edge_factor * np.sqrt(self.bt.gaps_w()[np.minimum(
            idx + 1, len(self.bt.edges_plus) - 1)])
        k_floor = 1e-8 * np.pi / L
        kk = np.abs(k)
        k_lo = idx * np.pi / L
        k_hi = (idx + 1) * np.pi / L
        bad = (
            (w - w_lo < c_lo)
            | (w_hi - w < c_hi)
            | (kk - k_lo < k_floor)
            | (k_hi - kk < k_floor)
        )
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise TooCloseToEdge(
                f"k={float(kk[j]):.12g} is inside the band-{int(idx[j])} edge collar"
            )

    # -- core queries -----------------------------------------------------

    def lambda_of_k(self, k, newton_iters: int = 6, rate: float | None = None) -> np.ndarray:
        """Invert the quasimomentum map, Newton-refined per query point."""
        rate = self.ode_rate if rate is None else rate
        k_in = np.atleast_1d(np.asarray(k, dtype=float))
        kk = np.abs(k_in)
        L = self.period
        idx = self.band_index_of_k(kk)
        target = 2.0 * np.cos(kk * L)
        lam = np.empty_like(kk)
        for n in np.unique(idx):
            sel = idx == n
            lam[sel] = self.bands[n].lam_of_k(kk[sel])
        a = self.bt.edges_plus[idx]
        b = self.bt.edges_minus[idx + 1]
        lam = np.clip(lam, a, b)
        for _ in range(newton_iters):
            d = _disc(self.bt.pot_norm, lam, 1, rate)
            f = d["delta"] - target
            with np.errstate(divide="ignore", invalid="ignore"):
                step = -f / d["d1"]
            step = np.where(np.isfinite(step), step, 0.0)
            lam_new = np.clip(lam + step, a, b)
            if np.max(np.abs(lam_new - lam) / (1.0 + np.abs(lam))) < 1e-14:
                lam = lam_new
                break
            lam = lam_new
        return lam if np.ndim(k) else float(lam[0])

    def E_derivs(self, k, check_collar: bool = True, rate: float | None = None):
        """(E, dE/dk, d2E/dk2, d3E/dk3) at k, from discriminant derivatives.

        Raises TooCloseToEdge when k is inside the edge exclusion collar
        (the implicit-function formulas divide by sin(kL) -> 0 there).
        """
        rate = self.ode_rate if rate is None else rate
        k_in = np.atleast_1d(np.asarray(k, dtype=float))
        kk = np.abs(k_in)
        L = self.period
        idx = self.band_index_of_k(kk)
        lam = self.lambda_of_k(kk, rate=rate)
        if check_collar:
            self._check_collar(kk, lam, idx)
        d = _disc(self.bt.pot_norm, lam, 3, rate)
        sin_kL = np.sin(kk * L)
        cos_kL = np.cos(kk * L)
        kp = -d["d1"] / (2.0 * L * sin_kL)
        kpp = -(0.5 * d["d2"] + L * L * cos_kL * kp * kp) / (L * sin_kL)
        kppp = (L**3 * sin_kL * kp**3 - 3.0 * L * L * cos_kL * kp * kpp - 0.5 * d["d3"]) / (
            L * sin_kL
        )
        Ed = 1.0 / kp
        Edd = -kpp / kp**3
        Eddd = (3.0 * kpp * kpp - kp * kppp) / kp**5
        if np.ndim(k):
            return lam, Ed, Edd, Eddd
        return float(lam[0]), float(Ed[0]), float(Edd[0]), float(Eddd[0])

    def k_derivs_in_w(self, w, check_collar: bool = True, rate: float | None = None):
        """(k, dk/dw, d2k/dw2) at w = sqrt(lam) inside a band."""
        rate = self.ode_rate if rate is None else rate
        w_in = np.atleast_1d(np.asarray(w, dtype=float))
        lam = w_in * w_in
        k = self.k_of_lambda(lam, rate=rate)
        idx = self.band_index_of_k(k)
        if check_collar:
            self._check_collar(k, lam, idx)
        d = _disc(self.bt.pot_norm, lam, 2, rate)
        L = self.period
        sin_kL = np.sin(k * L)
        cos_kL = np.cos(k * L)
        kp = -d["d1"] / (2.0 * L * sin_kL)
        kpp = -(0.5 * d["d2"] + L * L * cos_kL * kp * kp) / (L * sin_kL)
        kp_w = 2.0 * w_in * kp
        kpp_w = 2.0 * kp + 4.0 * w_in * w_in * kpp
        if np.ndim(w):
            return k, kp_w, kpp_w
        return float(k[0]), float(kp_w[0]), float(kpp_w[0])

    def k_of_lambda(self, lam, rate: float | None = None) -> np.ndarray:
        """Forward map lam -> k via the arccos branch (band located by value)."""
        rate = self.ode_rate if rate is None else rate
        lam_in = np.atleast_1d(np.asarray(lam, dtype=float))
        L = self.period
        d = _disc(self.bt.pot_norm, lam_in, 0, rate)
        half = np.clip(0.5 * d["delta"], -1.0, 1.0)
        theta = np.arccos(half)
        idx = np.searchsorted(self.bt.edges_minus[1:], lam_in, side="right")
        idx = np.clip(idx, 0, len(self.bands) - 1)
        even = idx % 2 == 0
        k = np.where(even, idx * np.pi + theta * L, (idx + 1) * np.pi - theta * L) / L
        out = k
        return out if np.ndim(lam) else float(out[0])


def build_kmap(
    pot: PeriodicPotential,
    bt: BandTable,
    nodes_per_band: int = 64,
    delta_edge_factor: float = 1e-2,
    rate: float | None = None,
) -> QuasimomentumMap:
    """Tabulate k(lam) per band on a square-root-graded grid.

    Nodes cluster near the edges (Chebyshev grading in lam) because
    k - ell pi / L behaves like sqrt(lam - edge) there; the exact edge
    values k = ell pi / L anchor the interpolants.
    """
    if nodes_per_band < 16:
        raise ValueError("nodes_per_band must be >= 16")
    rate = bt.ode_rate if rate is None else rate
    L = bt.period
    pot_n = bt.pot_norm
    u = 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, nodes_per_band + 1)))

    all_nodes = []
    spans = []
    for n in range(bt.n_bands):
        a, b = bt.band_interval(n)
        nodes = a + (b - a) * u
        all_nodes.append(nodes[1:-1])
        spans.append((a, b))
    flat = np.concatenate(all_nodes)
    d = _disc(pot_n, flat, 1, rate)
    half = np.clip(0.5 * d["delta"], -1.0, 1.0)
    theta = np.arccos(half)

    bands = []
    pos = 0
    for n in range(bt.n_bands):
        m = nodes_per_band - 1
        th = theta[pos : pos + m]
        d1 = d["d1"][pos : pos + m]
        pos += m
        if n % 2 == 0:
            k_int = (n * np.pi + th) / L
        else:
            k_int = ((n + 1) * np.pi - th) / L
        a, b = spans[n]
        lam_nodes = np.concatenate(([a], a + (b - a) * u[1:-1], [b]))
        k_nodes = np.concatenate(([n * np.pi / L], k_int, [(n + 1) * np.pi / L]))
        if np.any(np.diff(k_nodes) <= 0):
            raise NonMonotonic(f"k(lam) is not strictly increasing inside band {n}")
        expected = 1.0 if n % 2 else -1.0  # Delta falls on even bands
        if np.any(expected * d1 <= 0):
            raise NonMonotonic(f"Delta' changed sign inside open band {n}")
        bands.append(
            _BandMap(
                n=n,
                lam_nodes=lam_nodes,
                k_nodes=k_nodes,
                lam_of_k=PchipInterpolator(k_nodes, lam_nodes, extrapolate=True),
                k_of_lam=PchipInterpolator(lam_nodes, k_nodes, extrapolate=True),
            )
        )
    return QuasimomentumMap(
        bt=bt, bands=tuple(bands), delta_edge_factor=delta_edge_factor, ode_rate=rate
    )


# ---------------------------------------------------------------------------
# spec'd convenience operations
# ---------------------------------------------------------------------------


def E_derivs(km: QuasimomentumMap, k):
    """Band function E and its first three k-derivatives at k."""
    return km.E_derivs(k)


@dataclass(frozen=True)
class KprimeCheck:
    kprime: float
    A_w: float


def lemma_A_weight(bt: BandTable, w: float) -> float:
    """The two-sided edge weight A(w) controlling k'(w) on band m.

    A(w) = g_m^2 / ((w-a_m^+)^(1/2) (w-a_m^+ + g_m)^(3/2))
         + g_{m+1}^2 / ((a_{m+1}^- - w)^(1/2) (a_{m+1}^- - w + g_{m+1})^(3/2))
    """
    wp = bt.w_plus
    wm = bt.w_minus
    m = int(np.searchsorted(wp, w, side="right") - 1)
    m = max(0, min(m, bt.n_bands - 1))
    a_lo = wp[m]
    a_hi = wm[m + 1]
    g_lo = bt.gap_w(m)
    g_hi = bt.gap_w(m + 1)
    out = 0.0
    d_lo = max(w - a_lo, 1e-300)
    d_hi = max(a_hi - w, 1e-300)
    if g_lo > 0:
        out += g_lo**2 / (np.sqrt(d_lo) * (d_lo + g_lo) ** 1.5)
    if g_hi > 0:
        out += g_hi**2 / (np.sqrt(d_hi) * (d_hi + g_hi) ** 1.5)
    return float(out)


def kprime_bounds_check(km: QuasimomentumMap, bt: BandTable, w: float) -> KprimeCheck:
    """k'(w) together with the edge weight A(w) for the two-sided bound fit."""
    _, kp_w, _ = km.k_derivs_in_w(float(w))
    return KprimeCheck(kprime=float(kp_w), A_w=lemma_A_weight(bt, float(w)))


def k_second_deriv_in_w(km: QuasimomentumMap, w: float) -> float:
    """d2k/dw2 at w inside a band."""
    _, _, kpp_w = km.k_derivs_in_w(float(w))
    return float(kpp_w)


def find_kpp_zero(km: QuasimomentumMap, band_n: int, n_scan: int = 128) -> float:
    """The unique w_1 in band band_n with k''(w_1) = 0; k'' < 0 below it.

    Scans a graded interior grid for the sign change and bisects.  Raises
    NonMonotonic if the count of sign changes differs from one.
    """
    bt = km.bt
    a = bt.w_plus[band_n]
    b = bt.w_minus[band_n + 1]
    c_lo, c_hi = km.edge_collar_w(band_n)
    floor = 1e-6 * (b - a)
    lo = a + max(c_lo * 1.5, floor)
    hi = b - max(c_hi * 1.5, floor)
    u = 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, n_scan)))
    w_grid = lo + (hi - lo) * u
    _, _, kpp = km.k_derivs_in_w(w_grid, check_collar=False)
    signs = np.sign(kpp)
    flips = np.flatnonzero(np.diff(signs) != 0)
    if flips.size != 1:
        raise NonMonotonic(
            f"expected exactly one k'' sign change in band {band_n}, found {flips.size}"
        )
    w_lo, w_hi = w_grid[flips[0]], w_grid[flips[0] + 1]
    for _ in range(60):
        mid = 0.5 * (w_lo + w_hi)
        _, _, v = km.k_derivs_in_w(np.array([mid]), check_collar=False)
        if np.sign(v[0]) == signs[flips[0]]:
            w_lo = mid
        else:
            w_hi = mid
    return float(0.5 * (w_lo + w_hi))
