"""Floquet solutions, normalization, and the band-diagonalizing transform.

Tables are built on per-band Gauss-Legendre nodes in k.  The nodes do
double duty: their weights integrate k-smooth quantities across each band
(Plancherel sums, inversion) and they support stable barycentric
interpolation of Bloch amplitudes for the kernel quadrature.

Conventions.  phi_+(x, k) = e^{ikx} xi_+(x, k) with phi_+(0) = 1 and
xi_+ periodic; phi_- = conj(phi_+) on the bands.  The transform is used
in its unitary normalization

    fhat(k) = (2 pi)^(-1/2) N(k)^(-1) * integral phi_+(y, k) f(y) dy

so Plancherel and the inversion formula hold with plain dk measure; the
free potential reduces it to the unitary Fourier transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .bands import BandTable, QuasimomentumMap
from .errors import DegenerateFloquet
from .hill import fundamental_on_grid_batch, monodromy_batch
from .potential import PeriodicPotential

S_MIN = 1e-6  # switch threshold between the two Floquet coefficient formulas


def _gl_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _bary_weights(x: np.ndarray) -> np.ndarray:
    """Barycentric weights for nodes x, normalized to unit max."""
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    w = 1.0 / np.prod(d, axis=1)
    return w / np.max(np.abs(w))


def theta_coefficients(M: np.ndarray, k: float, L: float) -> tuple[complex, complex]:
    """Floquet coefficients theta_pm with phi_pm = c + theta_pm s.

    Uses theta = (rho - c(L)) / s(L) away from zeros of s(L) and the
    algebraically equivalent eigenvector form c'(L) / (rho - s'(L)) there.
    """
    c, s = M[0, 0], M[0, 1]
    cp, sp = M[1, 0], M[1, 1]
    out = []
    for sgn in (+1.0, -1.0):
        rho = np.exp(sgn * 1j * k * L)
        if abs(s) >= S_MIN:
            out.append((rho - c) / s)
        elif abs(rho - sp) >= S_MIN:
            out.append(cp / (rho - sp))
        else:
            raise DegenerateFloquet(
                f"both Floquet coefficient formulas degenerate at k={k:.6g}"
            )
    return out[0], out[1]


@dataclass(frozen=True)
class BlochTable:
    """Per-(band, k-node) Floquet data on a shared x-grid.

    xi[b, j, i] = xi_+(x_i, k_{bj}); xi_hat holds its Fourier modes along
    x for evaluation at arbitrary positions.  N2 is real and positive
    strictly inside every band.
    """

    bt: BandTable
    km: QuasimomentumMap
    n_bands: int
    nx: int
    k_nodes: np.ndarray  # (nb, nk)
    lam_nodes: np.ndarray  # (nb, nk)
    gl_weights: np.ndarray  # (nb, nk) quadrature weights in k
    theta_plus: np.ndarray  # (nb, nk) complex
    N2: np.ndarray  # (nb, nk) real
    xi: np.ndarray = field(repr=False)  # (nb, nk, nx) complex
    xi_hat: np.ndarray = field(repr=False)  # (nb, nk, nx) complex modes
    bary_w: np.ndarray = field(repr=False)  # (nk,)

    @property
    def period(self) -> float:
        return self.bt.period

    @property
    def nk(self) -> int:
        return self.k_nodes.shape[1]

    @property
    def x_grid(self) -> np.ndarray:
        return np.arange(self.nx) * (self.period / self.nx)

    @property
    def modes(self) -> np.ndarray:
        return np.fft.fftfreq(self.nx, d=1.0 / self.nx)

    # -- evaluation -----------------------------------------------------

    def xi_plus_at(self, band: int, x) -> np.ndarray:
        """xi_+(x, k_j) for all nodes j of one band; x scalar or (m,).

        Trigonometric evaluation through the stored modes keeps the exact
        L-periodicity of the Bloch factors.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ph = np.exp(2j * np.pi / self.period * np.outer(x, self.modes))
        out = ph @ self.xi_hat[band].T  # (m, nk)
        return out[0] if out.shape[0] == 1 else out

    def phi_plus_grid(self, band: int) -> np.ndarray:
        """phi_+(x_i, k_j) on the stored grid, shape (nk, nx)."""
        x = self.x_grid
        return np.exp(1j * np.outer(self.k_nodes[band], x)) * self.xi[band]

    def m0_product_nodes(self, band: int, x: float, y: float) -> np.ndarray:
        """m0_-(x, k_j) m0_+(y, k_j) = xi_-(x) xi_+(y) / N^2 at all nodes."""
        xv = self.xi_plus_at(band, x)
        yv = self.xi_plus_at(band, y)
        return np.conj(xv) * yv / self.N2[band]

    def interp_nodes(self, band: int, k) -> tuple[np.ndarray, np.ndarray]:
        """Barycentric kernel (num_weights, denominator) for values at k."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        d = k[:, None] - self.k_nodes[band][None, :]
        exact = np.abs(d) < 1e-14
        d = np.where(exact, 1.0, d)
        c = self.bary_w[None, :] / d
        c = np.where(exact, 1e30, c)
        return c, np.sum(c, axis=1)


def build_bloch_table(
    pot: PeriodicPotential,
    km: QuasimomentumMap,
    n_bands: int,
    nodes_per_band: int = 32,
    nx: int = 256,
    rate: float | None = None,
) -> BlochTable:
    """Tabulate Floquet data for bands 0..n_bands-1 in one batched solve.

    All (band, node) spectral parameters are integrated in a single
    shared-step sweep; the extra resolution this hands the low bands is
    free because the step count is set by the top band anyway.
    """
    bt = km.bt
    if n_bands > bt.n_bands:
        raise ValueError("band table does not cover the requested n_bands")
    L = bt.period
    rate = bt.ode_rate if rate is None else rate
    xg, wg = _gl_nodes(nodes_per_band)

    k_nodes = np.empty((n_bands, nodes_per_band))
    gl_w = np.empty_like(k_nodes)
    for n in range(n_bands):
        a, b = n * np.pi / L, (n + 1) * np.pi / L
        k_nodes[n] = 0.5 * (a + b) + 0.5 * (b - a) * xg
        gl_w[n] = 0.5 * (b - a) * wg

    lam = km.lambda_of_k(k_nodes.ravel(), rate=rate)
    M, _, _ = monodromy_batch(bt.pot_norm, lam, 0, rate=rate)
    grid, _ = fundamental_on_grid_batch(bt.pot_norm, lam, nx, rate=rate)

    nk = nodes_per_band
    theta_p = np.empty((n_bands, nk), dtype=complex)
    N2 = np.empty((n_bands, nk))
    xi = np.empty((n_bands, nk, nx), dtype=complex)
    x = np.arange(nx) * (L / nx)
    for n in range(n_bands):
        for j in range(nk):
            r = n * nk + j
            kv = k_nodes[n, j]
            tp, tm = theta_coefficients(M[r], kv, L)
            theta_p[n, j] = tp
            c_vals = grid[r, :nx, 0]
            s_vals = grid[r, :nx, 2]
            phi_p = c_vals + tp * s_vals
            xi[n, j] = np.exp(-1j * kv * x) * phi_p
            N2[n, j] = float(np.mean(np.abs(phi_p) ** 2)) * L
    xi_hat = np.fft.fft(xi, axis=2) / nx
    return BlochTable(
        bt=bt,
        km=km,
        n_bands=n_bands,
        nx=nx,
        k_nodes=k_nodes,
        lam_nodes=lam.reshape(n_bands, nk),
        gl_weights=gl_w,
        theta_plus=theta_p,
        N2=N2,
        xi=xi,
        xi_hat=xi_hat,
        bary_w=_bary_weights(xg),
    )


# ---------------------------------------------------------------------------
# single-row construction (spec operation)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlochRow:
    band: int
    k: float
    lam: float
    theta_plus: complex
    theta_minus: complex
    N2: float
    x_grid: np.ndarray = field(repr=False)
    xi_plus: np.ndarray = field(repr=False)
    xi_minus: np.ndarray = field(repr=False)
    periodicity_defect: float = 0.0


def floquet_solutions(
    pot: PeriodicPotential,
    km: QuasimomentumMap,
    band_n: int,
    k: float,
    nx: int = 256,
    rate: float | None = None,
) -> BlochRow:
    """One Floquet row at quasimomentum k strictly inside band band_n."""
    bt = km.bt
    L = bt.period
    rate = bt.ode_rate if rate is None else rate
    k = float(k)
    if not band_n * np.pi / L < k < (band_n + 1) * np.pi / L:
        raise ValueError("k is not interior to the requested band")
    lam = float(km.lambda_of_k(np.array([k]), rate=rate)[0])
    M, _, _ = monodromy_batch(bt.pot_norm, [lam], 0, rate=rate)
    tp, tm = theta_coefficients(M[0], k, L)
    grid, _ = fundamental_on_grid_batch(bt.pot_norm, [lam], nx, rate=rate)
    x = np.arange(nx + 1) * (L / nx)
    c_vals, s_vals = grid[0, :, 0], grid[0, :, 2]
    phi_p = c_vals + tp * s_vals
    phi_m = c_vals + tm * s_vals
    xi_p = np.exp(-1j * k * x) * phi_p
    xi_m = np.exp(+1j * k * x) * phi_m
    n2 = float(np.mean((phi_p * phi_m)[:-1]).real) * L
    defect = float(abs(xi_p[-1] - xi_p[0]))
    return BlochRow(
        band=band_n,
        k=k,
        lam=lam,
        theta_plus=tp,
        theta_minus=tm,
        N2=n2,
        x_grid=x,
        xi_plus=xi_p,
        xi_minus=xi_m,
        periodicity_defect=defect,
    )


def m0_product(row: BlochRow, x: float, y: float) -> complex:
    """Kernel amplitude factor m0_-(x, k) m0_+(y, k) = xi_-(x) xi_+(y) / N^2.

    L-periodic in x and y separately; evaluated by trigonometric
    interpolation of the stored periodic factors.
    """
    nx = row.x_grid.size - 1
    L = row.x_grid[-1]
    modes = np.fft.fftfreq(nx, d=1.0 / nx)
    xm_hat = np.fft.fft(row.xi_minus[:-1]) / nx
    xp_hat = np.fft.fft(row.xi_plus[:-1]) / nx
    ex = np.exp(2j * np.pi / L * x * modes)
    ey = np.exp(2j * np.pi / L * y * modes)
    return complex((xm_hat @ ex) * (xp_hat @ ey) / row.N2)


# ---------------------------------------------------------------------------
# distorted Fourier transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandTransform:
    """fhat on the table's k-nodes, with Plancherel and inversion helpers."""

    blt: BlochTable
    values: np.ndarray  # (nb, nk) complex

    def l2_norm_sq(self) -> float:
        """integral over both signs of k of |fhat|^2 dk (real f)."""
        return float(2.0 * np.sum(self.blt.gl_weights * np.abs(self.values) ** 2))

    def inverse_at(self, x) -> np.ndarray:
        """Reconstruct f(x) (real input assumed) from the band sums."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        blt = self.blt
        out = np.zeros(x.size)
        pref = 1.0 / np.sqrt(2.0 * np.pi)
        for n in range(blt.n_bands):
            xi_x = np.atleast_2d(blt.xi_plus_at(n, x))  # (m, nk)
            phi_p = np.exp(1j * np.outer(x, blt.k_nodes[n])) * xi_x
            term = np.conj(phi_p) * self.values[n][None, :] / np.sqrt(blt.N2[n])[None, :]
            out += 2.0 * pref * np.sum(blt.gl_weights[n][None, :] * term.real, axis=1)
        return out if out.size > 1 else float(out[0])


def forward_transform(
    pot: PeriodicPotential,
    km: QuasimomentumMap,
    blt: BlochTable,
    f,
    x_span: tuple[float, float],
) -> BandTransform:
    """fhat(k_j) = (2 pi)^(-1/2) N^(-1) integral phi_+(y, k_j) f(y) dy.

    f is a callable with support inside x_span; it is resampled on the
    stored x-grid extended over whole periods (the Bloch factors extend by
    the Floquet property), and each period is integrated by composite
    Simpson on the grid.
    """
    L = blt.period
    nx = blt.nx
    h = L / nx
    p_lo = int(np.floor(x_span[0] / L))
    p_hi = int(np.ceil(x_span[1] / L))
    x_cell = np.arange(nx + 1) * h
    pref = 1.0 / np.sqrt(2.0 * np.pi)
    vals = np.zeros((blt.n_bands, blt.nk), dtype=complex)
    for n in range(blt.n_bands):
        k = blt.k_nodes[n]  # (nk,)
        xi_cell = np.concatenate([blt.xi[n], blt.xi[n][:, :1]], axis=1)  # (nk, nx+1)
        phi_cell = np.exp(1j * np.outer(k, x_cell)) * xi_cell
        acc = np.zeros(blt.nk, dtype=complex)
        for p in range(p_lo, p_hi):
            y = x_cell + p * L
            fy = np.asarray(f(y), dtype=float)
            if not np.any(fy):
                continue
            integrand = phi_cell * fy[None, :]
            acc += np.exp(1j * k * (p * L)) * simpson(integrand, dx=h, axis=1)
        vals[n] = pref * acc / np.sqrt(blt.N2[n])
    return BandTransform(blt=blt, values=vals)


def parseval_check(
    pot: PeriodicPotential,
    km: QuasimomentumMap,
    blt: BlochTable,
    f,
    x_span: tuple[float, float],
) -> tuple[float, float, float]:
    """(integral |f|^2, integral |fhat|^2 dk, relative error)."""
    ft = forward_transform(pot, km, blt, f, x_span)
    xs = np.linspace(x_span[0], x_span[1], 20001)
    fl2 = float(simpson(np.asarray(f(xs)) ** 2, x=xs))
    fhl2 = ft.l2_norm_sq()
    return fl2, fhl2, abs(fl2 - fhl2) / fl2


_D2_STENCIL = np.array(
    [-1.0 / 560, 8.0 / 315, -1.0 / 5, 8.0 / 5, -205.0 / 72, 8.0 / 5, -1.0 / 5, 8.0 / 315, -1.0 / 560]
)


def eigenrelation_check(
    pot: PeriodicPotential,
    km: QuasimomentumMap,
    blt: BlochTable,
    f,
    x_span: tuple[float, float],
) -> float:
    """max_k |(H f)-hat (k) - E(k) fhat(k)| over the table nodes.

    H f = -f'' + P f with f'' from the 8th-order central stencil on the
    table's x-resolution; both transforms use the same quadrature.
    """
    L = blt.period
    nx = blt.nx
    h = L / nx
    pad = 8
    y = np.arange(int(x_span[0] / h) - pad, int(x_span[1] / h) + pad + 1) * h
    fy = np.asarray(f(y), dtype=float)
    d2 = np.convolve(fy, _D2_STENCIL[::-1], mode="same") / (h * h)
    p_norm = blt.bt.pot_norm(y)
    hf = -d2 + p_norm * fy

    def hf_callable(yq):
        yq = np.asarray(yq)
        idx = np.rint((yq - y[0]) / h).astype(int)
        ok = (idx >= 0) & (idx < y.size)
        out = np.zeros(yq.shape)
        out[ok] = hf[idx[ok]]
        return out

    span = (y[0], y[-1])
    ft = forward_transform(pot, km, blt, f, span)
    ht = forward_transform(pot, km, blt, hf_callable, span)
    resid = np.abs(ht.values - blt.lam_nodes * ft.values)
    return float(np.max(resid))
