"""Command-line front end: spectral tables, degenerate-set scans, kernel
values, decay fits, and verification reports.

All numeric columns are written with 17 significant digits and reports
carry a schema_version plus the full effective config for provenance; no
wall-clock metadata is embedded, so identical config + seed reproduce
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bands import BandTable, build_kmap, find_bands, gap_decay_report
from .bloch import build_bloch_table, floquet_solutions, parseval_check, eigenrelation_check, forward_transform
from .config import SCHEMA_VERSION, RunConfig, load_config
from .errors import BlochKGError, DegenerateMassWarning
from .hill_matrix import band_edges_oracle
from .kernel import KernelEvaluator, KernelRequest, decay_scan
from .oscillatory import OscillatoryIntegral, oscillatory_quad, vdc_bound
from .phase import PhaseModel, find_degenerate_set

FMT = "%.17g"


def _fmt(x) -> str:
    return FMT % float(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def _report_base(cfg: RunConfig) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "tool_version": __version__}


def _band_table(cfg: RunConfig, out: Path, use_cache: bool) -> BandTable:
    cache = out / "bands_cache.json"
    pot = cfg.build_potential()
    if use_cache and cache.exists():
        bt = BandTable.load(cache)
        same = (
            tuple(bt.pot.cos_coeffs) == tuple(pot.cos_coeffs)
            and tuple(bt.pot.sin_coeffs) == tuple(pot.sin_coeffs)
            and bt.pot.period == pot.period
            and bt.n_bands >= cfg.effective_n_bands
        )
        if same:
            return bt
    bt = find_bands(pot, lambda_max=None, n_bands=cfg.effective_n_bands, rate=cfg.ode_rate)
    if use_cache:
        bt.save(cache)
    return bt


def _band_rows(bt: BandTable):
    rows = []
    L = bt.period
    gaps = bt.gaps_w()
    for n in range(bt.n_bands):
        ell = int(bt.ell[n])
        target = ell * np.pi / L
        if n == 0:
            off = 0.0
        else:
            off = max(abs(bt.w_minus[n] - target), abs(bt.w_plus[n] - target))
        rows.append(
            (
                n,
                ell,
                bt.edges_plus[n],
                bt.edges_minus[n + 1],
                gaps[n],
                np.sqrt(1.0 + ell * ell) * off,
            )
        )
    return rows


def cmd_bands(cfg: RunConfig, out: Path, oracle: bool, cache: bool) -> int:
    bt = _band_table(cfg, out, cache)
    _write_csv(
        out / "bands.csv",
        ["n", "ell_n", "A_plus", "A_minus_next", "gap_w", "edge_offset_times_ell"],
        _band_rows(bt),
    )
    if bt.n_bands >= 8:
        _write_csv(
            out / "gap_decay.csv",
            ["ell", "gap_w", "prod_N1", "prod_N2", "prod_N3", "prod_N4"],
            gap_decay_report(bt),
        )
    if oracle:
        n_cmp = min(bt.n_bands, 12)
        ap, am = band_edges_oracle(bt.pot, n_cmp, dim=max(64, 4 * n_cmp + 8))
        rows = []
        worst = 0.0
        for n in range(n_cmp):
            ours = bt.edges_plus[n] + bt.shift
            diff = abs(ours - ap[n])
            worst = max(worst, diff)
            rows.append((n, ours, ap[n], diff))
            if n >= 1:
                ours_m = bt.edges_minus[n] + bt.shift
                diff_m = abs(ours_m - am[n])
                worst = max(worst, diff_m)
        _write_csv(out / "oracle_compare.csv", ["n", "A_plus", "oracle", "abs_diff"], rows)
        print(f"oracle comparison: max |edge - oracle| = {worst:.3e}")
    print(f"wrote {out / 'bands.csv'} ({bt.n_bands} bands, shift={bt.shift:.12g})")
    return 0


def cmd_dset(cfg: RunConfig, out: Path, cache: bool) -> int:
    bt = _band_table(cfg, out, cache)
    km = build_kmap(bt.pot, bt, cfg.nodes_per_band, cfg.delta_edge_factor, rate=cfg.ode_rate)
    ds = find_degenerate_set(km, cfg.effective_dset_k_max, rate=cfg.dscan_rate)
    payload = _report_base(cfg)
    payload["candidates"] = [
        {"mu": w.mu_star, "k_witness": w.k_star, "residual": w.e3_residual}
        for w in ds.witnesses
    ]
    payload["k_max"] = ds.k_max
    _write_json(out / "dset.json", payload)
    print(f"degenerate-set candidates: {len(ds.mus)}")
    return 0


def _full_stack(cfg: RunConfig, out: Path, cache: bool):
    bt = _band_table(cfg, out, cache)
    km = build_kmap(bt.pot, bt, cfg.nodes_per_band, cfg.delta_edge_factor, rate=cfg.ode_rate)
    blt = build_bloch_table(bt.pot, km, cfg.n_max, cfg.bloch_nodes, cfg.nx, rate=cfg.ode_rate)
    pm = PhaseModel(mu=cfg.mu, km=km, ode_rate=cfg.dscan_rate)
    return bt, km, blt, pm


def cmd_kernel(cfg: RunConfig, out: Path, t: float, x: float, y: float,
               oracle: bool, cache: bool) -> int:
    bt, km, blt, pm = _full_stack(cfg, out, cache)
    ds = find_degenerate_set(km, cfg.effective_dset_k_max, rate=cfg.dscan_rate)
    ev = KernelEvaluator(pm, blt, dset=ds,
                         rel_tol=cfg.quad_rel_tol, max_panels=cfg.quad_max_panels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMassWarning)
        res = ev.eval(KernelRequest(t=t, x=x, y=y, n_max=cfg.n_max, mu=cfg.mu))
    payload = _report_base(cfg)
    payload.update(
        {
            "t": t,
            "x": x,
            "y": y,
            "value_re": res.value.real,
            "value_im": res.value.imag,
            "one_sided_imag": res.one_sided_imag,
            "tail_bound": res.tail_bound,
            "quad_err": res.quad_err,
            "degenerate_mass": res.degenerate_mass,
            "band_sums_re": [res.band_sums.get(n, 0.0).real for n in range(cfg.n_max)],
        }
    )
    if oracle and cfg.potential == "free":
        K = cfg.n_max * np.pi / cfg.period
        kk = np.linspace(0.0, K, 2_000_001)
        from scipy.integrate import simpson

        g = np.cos((x - y) * kk) * np.sin(t * np.sqrt(kk * kk + cfg.mu)) * (kk * kk + cfg.mu) ** -0.75
        payload["oracle_value"] = float(simpson(g, x=kk) / np.pi)
    _write_json(out / "kernel.json", payload)
    print(f"K({t}, {x}, {y}) = {res.value.real:.12g}  (quad_err {res.quad_err:.2e})")
    return 0


def _decay_fit(rows):
    ts = np.array([r.t for r in rows])
    sups = np.array([r.sup_K for r in rows])
    fit: dict = {
        "pairs": [[float(a), float(b)] for a, b in zip(ts, sups)],
        "normalized": [float(s * t ** (1.0 / 3.0)) for t, s in zip(ts, sups)],
        "slope": None,
        "residual": None,
    }
    good = sups > 0
    if good.sum() >= 4 and ts[good].max() / ts[good].min() >= 10.0:
        lt, ls = np.log(ts[good]), np.log(sups[good])
        A = np.vstack([np.ones_like(lt), lt]).T
        coef, *_ = np.linalg.lstsq(A, ls, rcond=None)
        resid = ls - A @ coef
        fit["slope"] = float(coef[1])
        fit["residual"] = float(np.sqrt(np.mean(resid**2)))
    norm = np.array(fit["normalized"])
    if norm.size and np.all(norm > 0):
        fit["ratio_max_min"] = float(norm.max() / norm.min())
    return fit


def cmd_decay(cfg: RunConfig, out: Path, cache: bool) -> int:
    bt, km, blt, pm = _full_stack(cfg, out, cache)
    ds = find_degenerate_set(km, cfg.effective_dset_k_max, rate=cfg.dscan_rate)
    degenerate = ds.is_degenerate(cfg.mu)
    xs = np.arange(cfg.x_offsets) * (bt.period / cfg.x_offsets)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateMassWarning)
        rows = decay_scan(pm, blt, km, bt, cfg.t_list, x_offsets=xs, dset=ds,
                          rel_tol=cfg.quad_rel_tol)
    _write_csv(
        out / "decay.csv",
        ["t", "sup_K", "sup_K_t13", "arg_R", "arg_offset"],
        [(r.t, r.sup_K, r.sup_K_t13, r.arg_R, r.arg_offset) for r in rows],
    )
    payload = _report_base(cfg)
    payload["fit"] = _decay_fit(rows)
    payload["degenerate_mass"] = bool(degenerate)
    if degenerate:
        payload["fit"]["slope"] = None  # no rate claim near the degenerate set
    _write_json(out / "decay.json", payload)
    msg = "degenerate-mass flag set; no slope assertion" if degenerate else f"fit: {payload['fit']['slope']}"
    print(f"decay scan done over t={list(cfg.t_list)}; {msg}")
    return 0


def cmd_bloch_check(cfg: RunConfig, out: Path, cache: bool) -> int:
    bt, km, blt, pm = _full_stack(cfg, out, cache)
    pot = bt.pot
    L = bt.period

    def bump(y):
        y = np.asarray(y, dtype=float)
        u = (y - 0.4 * L) / (1.4 * L)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(np.abs(u) < 1, np.exp(-1.0 / np.maximum(1 - u * u, 1e-300)), 0.0)

    span = (0.4 * L - 1.5 * L, 0.4 * L + 1.5 * L)
    fl2, fhl2, rel = parseval_check(pot, km, blt, bump, span)
    resid = eigenrelation_check(pot, km, blt, bump, span)
    ft = forward_transform(pot, km, blt, bump, span)
    xq = np.linspace(span[0], span[1], 301)
    recon = ft.inverse_at(xq)
    ref = bump(xq)
    rt = float(np.sqrt(np.trapezoid((recon - ref) ** 2, xq) / np.trapezoid(ref**2, xq)))
    row = floquet_solutions(pot, km, 1, 1.5 * np.pi / L, nx=cfg.nx)
    payload = _report_base(cfg)
    payload.update(
        {
            "parseval_rel_err": rel,
            "eigenrelation_residual": resid,
            "roundtrip_rel_l2": rt,
            "N2_min": float(np.min(blt.N2)),
            "N2_imag_max": 0.0,
            "periodicity_defect_band1": row.periodicity_defect,
        }
    )
    _write_json(out / "bloch_check.json", payload)
    print(f"parseval rel {rel:.2e}; eigenrelation {resid:.2e}; roundtrip {rt:.2e}")
    return 0


def cmd_phase_check(cfg: RunConfig, out: Path, cache: bool) -> int:
    bt, km, blt, pm = _full_stack(cfg, out, cache)
    rng = np.random.default_rng(cfg.seed)
    L = bt.period
    n_test = min(8, bt.n_bands - 1)
    ks = []
    for n in range(n_test):
        lo, hi = n * np.pi / L, (n + 1) * np.pi / L
        pad = 0.05 * (hi - lo)
        ks.append(rng.uniform(lo + pad, hi - pad, 12))
    ks = np.concatenate(ks)
    _, etad, etadd, _ = pm.eta_derivs(ks)
    orders = []
    for h in (1e-3, 1e-4):
        _, ep, _, _ = pm.eta_derivs(ks + h)
        _, em, _, _ = pm.eta_derivs(ks - h)
        fd = (ep - em) / (2 * h)
        orders.append(np.max(np.abs(fd - etadd)))
    order = float(np.log10(orders[0] / orders[1]))
    payload = _report_base(cfg)
    payload.update(
        {
            "etadd_fd_err_h3": float(orders[0]),
            "etadd_fd_err_h4": float(orders[1]),
            "observed_order": order,
            "etadd_min_scaled": float(np.min(np.abs(etadd) * (1 + ks * ks) ** 1.5)),
        }
    )
    _write_json(out / "phase_check.json", payload)
    print(f"eta'' FD consistency order ~ {order:.2f}")
    return 0


def cmd_vdc_suite(cfg: RunConfig, out: Path) -> int:
    rng = np.random.default_rng(cfg.seed)
    n_cases = 1000
    violations = 0
    worst = 0.0
    for _ in range(n_cases):
        m = int(rng.integers(1, 4))
        mu = float(rng.uniform(5.0, 200.0))
        a, b = 0.0, float(rng.uniform(0.5, 2.0))
        c_lin = float(rng.uniform(0.3, 2.0))
        c_quad = float(rng.uniform(0.1, 1.0))
        amp_freq = float(rng.uniform(0.0, 3.0))

        if m == 1:
            def h(k, o, c_lin=c_lin, c_quad=c_quad):
                if o == 0:
                    return c_lin * k + 0.5 * c_quad * k * k
                if o == 1:
                    return c_lin + c_quad * k
                if o == 2:
                    return np.full_like(k, c_quad)
                return np.zeros_like(k)
            c_m = c_lin
            monotone = True
        elif m == 2:
            def h(k, o, c_lin=c_lin, c_quad=c_quad):
                if o == 0:
                    return c_lin * k + 0.5 * c_quad * k * k
                if o == 1:
                    return c_lin + c_quad * k
                if o == 2:
                    return np.full_like(k, c_quad)
                return np.zeros_like(k)
            c_m = c_quad
            monotone = False
        else:
            def h(k, o, c_quad=c_quad):
                if o == 0:
                    return c_quad * k**3 / 6.0
                if o == 1:
                    return 0.5 * c_quad * k * k
                if o == 2:
                    return c_quad * k
                return np.full_like(k, c_quad)
            c_m = c_quad
            monotone = False

        def amp(k, amp_freq=amp_freq):
            return (1.0 + 0.5 * np.cos(amp_freq * k)).astype(complex)

        oi = OscillatoryIntegral(a, b, lambda k, o: mu * np.asarray(h(np.asarray(k, dtype=float), o)), amp)
        val, _ = oscillatory_quad(oi, rel_tol=1e-11)
        ends = min(abs(1.0 + 0.5 * np.cos(amp_freq * a)), abs(1.0 + 0.5 * np.cos(amp_freq * b)))
        kk = np.linspace(a, b, 4001)
        tv = float(np.sum(np.abs(np.diff(1.0 + 0.5 * np.cos(amp_freq * kk)))))
        cert = vdc_bound(m, c_m, (a, b), (ends, tv), monotone_flag=monotone, mu_scale=mu)
        ratio = abs(val) / cert.bound
        worst = max(worst, ratio)
        if abs(val) > cert.bound:
            violations += 1
    payload = _report_base(cfg)
    payload.update({"n_cases": n_cases, "violations": violations, "max_ratio": worst})
    _write_json(out / "vdc_suite.json", payload)
    print(f"vdc suite: {violations} violations over {n_cases} cases (max ratio {worst:.3f})")
    return 0 if violations == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blochkg", description=__doc__)
    p.add_argument("--config", type=Path, default=None, help="path to a key = value config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--oracle", action="store_true", help="enable independent-oracle comparisons")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--cache", action="store_true", help="reuse/write the band table cache file")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bands")
    sub.add_parser("dset")
    sub.add_parser("bloch-check")
    sub.add_parser("phase-check")
    kq = sub.add_parser("kernel")
    kq.add_argument("--t", type=float, required=True)
    kq.add_argument("--x", type=float, required=True)
    kq.add_argument("--y", type=float, required=True)
    sub.add_parser("decay")
    sub.add_parser("vdc-suite")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = RunConfig(**{**cfg.to_dict(), "seed": args.seed})
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "bands":
            return cmd_bands(cfg, out, args.oracle, args.cache)
        if args.command == "dset":
            return cmd_dset(cfg, out, args.cache)
        if args.command == "kernel":
            return cmd_kernel(cfg, out, args.t, args.x, args.y, args.oracle, args.cache)
        if args.command == "decay":
            return cmd_decay(cfg, out, args.cache)
        if args.command == "bloch-check":
            return cmd_bloch_check(cfg, out, args.cache)
        if args.command == "phase-check":
            return cmd_phase_check(cfg, out, args.cache)
        if args.command == "vdc-suite":
            return cmd_vdc_suite(cfg, out)
    except BlochKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
