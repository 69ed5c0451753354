"""Command-line experiment runner.

Subcommands ``qei``, ``pointwise``, ``scan`` and ``schur`` read an INI
configuration, run a deterministic sweep and write CSV/JSON reports.  Exit
status: 0 when every check passes, 1 when a check fails, 2 for usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from . import __version__
from .bounds import QeiSetup, pointwise_verify, qei_verify
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, RunManifest
from .construct import build_atlas_cylinder, build_u, build_v, v_delta_spectra, v_spectrum
from .errors import BoundViolation
from .field import (Coherent, ModeBasis, Particles, StateSpec, Thermal, Vacuum, localized_two_point_spectrum,
                    two_point)
from .grid import LineFunction, LineGrid, Mollifier, bump, bump_profile, fourier, make_grid, plateau
from .kernels import (ConeSpec, KernelMatrix, cone_sobolev_integral, decay_exponent, mollified_pairing_limit,
                      positivity_check, schur_product)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: List[Sequence]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path: Path, payload: dict):
    body = dict(schema_version=SCHEMA_VERSION, **payload)
    path.write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")


def state_label(d: dict) -> str:
    kind = d["kind"]
    if kind == "thermal":
        return f"thermal(beta={d['beta']!r})"
    if kind == "coherent":
        parts = ";".join(f"{n}:{re!r}{im:+}j" for n, (re, im) in d["amplitudes"])
        return f"coherent({parts})"
    if kind == "particles":
        return "particles(" + ";".join(f"{n}:{q}" for n, q in d["occupations"]) + ")"
    return kind


def state_parameter(d: dict) -> float:
    if d["kind"] == "thermal":
        return float(d["beta"])
    if d["kind"] == "coherent":
        return float(np.sqrt(sum(re * re + im * im for _, (re, im) in d["amplitudes"])))
    if d["kind"] == "particles":
        return float(sum(q for _, q in d["occupations"]))
    return 0.0


# ---------------------------------------------------------------------------
# state families


def _solution_amplitude(A: float, n: int, m: float, L: float) -> float:
    """Mode amplitude whose real solution has peak ``A``."""
    w = np.sqrt((2 * np.pi * n / L) ** 2 + m * m)
    return A * np.sqrt(w * L / 2.0)


def state_family(cfg: ExperimentConfig, m: float, seed: int) -> List[StateSpec]:
    """Vacuum, thermal, coherent and one/two-particle states, deterministic in ``seed``."""
    st = cfg["states"]
    L = cfg["grid"]["L"]
    rng = np.random.default_rng(seed)
    states: List[StateSpec] = [Vacuum()]
    if st["thermal_count"]:
        states += [Thermal(float(b)) for b in np.geomspace(st["beta_min"], st["beta_max"], st["thermal_count"])]
    mm = st["max_mode"]
    Amax = st["amplitude_max"]
    for i in range(st["coherent_count"]):
        if i == 0:
            states.append(Coherent(((0, complex(_solution_amplitude(Amax, 0, m, L))),)))
            continue
        k = min(st["coherent_modes"], 2 * mm + 1)
        ns = rng.choice(np.arange(-mm, mm + 1), size=k, replace=False)
        As = Amax * rng.uniform(0.0, 1.0, size=k) / np.sqrt(k)
        ph = rng.uniform(0.0, 2 * np.pi, size=k)
        states.append(Coherent(tuple((int(n), complex(_solution_amplitude(A, int(n), m, L) * np.exp(1j * p)))
                                     for n, A, p in zip(ns, As, ph))))
    for _ in range(st["one_particle_count"]):
        states.append(Particles(((int(rng.integers(-mm, mm + 1)), 1),)))
    for _ in range(st["two_particle_count"]):
        a, b = (int(v) for v in rng.integers(-mm, mm + 1, size=2))
        states.append(Particles(((a, 2),) if a == b else ((min(a, b), 1), (max(a, b), 1))))
    return states


def qei_setup(cfg: ExperimentConfig, m: float) -> QeiSetup:
    g, tf, pl = cfg["grid"], cfg["test_function"], cfg["plateau"]
    return QeiSetup(m=m, L=g["L"], T=g["T"], Nt=g["Nt"], Nx=g["Nx"], N_max=cfg["field"]["N_max"],
                    l=cfg["field"]["l"], f_center=(tf["center_t"], tf["center_x"]),
                    f_radii=(tf["radius_t"], tf["radius_x"]), f_scale=tf["scale"],
                    F_inner=tuple(pl["inner_t"]), F_outer=tuple(pl["outer_t"]))


# ---------------------------------------------------------------------------
# subcommands


def run_qei(cfg: ExperimentConfig, out: Path) -> int:
    seed = cfg["experiment"]["seed"]
    tol = cfg["tolerances"]["margin"]
    reports, margins, plot = [], [], []
    ok = True
    for m in cfg["field"]["masses"]:
        setup = qei_setup(cfg, m)
        _, f, F, atlas, basis = setup.build()
        states = state_family(cfg, m, seed)
        rep = qei_verify(states, f, F, basis, setup.l, atlas, tol=tol, config_id=cfg["experiment"]["id"],
                         raise_on_failure=False)
        ok &= rep.passed
        d = rep.as_dict()
        d["mass"] = m
        reports.append(d)
        for r in rep.rows:
            margins.append([m, r.state_id, state_label(r.state), r.lhs, r.rhs, r.margin1, r.margin2,
                            r.margin3, r.delta])
            plot.append([m, r.state_id, r.state["kind"], state_parameter(r.state), r.margin1 / r.scale,
                         r.margin2 / r.scale, r.margin3 / r.scale])
    write_json(out / "qei_report.json", dict(config_id=cfg["experiment"]["id"], config_hash=cfg.digest(),
                                             seed=seed, passed=ok, reports=reports))
    write_csv(out / "qei_margins.csv", ["mass", "state_id", "state", "lhs", "rhs", "margin1", "margin2",
                                        "margin3", "delta"], margins)
    write_csv(out / "qei_plot.csv", ["mass", "state_id", "kind", "parameter", "rel_margin1", "rel_margin2",
                                     "rel_margin3"], plot)
    if not ok:
        bad = [r for d in reports for r in d["rows"] if not r["passed"]]
        print(f"QEI check failed for {len(bad)} state(s); first: {json.dumps(_clean(bad[0]))}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def pointwise_states(cfg: ExperimentConfig, m: float, seed: int) -> List[StateSpec]:
    pw = cfg["pointwise"]
    L = cfg["grid"]["L"]
    scale = pw["amplitude_scale"]
    rng = np.random.default_rng(seed)
    states: List[StateSpec] = [Vacuum(), Thermal(cfg["states"]["beta_max"])]
    for A in pw["amplitudes"]:
        states.append(Coherent(((0, complex(_solution_amplitude(A * scale, 0, m, L))),)))
    mm = cfg["states"]["max_mode"]
    Amax = max(pw["amplitudes"]) if pw["amplitudes"] else 1.0
    for _ in range(pw["random_count"]):
        ns = rng.choice(np.concatenate([np.arange(-mm, 0), np.arange(1, mm + 1)]), size=3, replace=False)
        As = scale * Amax * rng.uniform(0.0, 1.0, size=3) / 3.0
        ph = rng.uniform(0.0, 2 * np.pi, size=3)
        states.append(Coherent(tuple((int(n), complex(_solution_amplitude(A, int(n), m, L) * np.exp(1j * p)))
                                     for n, A, p in zip(ns, As, ph))))
    return states


def run_pointwise(cfg: ExperimentConfig, out: Path) -> int:
    seed = cfg["experiment"]["seed"]
    pw = cfg["pointwise"]
    tol = cfg["tolerances"]["margin"]
    payload, rows_csv = [], []
    ok = True
    for m in cfg["field"]["masses"]:
        setup = qei_setup(cfg, m)
        g, f, F, atlas, basis = setup.build()
        states = pointwise_states(cfg, m, seed)
        zero = f.with_values(np.zeros_like(f.values))
        prop = qei_verify(states, zero, F, basis, setup.l, atlas, tol=tol, raise_on_failure=False)
        rep = pointwise_verify(states, (pw["point_t"], pw["point_x"]), F, basis, pw["R"], prop.constants.c,
                               tol=tol, c_override=pw["c_override"], raise_on_failure=False)
        ok &= rep.passed and prop.passed
        d = rep.as_dict()
        d["mass"] = m
        d["prop_constants"] = prop.constants.as_dict()
        d["failures"] = [r for r in d["rows"] if not r["passed"]]
        payload.append(d)
        for r in rep.rows:
            rows_csv.append([m, r.state_id, state_label(r.state), r.abs_phi, r.slice_energy, r.region_energy,
                             r.smeared_classical, r.stress, r.rhs, r.link_prop, r.link_energy, r.link_region,
                             r.link_morrey, r.link_final, r.margin])
    write_json(out / "pointwise_report.json", dict(config_id=cfg["experiment"]["id"], config_hash=cfg.digest(),
                                                   seed=seed, passed=ok, reports=payload))
    write_csv(out / "pointwise_links.csv",
              ["mass", "state_id", "state", "abs_phi", "slice_energy", "region_energy", "smeared_classical",
               "stress", "rhs", "link_prop", "link_energy", "link_region", "link_morrey", "link_final", "margin"],
              rows_csv)
    if not ok:
        bad = [r for d in payload for r in d["failures"]]
        if bad:
            print(f"pointwise bound failed; offending state: {json.dumps(_clean(bad[0]['state']))}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def scan_rows(cfg: ExperimentConfig):
    """Rows ``(object, direction, s, cutoff, partial, slope)`` and ``(check, expected, observed)`` verdicts."""
    sc = cfg["scan"]
    tol = cfg["tolerances"]
    rows, verdicts = [], []
    # localized v along the +k ray and its Sobolev threshold on the + cone
    line = LineGrid(sc["line_period"], sc["line_points"])
    B = bump_profile(np.abs(line.x) / sc["localizer_radius"])
    big = LineGrid(sc["line_period"], 1 << 16)
    cut_v = (100.0, 200.0, 400.0, 800.0)
    mags = np.linspace(2.0, 30.0, 40)
    for l in sc["v_orders"]:
        v = build_v(l, line)
        fit = decay_exponent(LineFunction(line, B * v.values), (1.0,), mags)
        rows.append([f"v(l={l})", "+k", "", "", "", fit.slope])
        verdicts.append((f"v(l={l}) slope", "fitted", "fitted" if abs(fit.slope + 2 * l) <= tol["decay"] else
                         f"slope {fit.slope:.3f}"))
        for s, expect in ((2 * l - 1.0, "bounded"), (2.0 * l, "growing")):
            lad = cone_sobolev_integral(v_spectrum(l, big), ConeSpec((1.0,), 1.0, s, cut_v), tol["ratio"])
            rows += [[f"v(l={l})", "+k", s, c, p, ""] for c, p in zip(lad.cutoffs, lad.partials)]
            verdicts.append((f"v(l={l}) cone s={s}", expect, lad.verdict))
    # localized vacuum two-point function
    n = sc["vacuum_points"]
    g = make_grid(cfg["grid"]["L"], np.pi * cfg["grid"]["L"] / (2 * np.pi), n, n)
    loc = bump(g, (0.0, g.L / 2), (0.4 * g.T, 0.4 * g.L))
    ev, _ = two_point(Vacuum(), ModeBasis(cfg["field"]["masses"][0], g.L, sc["vacuum_modes"]))
    spec = localized_two_point_spectrum(ev, loc)
    kmax = min(np.abs(g.omega).max(), np.abs(g.k).max())
    cuts = tuple(np.linspace(kmax / 3, 1.4 * kmax, 14))
    cones = (("null", (-1.0, 1.0, 1.0, -1.0), sc["s_growing"], "growing"),
             ("timelike", (-1.0, 0.0, 1.0, 0.0), sc["s_bounded"], "bounded"),
             ("spacelike", (0.0, 1.0, 0.0, -1.0), sc["s_bounded"], "bounded"))
    for name, d, s, expect in cones:
        lad = cone_sobolev_integral(spec, ConeSpec(d, sc["cone_alpha"], s, cuts), tol["ratio"])
        rows += [["vacuum", name, s, c, p, ""] for c, p in zip(lad.cutoffs, lad.partials)]
        verdicts.append((f"vacuum {name} s={s}", expect, lad.verdict))
    # smooth bump control
    bspec = fourier(bump(g, (0.0, g.L / 2), (0.4 * g.T, 0.4 * g.L)))
    kb = min(np.abs(g.omega).max(), np.abs(g.k).max())
    for name, d in (("time", (1.0, 0.0)), ("space", (0.0, 1.0)), ("diagonal", (1.0, 1.0))):
        lad = cone_sobolev_integral(bspec, ConeSpec(d, 0.5, 1.0, tuple(np.linspace(kb / 2, kb, 6))), tol["ratio"])
        rows += [["bump", name, 1.0, c, p, ""] for c, p in zip(lad.cutoffs, lad.partials)]
        verdicts.append((f"bump {name}", "bounded", lad.verdict))
    # v x delta against the 1-d ladder with the transverse width factor
    k1 = 2 * np.pi * np.fft.fftfreq(512, d=0.1)
    two, one = v_delta_spectra(2, k1, k1, 0.5)
    cut2 = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    a = cone_sobolev_integral(two, ConeSpec((1.0, 0.0), 0.5, 1.0, cut2), tol["ratio"])
    b = cone_sobolev_integral(one, ConeSpec((1.0,), 0.5, 1.0, cut2), tol["ratio"])
    ratio = np.array(a.partials) / np.array(b.partials)
    rows += [["v x delta / v", "(1,0)", 1.0, c, r, ""] for c, r in zip(cut2, ratio)]
    verdicts.append(("v x delta equivalence", "within factor 2",
                     "within factor 2" if np.all((ratio >= 0.5) & (ratio <= 2.0)) else "outside"))
    return rows, verdicts


def run_scan(cfg: ExperimentConfig, out: Path) -> int:
    rows, verdicts = scan_rows(cfg)
    write_csv(out / "scan.csv", ["object", "direction", "s", "cutoff", "partial_integral", "slope_fit"], rows)
    write_csv(out / "scan_verdicts.csv", ["check", "expected", "observed"], verdicts)
    bad = [v for v in verdicts if v[1] != v[2]]
    for v in bad:
        print(f"scan mismatch: {v[0]} expected {v[1]}, observed {v[2]}", file=sys.stderr)
    return EXIT_OK if not bad else EXIT_FAIL


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    r = int(rng.integers(1, n + 1))
    A = rng.normal(size=(n, r)) + 1j * rng.normal(size=(n, r))
    return A @ A.conj().T


def schur_battery(cfg: ExperimentConfig, seed: int):
    sc = cfg["schur"]
    tol = cfg["tolerances"]["positivity"]
    rng = np.random.default_rng(seed)
    rows, ok = [], True
    for i in range(sc["pairs"]):
        n = int(rng.integers(sc["min_size"], sc["max_size"] + 1))
        K1, K2 = KernelMatrix(random_psd(rng, n)), KernelMatrix(random_psd(rng, n))
        if sc["inject_non_psd"] and i == 0:
            K2 = KernelMatrix(-np.eye(n, dtype=complex))
        wit = positivity_check(schur_product(K1, K2), tol)
        ok &= wit.positive
        rows.append(["pair", i, n, "", wit.min_eigenvalue, wit.norm, wit.relative_min, wit.positive])
    return rows, ok


def schur_ladder(cfg: ExperimentConfig):
    """Mollified pairing of the vacuum kernel against the kernel ``u`` on a small grid."""
    g = make_grid(cfg["grid"]["L"], 3.0, 64, 48)
    f = bump(g, (0.0, g.L / 2), (1.0, 1.2))
    F = plateau(g, ((-1.1, 1.1), None), ((-1.6, 1.6), None))
    atlas = build_atlas_cylinder(g, (-1.6, 1.6))
    U = build_u(f, F, atlas, cfg["field"]["l"])
    _, K = two_point(Vacuum(), ModeBasis(cfg["field"]["masses"][0], g.L, 12), g)
    _, rep = mollified_pairing_limit(K, U, Mollifier(2), cfg["schur"]["ladder"])
    ratios = ("", "") + rep.ratios
    rows = [["ladder", i, g.n_sites, lam, val, "", ratios[i], rep.positive and rep.convergent]
            for i, (lam, val) in enumerate(zip(rep.lambdas, rep.values))]
    return rows, rep


def run_schur(cfg: ExperimentConfig, out: Path) -> int:
    rows, ok = schur_battery(cfg, cfg["experiment"]["seed"])
    lrows, rep = schur_ladder(cfg)
    write_csv(out / "schur.csv", ["record", "index", "size", "lambda", "value", "norm", "relative", "passed"],
              rows + lrows)
    if not ok:
        print("Schur product positivity failed", file=sys.stderr)
    return EXIT_OK if ok and rep.positive and rep.convergent else EXIT_FAIL


COMMANDS = {"qei": run_qei, "pointwise": run_pointwise, "scan": run_scan, "schur": run_schur}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qeilab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI configuration file (or bundled config name)")
        s.add_argument("--out", default=None, help="output directory (default: [output] directory)")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        s.add_argument("--refine", type=int, default=1, help="multiply Nt, Nx and N_max by this factor")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = ExperimentConfig.load(args.config).override(args.seed, args.refine)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        code = COMMANDS[args.command](cfg, out)
    except BoundViolation as exc:
        print(f"check failed: {exc}; payload {json.dumps(_clean(exc.payload))}", file=sys.stderr)
        code = EXIT_FAIL
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    files = sorted(p.name for p in out.iterdir() if p.name != "run_manifest.json")
    manifest = RunManifest(cfg.digest(), __version__, args.command, cfg["experiment"]["seed"],
                           {args.command: code == EXIT_OK}, files, started,
                           _dt.datetime.now(_dt.timezone.utc).isoformat())
    (out / "run_manifest.json").write_text(manifest.to_json() + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
