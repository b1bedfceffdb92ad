"""Command line driver.

Subcommands::

    offline    build the coarse spaces and write them to disk
    run        time-step one configuration (fine, gmsfem, coupled-rt0 or pml)
    table      sweep basis counts against a fine reference, write a CSV table
    mesh-info  print mesh statistics
    pml-demo   damped run with an absorbing layer around the domain

Configuration is one JSON document; every key is optional and falls back to
``DEFAULT_CONFIG``.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import compare_to_reference, write_error_table
from .basis import (OfflineSpace, Selection, assemble_offline_space, build_offline_basis, identity_offline_space,
                    load_offline, save_offline, selection_from_counts)
from .fem import assemble_forms, build_spaces
from .linalg import ConvergenceError, NotSPDError
from .medium import (MediumField, SourceConfig, constant_medium, layered_random_medium, load_vector, read_raster,
                     ricker_time, sample_raster)
from .mesh import build_staggered_mesh, format_mesh_summary, mesh_summary
from .pml import PmlConfig, build_pml_system, run_pml
from .solver import (InstabilityError, ReductionError, coupled_rt0_system, fine_system, reduce_system,
                     run_leapfrog, stable_dt, time_grid, write_energy_trace)

__all__ = ["ConfigError", "DEFAULT_CONFIG", "load_config", "resolve_config", "main", "write_vtk",
           "write_pressure_snapshot", "read_pressure_snapshot"]

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "version": SCHEMA_VERSION,
    "mesh": {"n": 8, "r": 3},
    "medium": {"type": "layered", "seed": 7, "layers": 16, "contrast": 10.0},
    "source": {"f0": 20.0, "center": [0.5, 0.5], "delta": "2h"},
    "selection": {"boundary": 4, "interior": 12},
    "time": {"T": 0.2, "safety": 0.9, "dt": None},
    "output": {"snapshot_every": 0, "vtk": False},
    "mode": "gmsfem",
    "pml": {"width": 10, "exponent": 2.0, "reflection": 1e-3, "scale": 1.0},
    "table": {"boundary": [3, 4, 5, 6], "interior": [4, 8, 12, 16]},
}

MODES = ("fine", "gmsfem", "coupled-rt0", "pml")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(base[k], dict) and k not in ("medium", "selection"):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def _positive_int(v, name, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")
    return v


def _positive(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{name} must be a positive number, got {v!r}")
    return float(v)


def resolve_config(raw: dict, seed: int | None = None) -> dict:
    """Merge over the defaults and validate."""
    if raw.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}; expected {SCHEMA_VERSION}")
    cfg = _merge(DEFAULT_CONFIG, raw)
    _positive_int(cfg["mesh"]["n"], "mesh.n")
    _positive_int(cfg["mesh"]["r"], "mesh.r", 0)

    med = cfg["medium"]
    kind = med.get("type")
    if kind == "constant":
        med.setdefault("kappa", 1.0)
        med.setdefault("rho", 1.0)
        _positive(med["kappa"], "medium.kappa")
        _positive(med["rho"], "medium.rho")
    elif kind == "layered":
        for k, v in DEFAULT_CONFIG["medium"].items():
            med.setdefault(k, v)
        if seed is not None:
            med["seed"] = int(seed)
        _positive_int(med["seed"], "medium.seed", 0)
        _positive_int(med["layers"], "medium.layers")
        if _positive(med["contrast"], "medium.contrast") < 1:
            raise ConfigError("medium.contrast must be at least 1")
    elif kind == "raster":
        for key in ("kappa", "rho"):
            p = med.get(key)
            if p is None and key == "rho":
                continue
            if not isinstance(p, str) or not Path(p).is_file():
                raise ConfigError(f"medium.{key}: raster file not found: {p!r}")
    else:
        raise ConfigError(f"medium.type must be constant, layered or raster, got {kind!r}")
    unknown = set(med) - {"type", "kappa", "rho", "seed", "layers", "contrast"}
    if unknown:
        raise ConfigError(f"unknown medium keys: {sorted(unknown)}")

    src = cfg["source"]
    _positive(src["f0"], "source.f0")
    c = src["center"]
    if not (isinstance(c, (list, tuple)) and len(c) == 2 and all(isinstance(x, (int, float)) for x in c)):
        raise ConfigError("source.center must be a pair of numbers")
    if src["delta"] != "2h":
        _positive(src["delta"], "source.delta")

    sel = cfg["selection"]
    if sel == "identity":
        pass
    elif isinstance(sel, dict) and set(sel) == {"boundary", "interior"}:
        _positive_int(sel["boundary"], "selection.boundary")
        _positive_int(sel["interior"], "selection.interior", 0)
    elif isinstance(sel, dict) and set(sel) == {"n_edge", "m_elem"}:
        for k in ("n_edge", "m_elem"):
            if not isinstance(sel[k], list) or any(isinstance(x, bool) or not isinstance(x, int) or x < 0
                                                   for x in sel[k]):
                raise ConfigError(f"selection.{k} must be a list of nonnegative integers")
    else:
        raise ConfigError("selection must be 'identity', {boundary, interior} or {n_edge, m_elem}")

    tm = cfg["time"]
    _positive(tm["T"], "time.T")
    _positive(tm["safety"], "time.safety")
    if tm["dt"] is not None:
        _positive(tm["dt"], "time.dt")
    _positive_int(cfg["output"]["snapshot_every"], "output.snapshot_every", 0)
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    p = cfg["pml"]
    _positive_int(p["width"], "pml.width")
    try:
        PmlConfig(p["width"], float(p["exponent"]), float(p["reflection"]), float(p["scale"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pml: {exc}") from None
    tb = cfg["table"]
    for k in ("boundary", "interior"):
        if not isinstance(tb[k], list):
            raise ConfigError(f"table.{k} must be a list")
        for x in tb[k]:
            _positive_int(x, f"table.{k}[]", 1 if k == "boundary" else 0)
    return cfg


# ---------------------------------------------------------------- building blocks

def _sha(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _file_sha(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class _Setup:
    def __init__(self, cfg: dict, timings: dict):
        t0 = time.perf_counter()
        self.sm = build_staggered_mesh(cfg["mesh"]["n"], cfg["mesh"]["r"])
        f = self.sm.fine
        timings["mesh"] = time.perf_counter() - t0
        self.medium = _medium(cfg["medium"], f)
        self.spaces = build_spaces(f, self.sm.skeleton, self.sm.edge_sets)
        t0 = time.perf_counter()
        self.forms = assemble_forms(f, self.medium, self.spaces)
        timings["assemble"] = time.perf_counter() - t0
        h = 1.0 / (cfg["mesh"]["n"] * 2 ** cfg["mesh"]["r"])
        s = cfg["source"]
        delta = 2.0 * h if s["delta"] == "2h" else float(s["delta"])
        self.source = SourceConfig(float(s["f0"]), delta, tuple(float(x) for x in s["center"]))
        self.mesh_sha = _sha(f.vertices, f.triangles)
        self.medium_sha = _sha(self.medium.kappa, self.medium.rho)


def _medium(m: dict, f) -> MediumField:
    if m["type"] == "constant":
        return constant_medium(f, m["kappa"], m["rho"])
    if m["type"] == "layered":
        return layered_random_medium(f, m["seed"], m["layers"], m["contrast"])
    try:
        rho = read_raster(m["rho"]) if m.get("rho") else None
        return sample_raster(f, read_raster(m["kappa"]), rho)
    except ValueError as exc:
        raise ConfigError(f"medium raster: {exc}") from None


def _selection(cfg: dict, sm) -> Selection | None:
    sel = cfg["selection"]
    if sel == "identity":
        return None
    if "boundary" in sel:
        return selection_from_counts(sm, sel["boundary"], sel["interior"])
    n_edge, m_elem = np.array(sel["n_edge"]), np.array(sel["m_elem"])
    if n_edge.shape != (sm.coarse.n_edges,) or m_elem.shape != (sm.coarse.n_triangles,):
        raise ConfigError(f"selection lists need {sm.coarse.n_edges} edge and "
                          f"{sm.coarse.n_triangles} element entries")
    return Selection(n_edge, m_elem)


def _build_space(cfg, st: _Setup, threads: int, timings: dict):
    sel = _selection(cfg, st.sm)
    if sel is None:
        return identity_offline_space(st.sm, st.spaces), None
    t0 = time.perf_counter()
    ob = build_offline_basis(st.sm, st.spaces, st.forms, st.medium, threads=threads)
    timings["offline_basis"] = time.perf_counter() - t0
    try:
        space = assemble_offline_space(ob, sel)
    except ValueError as exc:
        raise ConfigError(f"selection: {exc}") from None
    return space, ob


def _manifest_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _load_space(path, st: _Setup) -> OfflineSpace:
    mpath = _manifest_path(path)
    if not Path(path).is_file() or not mpath.is_file():
        raise ConfigError(f"offline file or manifest missing: {path}, {mpath}")
    with open(mpath) as fh:
        man = json.load(fh)
    for key, want in (("mesh_sha256", st.mesh_sha), ("medium_sha256", st.medium_sha)):
        if man.get(key) != want:
            raise ConfigError(f"offline file {path} was built for a different {key.split('_')[0]} "
                              f"({key} mismatch)")
    if man.get("sha256") != _file_sha(path):
        raise ConfigError(f"offline file {path} does not match its manifest checksum")
    return load_offline(path, mpath)


def write_pressure_snapshot(path, step: int, t: float, p: np.ndarray) -> None:
    """Element pressures on the fine mesh, one value per line."""
    with open(path, "w") as fh:
        fh.write(f"# step {step} time {t!r} n {len(p)}\n")
        np.savetxt(fh, np.asarray(p, dtype=float), fmt="%.17g")


def read_pressure_snapshot(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 7 or head[0] != "#" or head[1] != "step":
            raise ValueError(f"{path}: bad snapshot header")
        p = np.loadtxt(fh, ndmin=1)
    if len(p) != int(head[6]):
        raise ValueError(f"{path}: expected {head[6]} values, found {len(p)}")
    return int(head[2]), float(head[4]), p


def write_vtk(path, vertices, triangles, cell_data: dict, title: str = "gmsfem-wave") -> None:
    """Legacy ASCII unstructured grid with per-cell scalar fields."""
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(vertices)} double\n")
        xyz = np.column_stack([vertices, np.zeros(len(vertices))])
        np.savetxt(fh, xyz, fmt="%.17g")
        nt = len(triangles)
        fh.write(f"CELLS {nt} {4 * nt}\n")
        np.savetxt(fh, np.column_stack([np.full(nt, 3), triangles]), fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 5), fmt="%d")
        fh.write(f"CELL_DATA {nt}\n")
        for name, values in cell_data.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, np.asarray(values, dtype=float), fmt="%.17g")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands

def cmd_offline(cfg: dict, out: Path, offline_path, threads: int) -> dict:
    timings = {}
    st = _Setup(cfg, timings)
    space, _ = _build_space(cfg, st, threads, timings)
    path = Path(offline_path) if offline_path else out / "offline.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = {"mesh_sha256": st.mesh_sha, "medium_sha256": st.medium_sha, "config": cfg,
             "mesh": mesh_summary(st.sm), "version": __version__}
    man = save_offline(space, path, _manifest_path(path), extra)
    print(f"offline space: dim V_H = {man['dim_V']}, dim Q_H = {man['dim_Q']} "
          f"({man['dim_Q_interior']} element + {man['dim_Q_penalty']} penalty)")
    print(f"wrote {path}")
    return man


def _run_system(cfg, st: _Setup, space):
    mode = cfg["mode"]
    load = load_vector(st.sm.fine, st.source)
    if mode == "fine":
        return fine_system(st.spaces, st.forms, load)
    if mode == "coupled-rt0":
        return coupled_rt0_system(st.spaces, st.forms, load)
    return reduce_system(space, st.forms, load)


def cmd_run(cfg: dict, out: Path, offline_path, threads: int, mode_override: str | None = None) -> dict:
    if mode_override:
        cfg = dict(cfg, mode=mode_override)
    timings = {}
    st = _Setup(cfg, timings)
    mode = cfg["mode"]
    space = None
    if mode in ("gmsfem", "pml"):
        if offline_path:
            space = _load_space(offline_path, st)
        else:
            space, _ = _build_space(cfg, st, threads, timings)
    out.mkdir(parents=True, exist_ok=True)
    tm = cfg["time"]
    every = cfg["output"]["snapshot_every"]
    t0 = time.perf_counter()
    if mode == "pml":
        p = cfg["pml"]
        pcfg = PmlConfig(p["width"], float(p["exponent"]), float(p["reflection"]), float(p["scale"]))
        ps = build_pml_system(st.sm, st.medium, st.forms, space, pcfg, st.source)
        sys_ = ps.plain
    else:
        sys_ = _run_system(cfg, st, space)
    dt = tm["dt"] if tm["dt"] is not None else stable_dt(sys_, tm["safety"])
    dt, n = time_grid(tm["T"], dt)
    timings["setup_online"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if mode == "pml":
        hist = run_pml(ps, st.source, tm["T"], dt, snapshot_every=every)
    else:
        hist = run_leapfrog(sys_, dt, n, lambda t: ricker_time(t, st.source.f0), snapshot_every=every)
    timings["time_stepping"] = time.perf_counter() - t0

    nt = st.sm.fine.n_triangles

    def element_pressure(p):
        if mode in ("fine", "coupled-rt0"):
            return p[:nt]
        return space.Psi_I @ p[: space.Psi_I.shape[1]]

    files = {}
    energy_path = out / "energy.txt"
    write_energy_trace(hist, energy_path)
    files["energy.txt"] = _file_sha(energy_path)
    f = st.sm.fine
    snaps = list(hist.snapshots)
    if not snaps or snaps[-1][0] != hist.final.step:
        snaps.append((hist.final.step, hist.final.t, hist.final.v, hist.final.p_sync()))
    for step, t, _, p in snaps:
        name = f"pressure_{step:06d}.txt"
        pe = element_pressure(p)
        write_pressure_snapshot(out / name, step, t, pe)
        files[name] = _file_sha(out / name)
        if cfg["output"]["vtk"]:
            vname = f"pressure_{step:06d}.vtk"
            write_vtk(out / vname, f.vertices, f.triangles, {"pressure": pe})
            files[vname] = _file_sha(out / vname)
    np.savez(out / "final_state.npz", v=hist.final.v, p=hist.final.p, p_prev=hist.final.p_prev,
             step=hist.final.step, dt=hist.final.dt)
    e = hist.energy
    manifest = {
        "version": __version__,
        "command": "run",
        "config": cfg,
        "mode": mode,
        "mesh": mesh_summary(st.sm),
        "mesh_sha256": st.mesh_sha,
        "medium_sha256": st.medium_sha,
        "dim_V": int(sys_.n_velocity),
        "dim_Q": int(sys_.n_pressure),
        "dt": hist.dt,
        "n_steps": hist.n_steps,
        "energy_final": float(e[-1, 4]),
        "energy_max": float(e[:, 4].max()),
        "files": files,
        "timings": timings,
    }
    if space is not None and space.selection is not None:
        lam = [float(x) for v in space.edge_eigenvalues for x in v]
        mu = [float(x) for v in space.element_eigenvalues for x in v]
        manifest["edge_eigenvalue_range"] = [min(lam), max(lam)] if lam else None
        manifest["element_eigenvalue_range"] = [min(mu), max(mu)] if mu else None
    if mode == "pml":
        manifest["interior_energy_peak"] = float(hist.physical.max())
        manifest["interior_energy_final"] = float(hist.physical[-1])
    _write_json(out / "manifest.json", manifest)
    print(f"{mode}: {hist.n_steps} steps of dt = {hist.dt:.6g}, final energy {e[-1, 4]:.6e}")
    print(f"wrote {out}")
    return manifest


def cmd_table(cfg: dict, out: Path, threads: int) -> list:
    out.mkdir(parents=True, exist_ok=True)
    bs, ms = cfg["table"]["boundary"], cfg["table"]["interior"]
    path = out / "table.csv"
    if not bs or not ms:
        write_error_table([], path)
        print(f"empty sweep; wrote {path}")
        return []
    timings = {}
    st = _Setup(cfg, timings)
    load = load_vector(st.sm.fine, st.source)
    tm = cfg["time"]
    wavelet = lambda t: ricker_time(t, st.source.f0)  # noqa: E731
    fsys = fine_system(st.spaces, st.forms, load)
    dt = tm["dt"] if tm["dt"] is not None else stable_dt(fsys, tm["safety"])
    dt, n = time_grid(tm["T"], dt)
    t0 = time.perf_counter()
    ref = run_leapfrog(fsys, dt, n, wavelet)
    timings["reference"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ob = build_offline_basis(st.sm, st.spaces, st.forms, st.medium, threads=threads)
    timings["offline_basis"] = time.perf_counter() - t0
    reports = []
    for b in bs:
        for m in ms:
            try:
                space = assemble_offline_space(ob, selection_from_counts(st.sm, b, m))
            except ValueError as exc:
                raise ConfigError(f"table entry ({b}, {m}): {exc}") from None
            h = run_leapfrog(reduce_system(space, st.forms, load), dt, n, wavelet)
            r = compare_to_reference(h, ref, space, st.forms, counts=(b, m))
            reports.append(r)
            print(f"boundary {b:2d} interior {m:2d}: rel_err_p = {100 * r.rel_err_p:7.3f}%  "
                  f"rel_err_v = {100 * r.rel_err_v:7.3f}%")
    write_error_table(reports, path)
    _write_json(out / "manifest.json", {"version": __version__, "command": "table", "config": cfg,
                                        "mesh_sha256": st.mesh_sha, "medium_sha256": st.medium_sha,
                                        "dt": dt, "n_steps": n, "files": {"table.csv": _file_sha(path)},
                                        "timings": timings})
    print(f"wrote {path}")
    return reports


def cmd_mesh_info(cfg: dict) -> dict:
    sm = build_staggered_mesh(cfg["mesh"]["n"], cfg["mesh"]["r"])
    summary = mesh_summary(sm)
    sys.stdout.write(format_mesh_summary(summary))
    return summary


def cmd_pml_demo(cfg: dict, out: Path, offline_path, threads: int) -> dict:
    cfg = copy.deepcopy(cfg)
    if cfg["output"]["snapshot_every"] == 0:
        cfg["output"]["snapshot_every"] = 20
    return cmd_run(cfg, out, offline_path, threads, mode_override="pml")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmsfem-wave", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("offline", "build and store the coarse spaces"),
                           ("run", "run one configuration"),
                           ("table", "basis-count convergence table"),
                           ("mesh-info", "print mesh statistics"),
                           ("pml-demo", "run with an absorbing layer")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", metavar="PATH", help="JSON configuration")
        p.add_argument("--seed", type=int, help="override the medium seed")
        if name != "mesh-info":
            p.add_argument("--out", metavar="DIR", default="out", help="output directory")
            p.add_argument("--threads", type=int, default=1, help="worker threads for the offline stage")
        if name in ("offline", "run", "pml-demo"):
            p.add_argument("--offline", metavar="PATH", help="offline space file")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(load_config(args.config), args.seed)
        threads = getattr(args, "threads", 1)
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(getattr(args, "out", "out"))
        if args.command == "offline":
            cmd_offline(cfg, out, args.offline, threads)
        elif args.command == "run":
            cmd_run(cfg, out, args.offline, threads)
        elif args.command == "table":
            cmd_table(cfg, out, threads)
        elif args.command == "mesh-info":
            cmd_mesh_info(cfg)
        elif args.command == "pml-demo":
            cmd_pml_demo(cfg, out, args.offline, threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, ConvergenceError, NotSPDError, ReductionError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
