"""Experiment runner.

Usage: mhd-blockprec <converge|cavity|sweep|spectrum> --config FILE
                     [--out DIR] [--long]

Config files are flat key = value text with [section] headers; '#'
starts a comment.  Recognized keys (defaults in parentheses):

[experiment]  kind (required: converge|cavity|sweep|spectrum)
              n (32)          mesh subdivisions
              k (0.01)        time step
              t_end (0.2)
              scheme (backward_euler | bdf2)
              max_steps ()    optional per-run step cap
[physics]     Re (1)  Rm (1)  s (1)
[precond]     family (tri_exact)  b_block_mode (mass_cholesky)
[krylov]      method (gmres)  rel_tol (1e-8)  max_iter (500)
              restart (200)   deflate_pressure (true)

Outputs are UTF-8 CSV files in the output directory.  Exit code 0 only
if the run completes and its built-in sanity assertions pass.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import experiments as xp
from .krylov import KrylovConfig
from .precond import PrecondSpec
from .system import PhysParams, SolverConfig

_SCHEMA = {
    "experiment": {"kind": str, "n": int, "k": float, "t_end": float,
                   "scheme": str, "max_steps": int},
    "physics": {"Re": float, "Rm": float, "s": float},
    "precond": {"family": str, "b_block_mode": str},
    "krylov": {"method": str, "rel_tol": float, "max_iter": int,
               "restart": int, "deflate_pressure": bool},
}


@dataclass
class ExperimentConfig:
    kind: str = ""
    n: int = 32
    k: float = 0.01
    t_end: float = 0.2
    scheme: str = "backward_euler"
    max_steps: int | None = None
    Re: float = 1.0
    Rm: float = 1.0
    s: float = 1.0
    family: str = "tri_exact"
    b_block_mode: str = "mass_cholesky"
    method: str = "gmres"
    rel_tol: float = 1e-8
    max_iter: int = 500
    restart: int = 200
    deflate_pressure: bool = True

    def solver(self) -> SolverConfig:
        return SolverConfig(
            PrecondSpec(family=self.family, b_block_mode=self.b_block_mode),
            KrylovConfig(method=self.method, rel_tol=self.rel_tol,
                         max_iter=self.max_iter, restart=self.restart,
                         deflate_pressure=self.deflate_pressure))


_SECTION_OF = {k: sec for sec, keys in _SCHEMA.items() for k in keys}


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if section is None:
            raise ValueError(f"line {lineno}: key outside any section")
        if key not in _SCHEMA[section]:
            raise ValueError(f"line {lineno}: unknown key {key!r} in [{section}]")
        typ = _SCHEMA[section][key]
        if typ is bool:
            if val.lower() not in ("true", "false"):
                raise ValueError(f"line {lineno}: boolean expected for {key}")
            parsed = val.lower() == "true"
        else:
            parsed = typ(val)
        setattr(cfg, key, parsed)
        seen.add((section, key))
    if not cfg.kind:
        raise ValueError("missing required key: [experiment] kind")
    if cfg.kind not in ("converge", "cavity", "sweep", "spectrum"):
        raise ValueError(f"unknown experiment kind {cfg.kind!r}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, keys in _SCHEMA.items():
        lines.append(f"[{sec}]")
        for key in keys:
            val = getattr(cfg, key)
            if val is None:
                continue
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _run_converge(cfg: ExperimentConfig, out: Path, long_mode: bool) -> int:
    solver = xp.default_solver(method=cfg.method, family=cfg.family,
                               rel_tol=min(cfg.rel_tol, 1e-10))
    rows_s, slopes_s = xp.spatial_study(solver=solver)
    rows_t, slopes_t = xp.temporal_study(solver=solver)
    _write_csv(out / "converge_spatial.csv", rows_s)
    _write_csv(out / "converge_temporal.csv", rows_t)
    _write_csv(out / "converge_slopes.csv",
               [{"sweep": "spatial", **slopes_s},
                {"sweep": "temporal_bdf2", **{k: v for k, v in slopes_t.items()}}])
    ok = (all(slopes_s[k] >= 0.85 for k in ("B_l2", "E_l2", "p_l2"))
          and slopes_t["combined"] >= 1.8)
    print(f"converge: spatial slopes {slopes_s}, temporal {slopes_t}")
    return 0 if ok else 1


def _run_cavity(cfg: ExperimentConfig, out: Path, long_mode: bool) -> int:
    rows = []
    ok = True
    for Re, Rm in ((1, 1), (1, 400), (400, 1), (400, 400)):
        res = xp.cavity_run(cfg.n, cfg.k, Re, Rm, cfg.solver(), s=cfg.s,
                            t_end=cfg.t_end, max_steps=cfg.max_steps,
                            track_div=True)
        rows.append({"Re": Re, "Rm": Rm, "n": cfg.n, "k": cfg.k,
                     "mean_iters": res.mean_krylov, "max_iters": res.max_krylov,
                     "min_k0": res.min_k0, "max_div": res.max_div,
                     "max_div_krylov": res.max_div_krylov})
        ok = ok and res.max_div <= 1e-10
        steps = [{"step": r.step, "t": r.t, "nl_iters": r.nl_iters,
                  "krylov_iters": " ".join(map(str, r.krylov_iters)),
                  "div_inf": r.div_inf, "k0": r.k0} for r in res.records]
        _write_csv(out / f"cavity_steps_Re{Re}_Rm{Rm}.csv", steps)
    _write_csv(out / "cavity_summary.csv", rows)
    for r in rows:
        print(f"cavity Re={r['Re']} Rm={r['Rm']}: mean iters "
              f"{r['mean_iters']:.1f}, min k0 {r['min_k0']:.3g}, "
              f"max div {r['max_div']:.2e}")
    return 0 if ok else 1


def _run_sweep(cfg: ExperimentConfig, out: Path, long_mode: bool) -> int:
    ns = (32, 64, 128) if long_mode else (32, 64)
    tables = xp.sweep_tables(families=(cfg.family,), method=cfg.method,
                             ns=ns, rel_tol=cfg.rel_tol,
                             max_steps=cfg.max_steps or 10)
    rows = []
    for (family, Re, Rm), cells in tables.items():
        for (k, n), v in cells.items():
            rows.append({"family": family, "Re": Re, "Rm": Rm, "k": k, "n": n,
                         "mean_iters": v["mean"], "max_iters": v["max"]})
    _write_csv(out / "sweep.csv", rows)
    print(f"sweep: {len(rows)} cells written")
    return 0


def _run_spectrum(cfg: ExperimentConfig, out: Path, long_mode: bool) -> int:
    if cfg.n > 8:
        raise ValueError("spectrum runs are limited to n <= 8")
    rows = []
    for n in (2, 4):
        for k in (0.02, 0.01, 0.005):
            rows.append(xp.spectrum_point(n, k, Re=cfg.Re, Rm=cfg.Rm, s=cfg.s))
    _write_csv(out / "spectrum.csv", rows)
    ok = all(r["gamma"] > 0 for r in rows) and all(
        np.isnan(r["rho"]) or r["rho"] < 0.289 for r in rows)
    print(f"spectrum: {len(rows)} points; gamma > 0: {ok}")
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mhd-blockprec", description=__doc__)
    ap.add_argument("kind", choices=["converge", "cavity", "sweep", "spectrum"])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default="out")
    ap.add_argument("--long", action="store_true",
                    help="include the n=128 sweep column")
    args = ap.parse_args(argv)
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    if cfg.kind != args.kind:
        raise SystemExit(f"config kind {cfg.kind!r} does not match "
                         f"subcommand {args.kind!r}")
    out = Path(args.out)
    runner = {"converge": _run_converge, "cavity": _run_cavity,
              "sweep": _run_sweep, "spectrum": _run_spectrum}[cfg.kind]
    return runner(cfg, out, args.long)


if __name__ == "__main__":
    sys.exit(main())
