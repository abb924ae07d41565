"""Command-line front end: configuration, runs, comparison, sweeps.

Config files are flat ``key = value`` text with '#' comments.  Keys carry
dotted section prefixes (problem.*, time.*, solver.*, exec.*, output.*);
the bare last component is accepted where unambiguous (``nt``, ``levels``,
``m``, ...).  Every run writes

* residual_history.csv  (iter, residual_norm, wall_seconds; one row/cycle)
* solution.csv          (t, i, a_probe0, a_probe1, a_probe2)
* summary.txt           (key=value lines incl. the effective config echo)
* fields.bin            (optional full space-time dump, one record per
                         time point in the parallel message layout)

Exit codes: 0 converged, 2 not converged, 1 configuration/solver error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mgrit, runtime
from .problem import CableProblem, build_problem
from .stepper import NewtonConfig, TimeStepError, time_stepping

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "run_baseline",
           "compare", "sweep", "read_field_dump", "main"]


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "problem.nodes": (int, 65),
    "problem.r_wire": (float, 1.0e-3),
    "problem.r_ins": (float, 2.0e-3),
    "problem.r_out": (float, 3.0e-3),
    "problem.sigma_shield": (float, 1.0e7),
    "problem.nu_table": (str, "default"),
    "problem.v0": (float, 0.25),
    "problem.period": (float, 0.02),
    "problem.teeth": (int, 200),
    "time.t_end": (float, 0.04),
    "time.nt": (int, None),
    "solver.cycle": (str, "V"),
    "solver.levels": (int, 3),
    "solver.m": (int, 8),
    "solver.tol": (float, 1.0e-6),
    "solver.max_iter": (int, 100),
    "solver.newton_atol": (float, 1.0e-12),
    "solver.newton_rtol": (float, 1.0e-10),
    "solver.newton_max_iter": (int, 100),
    "solver.damping": (float, 1.0),
    "exec.workers": (int, 1),
    "exec.deterministic": (bool, True),
    "output.dir": (str, "out"),
    "output.dump_fields": (bool, False),
}

_ALIASES = {}
for _key in _SCHEMA:
    _short = _key.split(".", 1)[1]
    _ALIASES[_short] = None if _short in _ALIASES else _key
_ALIASES = {k: v for k, v in _ALIASES.items() if v is not None}


@dataclass
class RunConfig:
    """Validated run configuration with defaults applied."""

    values: dict
    path: str = "<memory>"
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def replaced(self, **kw) -> "RunConfig":
        vals = dict(self.values)
        for short, v in kw.items():
            vals[_ALIASES[short]] = v
        cfg = RunConfig(vals, self.path)
        _validate(cfg.values, self.path)
        return cfg


def _parse_value(key: str, text: str, lineno, path) -> object:
    typ = _SCHEMA[key][0]
    try:
        if typ is bool:
            if text.lower() in ("true", "yes", "on", "1"):
                return True
            if text.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError as exc:
        raise ConfigError(
            f"{path}:{lineno}: key '{key}' expects {typ.__name__}, got {text!r}"
        ) from exc


def _validate(values: dict, path: str) -> None:
    def fail(key, msg):
        raise ConfigError(f"{path}: key '{key}': {msg}")

    if values["time.nt"] is None:
        fail("time.nt", "is required")
    if values["time.nt"] < 1:
        fail("time.nt", "must be positive")
    if not values["time.t_end"] > 0.0:
        fail("time.t_end", "must be positive")
    if values["solver.cycle"] not in ("V", "F"):
        fail("solver.cycle", "must be 'V' or 'F'")
    if values["solver.levels"] < 1:
        fail("solver.levels", "must be at least 1")
    levels, m, nt = values["solver.levels"], values["solver.m"], values["time.nt"]
    if levels > 1:
        if m < 2:
            fail("solver.m", "must be at least 2")
        if nt % m ** (levels - 1) != 0:
            fail("time.nt", f"{nt} is not divisible by m^(levels-1) = {m ** (levels - 1)}")
    if values["exec.workers"] < 1:
        fail("exec.workers", "must be at least 1")
    if not 0.0 < values["solver.tol"]:
        fail("solver.tol", "must be positive")
    if values["solver.max_iter"] < 0:
        fail("solver.max_iter", "must be non-negative")
    if not (0.0 < values["problem.r_wire"] < values["problem.r_ins"] < values["problem.r_out"]):
        fail("problem.r_wire", "need 0 < r_wire < r_ins < r_out")
    table = values["problem.nu_table"]
    if table != "default" and not Path(table).is_file():
        fail("problem.nu_table", f"file not found: {table}")


def parse_config(path) -> RunConfig:
    """Read and validate a config file; unknown keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {k: default for k, (_, default) in _SCHEMA.items()}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        canonical = key if key in _SCHEMA else _ALIASES.get(key)
        if canonical is None:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[canonical] = _parse_value(canonical, text, lineno, path)
    _validate(values, str(path))
    return RunConfig(values, str(path))


# --------------------------------------------------------------------------
# run orchestration
# --------------------------------------------------------------------------

def _build(cfg: RunConfig) -> tuple:
    problem = build_problem(
        n_nodes=cfg["problem.nodes"],
        r_wire=cfg["problem.r_wire"],
        r_ins=cfg["problem.r_ins"],
        r_out=cfg["problem.r_out"],
        sigma_shield=cfg["problem.sigma_shield"],
        shield_reluctivity=None if cfg["problem.nu_table"] == "default"
        else cfg["problem.nu_table"],
        amplitude=cfg["problem.v0"],
        period=cfg["problem.period"],
        teeth=cfg["problem.teeth"],
    )
    newton = NewtonConfig(atol=cfg["solver.newton_atol"],
                          rtol=cfg["solver.newton_rtol"],
                          max_iter=cfg["solver.newton_max_iter"],
                          damping=cfg["solver.damping"])
    return problem, newton


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_solution(outdir: Path, problem: CableProblem, times: np.ndarray,
                    U: np.ndarray) -> None:
    p0, p1, p2 = problem.probe_indices()
    with open(outdir / "solution.csv", "w", newline="\n") as fh:
        fh.write("t,i,a_probe0,a_probe1,a_probe2\n")
        for j, t in enumerate(times):
            fh.write(",".join(_fmt(v) for v in
                              (t, U[j, -1], U[j, p0], U[j, p1], U[j, p2])) + "\n")


def _write_history(outdir: Path, history, seconds) -> None:
    with open(outdir / "residual_history.csv", "w", newline="\n") as fh:
        fh.write("iter,residual_norm,wall_seconds\n")
        elapsed = 0.0
        for k, (res, sec) in enumerate(zip(history, seconds), start=1):
            elapsed += sec
            fh.write(f"{k},{_fmt(res)},{_fmt(elapsed)}\n")


def _write_fields(outdir: Path, U: np.ndarray) -> None:
    with open(outdir / "fields.bin", "wb") as fh:
        for j in range(U.shape[0]):
            a_full = np.concatenate([U[j, :-1], [0.0]])
            fh.write(runtime.pack_state(0, j, a_full, U[j, -1]))


def read_field_dump(path, n_nodes: int):
    """Read fields.bin back: (time indices, potentials (n, nodes), currents)."""
    blob = Path(path).read_bytes()
    rec = 8 + 8 * (n_nodes + 1)
    if len(blob) % rec != 0:
        raise ValueError(f"{path}: size {len(blob)} is not a multiple of record size {rec}")
    idx, pots, curs = [], [], []
    for off in range(0, len(blob), rec):
        _, j, a, i = runtime.unpack_state(blob[off:off + rec])
        idx.append(j)
        pots.append(a)
        curs.append(i)
    return np.array(idx), np.array(pots), np.array(curs)


def _write_summary(outdir: Path, cfg: RunConfig, fields: dict) -> None:
    with open(outdir / "summary.txt", "w", newline="\n") as fh:
        for k, v in fields.items():
            fh.write(f"{k}={v}\n")
        for k in sorted(cfg.values):
            fh.write(f"config.{k}={cfg.values[k]}\n")


def run(cfg: RunConfig, outdir=None, baseline: bool = False) -> int:
    """Execute one run; returns the process exit code."""
    outdir = Path(outdir if outdir is not None else cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    problem, newton = _build(cfg)
    nt, t_end = cfg["time.nt"], cfg["time.t_end"]
    t0 = time.perf_counter()
    try:
        if baseline or cfg["solver.levels"] == 1:
            times = np.linspace(0.0, t_end, nt + 1)
            states = time_stepping(problem, problem.zero_state(), times, newton)
            U = np.stack([s.as_vector() for s in states])
            hier = mgrit.build_hierarchy(problem, nt, 2, 1, 0.0, t_end, newton)
            stf = mgrit.build_space_time_rhs(hier)
            stf.U[:] = U
            final = mgrit.residual_norm(hier, stf)
            wall = time.perf_counter() - t0
            _write_solution(outdir, problem, times, U)
            _write_history(outdir, [], [])
            if cfg["output.dump_fields"]:
                _write_fields(outdir, U)
            _write_summary(outdir, cfg, {
                "mode": "baseline", "converged": "true", "iterations": 0,
                "final_residual": _fmt(final), "total_wall_seconds": _fmt(wall),
                "workers": 1, "monotone": "true",
            })
            return 0

        hier = mgrit.build_hierarchy(problem, nt, cfg["solver.m"],
                                     cfg["solver.levels"], 0.0, t_end, newton)
        g = mgrit.build_space_time_rhs(hier)
        workers = cfg["exec.workers"]
        if workers == 1:
            result = mgrit.solve(hier, g, cfg["solver.cycle"],
                                 cfg["solver.tol"], cfg["solver.max_iter"])
        else:
            result, _ = runtime.run_parallel(hier, g, cfg["solver.cycle"],
                                             cfg["solver.tol"], cfg["solver.max_iter"],
                                             workers)
        wall = time.perf_counter() - t0
    except (TimeStepError, runtime.WorkerFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_solution(outdir, problem, hier.finest.times, result.function.U)
    _write_history(outdir, result.residual_history, result.cycle_seconds)
    if cfg["output.dump_fields"]:
        _write_fields(outdir, result.function.U)
    _write_summary(outdir, cfg, {
        "mode": "mgrit", "converged": "true" if result.converged else "false",
        "iterations": result.iterations,
        "initial_residual": _fmt(result.initial_residual),
        "final_residual": _fmt(result.final_residual),
        "total_wall_seconds": _fmt(wall),
        "workers": workers, "monotone": "true" if result.monotone else "false",
    })
    if not result.converged:
        print(f"not converged after {result.iterations} cycles "
              f"(residual {result.final_residual:.3e}, initial "
              f"{result.initial_residual:.3e})", file=sys.stderr)
        return 2
    if not result.monotone:
        print("note: residual history is not monotone; run flagged for inspection",
              file=sys.stderr)
    return 0


def run_baseline(cfg: RunConfig, outdir=None) -> int:
    return run(cfg, outdir, baseline=True)


def _read_solution(path: Path) -> np.ndarray:
    data = np.genfromtxt(path / "solution.csv", delimiter=",", names=True)
    return np.stack([data[c] for c in ("t", "i", "a_probe0", "a_probe1", "a_probe2")],
                    axis=1)


def compare(dir_a, dir_b, tol: float) -> int:
    """Compare two runs' solution.csv files; exit 0 iff relative diffs <= tol.

    Relative differences are per column, against the second run's maximum
    magnitude (the reference).
    """
    a = _read_solution(Path(dir_a))
    b = _read_solution(Path(dir_b))
    if a.shape != b.shape or not np.array_equal(a[:, 0], b[:, 0]):
        print("error: time grids differ between runs", file=sys.stderr)
        return 1
    ok = True
    print("column      max_abs_diff   max_rel_diff")
    for col, name in ((1, "i"), (2, "a_probe0"), (3, "a_probe1"), (4, "a_probe2")):
        diff = np.abs(a[:, col] - b[:, col]).max()
        ref = np.abs(b[:, col]).max()
        rel = diff / ref if ref > 0.0 else (0.0 if diff == 0.0 else np.inf)
        ok &= rel <= tol
        print(f"{name:<10}  {diff:13.6e}  {rel:13.6e}")
    return 0 if ok else 2


def sweep(cfg: RunConfig, levels_list, m_list, cycles, outdir=None) -> int:
    """Run a grid of (levels, m) x cycle variants and tabulate iterations."""
    if len(m_list) == 1:
        m_list = m_list * len(levels_list)
    if len(m_list) != len(levels_list):
        print("error: --m must have one entry or match --levels", file=sys.stderr)
        return 1
    outdir = Path(outdir if outdir is not None else cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cyc in cycles:
        for lv, m in zip(levels_list, m_list):
            sub = cfg.replaced(cycle=cyc, levels=lv, m=m)
            problem, newton = _build(sub)
            hier = mgrit.build_hierarchy(problem, sub["time.nt"], m, lv,
                                         0.0, sub["time.t_end"], newton)
            g = mgrit.build_space_time_rhs(hier)
            t0 = time.perf_counter()
            res = mgrit.solve(hier, g, cyc, sub["solver.tol"], sub["solver.max_iter"])
            rows.append((cyc, lv, m, res.iterations, res.converged,
                         res.final_residual, time.perf_counter() - t0))
    header = "cycle  " + "  ".join(f"L={lv}(m={m})" for lv, m in zip(levels_list, m_list))
    print(header)
    for cyc in cycles:
        cells = [r for r in rows if r[0] == cyc]
        line = f"{cyc:<5}  " + "  ".join(
            f"{r[3] if r[4] else 'n/c':>9}" for r in cells)
        print(line)
    with open(outdir / "sweep.csv", "w", newline="\n") as fh:
        fh.write("cycle,levels,m,iterations,converged,final_residual,wall_seconds\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{str(r[4]).lower()},"
                     f"{_fmt(r[5])},{_fmt(r[6])}\n")
    return 0 if all(r[4] for r in rows) else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="coaxmgrit",
        description="MGRIT solver for the voltage-driven eddy-current cable model")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the MGRIT solver")
    p_solve.add_argument("config")
    p_solve.add_argument("--output", default=None)

    p_base = sub.add_parser("baseline", help="run sequential time stepping")
    p_base.add_argument("config")
    p_base.add_argument("--output", default=None)

    p_cmp = sub.add_parser("compare", help="compare two run directories")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--tol", type=float, required=True)

    p_sweep = sub.add_parser("sweep", help="iteration-count table over variants")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--levels", default="3,4,5")
    p_sweep.add_argument("--m", default="8")
    p_sweep.add_argument("--cycles", default="V,F")
    p_sweep.add_argument("--output", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "compare":
            return compare(args.dir_a, args.dir_b, args.tol)
        cfg = parse_config(args.config)
        if args.command == "solve":
            return run(cfg, args.output)
        if args.command == "baseline":
            return run_baseline(cfg, args.output)
        levels = [int(x) for x in args.levels.split(",") if x]
        ms = [int(x) for x in args.m.split(",") if x]
        cycles = [x.strip().upper() for x in args.cycles.split(",") if x]
        return sweep(cfg, levels, ms, cycles, args.output)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
