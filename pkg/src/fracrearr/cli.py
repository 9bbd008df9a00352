"""Batch front end: INI configuration, command dispatch and result files.

Usage::

    fracrearr COMMAND [--config run.ini] [--set section.key=value ...] [shortcut flags]

Commands are ``dirichlet``, ``rearrange``, ``obstacle``, ``verify`` and
``sweep``. Exit status is 0 on success, 1 when a solver does not converge or
a verification check fails, and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dirichlet import ConvergenceError, phi, solve
from .grid import Domain, Field, GridError, build_grid, read_field_csv, write_field_csv
from .kernel import KernelParams, ParameterError, getoor_reference
from .obstacle import (ObstacleOptions, equivalence_check, masked_max, minimize_J,
                       residual_band, residual_nonlinear)
from .operator import SELF_CELL_MODES, OperatorSizeError, assemble, dump_matrix, load_matrix
from .rearrangement import (FW_VARIANTS, FWOptions, PGOptions, RearrangementClass,
                            RearrangementSolution, extract_alpha, solve_frank_wolfe,
                            solve_projected_gradient, verify_structure)
from .slimit import DEFAULT_S_CAP, s_sweep

log = logging.getLogger(__name__)

COMMANDS = ("dirichlet", "rearrange", "obstacle", "verify", "sweep")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> list:
    return [float(t) for t in text.replace(",", " ").split()]


# section -> key -> (parser, default); None marks a value without default
SCHEMA = {
    "domain": {"kind": (str, "interval"), "a": (float, -1.0), "b": (float, 1.0),
               "x0": (float, -1.0), "x1": (float, 1.0), "y0": (float, -1.0), "y1": (float, 1.0),
               "cx": (float, 0.0), "cy": (float, 0.0), "radius": (float, 1.0)},
    "grid": {"n": (int, None)},
    "kernel": {"s": (float, None), "s_list": (_float_list, None), "normalized": (_bool, True),
               "self_cell": (str, "taylor"), "max_nodes": (int, 4096)},
    "problem": {"f": (float, 1.0), "beta": (float, None), "beta_fraction": (float, None),
                "alpha": (float, None)},
    "solver": {"method": (str, "frank_wolfe"), "variant": (str, "face"), "gap_tol": (float, 1e-6),
               "max_iter": (int, 5000), "tol": (float, 1e-10), "linear_solver": (str, "cg"),
               "pg_tol": (float, 1e-10), "pg_max_iter": (int, 20000),
               "obstacle_tol": (float, 1e-13), "obstacle_max_iter": (int, 200000),
               "accelerate": (_bool, True), "band": (float, None), "seed": (int, 0),
               "workers": (int, 1), "s_cap": (float, DEFAULT_S_CAP), "eps": (float, 1e-3),
               "eta_pos": (float, 1e-8), "residual_tol": (float, 1e-3),
               "equivalence_rtol": (float, 1e-3), "j_rtol": (float, 1e-8)},
    "output": {"dir": (str, "out"), "input": (str, None), "dump_matrix": (_bool, False)},
}

REQUIRED = {
    "dirichlet": [("grid", "n"), ("kernel", "s")],
    "rearrange": [("grid", "n"), ("kernel", "s")],
    "obstacle": [("grid", "n"), ("kernel", "s"), ("problem", "alpha")],
    "verify": [("output", "input")],
    "sweep": [("grid", "n"), ("kernel", "s_list")],
}

SHORTCUTS = {"N": ("grid", "n"), "s": ("kernel", "s"), "s_list": ("kernel", "s_list"),
             "beta": ("problem", "beta"), "alpha": ("problem", "alpha"), "out": ("output", "dir"),
             "input": ("output", "input"), "workers": ("solver", "workers"),
             "domain": ("domain", "kind")}


class ConfigError(ValueError):
    """Invalid or incomplete configuration (exit status 2)."""


@dataclass
class RunConfig:
    command: str
    values: dict

    def get(self, section: str, key: str):
        return self.values[section][key]

    def domain(self) -> Domain:
        d = self.values["domain"]
        if d["kind"] == "interval":
            return Domain.interval(d["a"], d["b"])
        if d["kind"] == "rectangle":
            return Domain.rectangle(d["x0"], d["x1"], d["y0"], d["y1"])
        if d["kind"] == "disk":
            return Domain.disk(d["cx"], d["cy"], d["radius"])
        raise ConfigError(f"domain.kind must be interval, rectangle or disk, got {d['kind']!r}")

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, val in keys.items():
                if val is None:
                    continue
                if isinstance(val, list):
                    text = ", ".join(repr(v) for v in val)
                elif isinstance(val, float):
                    text = repr(val)
                else:
                    text = str(val).lower() if isinstance(val, bool) else str(val)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)


def _read_raw(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def load_config(command: str, raw: dict) -> RunConfig:
    """Validate raw ``{section: {key: text}}`` data against the schema and fill defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec, keys in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, text in keys.items():
            key = key.lower()
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            conv = SCHEMA[sec][key][0]
            try:
                values[sec][key] = conv(text) if isinstance(text, str) else text
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {exc}") from exc
    for sec, key in REQUIRED[command]:
        if values[sec][key] is None:
            raise ConfigError(f"missing required key {sec}.{key} for command {command!r}")
    p = values["problem"]
    if command in ("rearrange", "sweep") and p["beta"] is None and p["beta_fraction"] is None:
        raise ConfigError(f"missing required key problem.beta (or problem.beta_fraction) for command {command!r}")
    if command == "sweep" and not values["kernel"]["normalized"]:
        raise ConfigError("kernel.normalized must be true for the sweep command")
    if values["kernel"]["self_cell"] not in SELF_CELL_MODES:
        raise ConfigError(f"kernel.self_cell must be one of {SELF_CELL_MODES}")
    if values["solver"]["method"] not in ("frank_wolfe", "projected_gradient"):
        raise ConfigError("solver.method must be frank_wolfe or projected_gradient")
    if values["solver"]["variant"] not in FW_VARIANTS:
        raise ConfigError(f"solver.variant must be one of {FW_VARIANTS}")
    return RunConfig(command, values)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    return v


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps({k: _json_value(v) for k, v in data.items()}, indent=2, sort_keys=True) + "\n")


class _Run:
    def __init__(self, cfg: RunConfig, out=None):
        self.cfg = cfg
        self.out = out
        self.dir = Path(cfg.get("output", "dir"))

    def say(self, msg: str) -> None:
        print(msg, file=self.out)

    def base_summary(self) -> dict:
        c = self.cfg
        return {"command": c.command, "domain": c.get("domain", "kind"),
                "domain_bounds": list(self.grid.domain.bounds), "n_cells": c.get("grid", "n"),
                "dimension": self.grid.n, "interior_nodes": self.grid.interior_count,
                "h": self.grid.h, "normalized": c.get("kernel", "normalized"),
                "self_cell": c.get("kernel", "self_cell"), "seed": c.get("solver", "seed")}

    def setup(self, s: float | None = None) -> None:
        c = self.cfg
        self.grid = build_grid(c.domain(), c.get("grid", "n"))
        if s is not None:
            params = KernelParams(self.grid.n, s, normalized=c.get("kernel", "normalized"))
            self.op = assemble(self.grid, params, c.get("kernel", "self_cell"), c.get("kernel", "max_nodes"))

    def beta(self) -> float:
        p = self.cfg.values["problem"]
        return p["beta"] if p["beta"] is not None else p["beta_fraction"] * self.grid.measure

    def start(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.ini").write_text(self.cfg.to_ini())

    # commands

    def dirichlet(self) -> int:
        c = self.cfg
        s = c.get("kernel", "s")
        self.setup(s)
        self.start()
        fval = c.get("problem", "f")
        f = np.full(self.grid.interior_count, fval)
        u = solve(self.op, f, c.get("solver", "tol"), c.get("solver", "linear_solver"))
        write_field_csv(self.dir / "u.csv", self.grid, u, "u")
        summary = self.base_summary()
        summary.update(s=s, f=fval, phi=phi(self.op, f, c.get("solver", "tol"), c.get("solver", "linear_solver")),
                       residual=float(np.linalg.norm(self.op.A @ u.values - f) / max(np.linalg.norm(f), 1e-300)),
                       u_max=float(u.values.max()), getoor_rel_l2=None)
        dom = self.grid.domain
        unit_ball = ((dom.kind == "interval" and dom.bounds == (-1.0, 1.0))
                     or (dom.kind == "disk" and dom.center == (0.0, 0.0) and dom.radius == 1.0))
        if unit_ball:
            ref = fval * getoor_reference(self.op.params, self.grid.nodes)
            err = np.linalg.norm(u.values - ref) / np.linalg.norm(ref) if np.any(ref) else 0.0
            summary["getoor_rel_l2"] = float(err)
            self.say(f"Getoor relative L2 error: {err:.3e}")
        if c.get("output", "dump_matrix"):
            dump_matrix(self.dir / "operator.flap", self.op)
        _write_json(self.dir / "summary.json", summary)
        return EXIT_OK

    def _solve_rearrangement(self) -> RearrangementSolution:
        c = self.cfg
        cls = RearrangementClass.on(self.grid, self.beta())
        if c.get("solver", "method") == "frank_wolfe":
            opts = FWOptions(gap_tol=c.get("solver", "gap_tol"), max_iter=c.get("solver", "max_iter"),
                             variant=c.get("solver", "variant"))
            return solve_frank_wolfe(self.op, cls, opts)
        opts = PGOptions(tol=c.get("solver", "pg_tol"), max_iter=c.get("solver", "pg_max_iter"),
                         accelerate=c.get("solver", "accelerate"), seed=c.get("solver", "seed"))
        return solve_projected_gradient(self.op, cls, opts)

    def rearrange(self) -> int:
        s = self.cfg.get("kernel", "s")
        self.setup(s)
        self.start()
        sol = self._solve_rearrangement()
        write_field_csv(self.dir / "f_hat.csv", self.grid, sol.f_hat, "f_hat")
        write_field_csv(self.dir / "u_hat.csv", self.grid, sol.u_hat, "u_hat")
        summary = self.base_summary()
        summary.update(s=s, beta=self.beta(), method=sol.method, alpha=sol.alpha, gap=sol.gap,
                       objective=sol.objective, iterations=sol.iterations,
                       mass=float(self.grid.cellvol * sol.f_hat.values.sum()))
        if self.cfg.get("output", "dump_matrix"):
            dump_matrix(self.dir / "operator.flap", self.op)
        _write_json(self.dir / "summary.json", summary)
        self.say(f"alpha = {sol.alpha:.12g}, objective = {sol.objective:.12g}, gap = {sol.gap:.3e}, "
                 f"iterations = {sol.iterations}")
        return EXIT_OK

    def _obstacle_options(self) -> ObstacleOptions:
        c = self.cfg
        return ObstacleOptions(tol=c.get("solver", "obstacle_tol"), max_iter=c.get("solver", "obstacle_max_iter"),
                               accelerate=c.get("solver", "accelerate"), band=c.get("solver", "band"),
                               seed=c.get("solver", "seed"))

    def _write_obstacle(self, sol, prefix: str = "") -> None:
        d = self.dir
        write_field_csv(d / f"{prefix}U.csv", self.grid, sol.U, "U")
        write_field_csv(d / f"{prefix}residual_lower.csv", self.grid, sol.residual_lower, "residual_lower")
        write_field_csv(d / f"{prefix}residual_upper.csv", self.grid, sol.residual_upper, "residual_upper")
        if sol.nonlinear_residual is not None:
            write_field_csv(d / f"{prefix}nonlinear_residual.csv", self.grid, sol.nonlinear_residual,
                            "nonlinear_residual")
        with open(d / f"{prefix}free_boundary.csv", "w") as fh:
            fh.write("node\n")
            fh.writelines(f"{int(i)}\n" for i in sol.free_boundary)

    def obstacle(self) -> int:
        c = self.cfg
        s = c.get("kernel", "s")
        self.setup(s)
        self.start()
        alpha = c.get("problem", "alpha")
        sol = minimize_J(self.op, alpha, self._obstacle_options())
        self._write_obstacle(sol)
        summary = self.base_summary()
        summary.update(s=s, alpha=alpha, j_value=sol.J_value, iterations=sol.iterations, band=sol.band,
                       residual_lower_max=masked_max(sol.residual_lower, sol.collar),
                       residual_upper_max=masked_max(sol.residual_upper, sol.collar),
                       nonlinear_residual_max=(masked_max(sol.nonlinear_residual, sol.collar)
                                               if sol.nonlinear_residual is not None else None),
                       subharmonic=sol.subharmonic.subharmonic, subharmonic_lemma=sol.subharmonic.passed,
                       u_min=float(sol.U.values.min()), free_boundary_cells=len(sol.free_boundary))
        _write_json(self.dir / "summary.json", summary)
        self.say(f"J = {sol.J_value:.12g} after {sol.iterations} iterations")
        return EXIT_OK

    def verify(self) -> int:
        c = self.cfg
        src = Path(c.get("output", "input"))
        try:
            prev = load_config("rearrange", _read_raw(src / "config.ini"))
            saved = json.loads((src / "summary.json").read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read rearrangement artifacts in {src}: {exc}") from exc
        # the operator and grid come from the persisted run; tolerances from this config
        self.cfg = RunConfig("verify", {**prev.values, "solver": c.values["solver"], "output": c.values["output"]})
        self.setup(prev.get("kernel", "s"))
        self.start()
        tol = self.cfg.values["solver"]
        try:
            nodes, f = read_field_csv(src / "f_hat.csv")
            _, u = read_field_csv(src / "u_hat.csv")
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read rearrangement fields in {src}: {exc}") from exc
        if f.values.shape[0] != self.grid.interior_count or not np.array_equal(nodes, self.grid.nodes):
            raise ConfigError(f"{src}: persisted fields do not match the configured grid")
        results = {}

        flap = src / "operator.flap"
        if flap.exists():
            same = np.array_equal(load_matrix(flap), self.op.A)
            results["operator_reproduced"] = (same, 0.0 if same else -1.0)

        u_check = solve(self.op, f, 1e-12, "cholesky").values
        state_err = float(np.abs(u_check - u.values).max() / max(np.abs(u.values).max(), 1e-300))
        results["state_consistent"] = (state_err <= 1e-8, 1e-8 - state_err)

        sol = RearrangementSolution(f, u, extract_alpha(u), saved.get("gap") or 0.0,
                                    saved.get("iterations", 0), saved.get("objective", math.nan))
        rep = verify_structure(self.op, sol, eps_density=tol["eps"], eta_pos=tol["eta_pos"])
        for name, ok in rep.checks.items():
            results[f"structure_{name}"] = (ok, rep.margins[name])

        obst = minimize_J(self.op, sol.alpha, self._obstacle_options())
        self._write_obstacle(obst, "obstacle_")
        lower, upper = residual_band(self.op, obst)
        rt = tol["residual_tol"]
        band_max = max(masked_max(lower, obst.collar), masked_max(upper, obst.collar))
        results["residual_band"] = (band_max <= rt, rt - band_max)
        results["subharmonic"] = (obst.subharmonic.passed,
                                  obst.subharmonic.tol - max(obst.subharmonic.max_g, obst.subharmonic.max_g_plus))
        if obst.subharmonic.passed:
            nl = masked_max(residual_nonlinear(self.op, obst), obst.collar)
            results["residual_nonlinear"] = (nl <= rt, rt - nl)
        else:
            results["residual_nonlinear"] = (False, -math.inf)
        floor = -1e-10 * sol.alpha
        results["obstacle_nonnegative"] = (obst.U.values.min() >= floor, float(obst.U.values.min() - floor))
        eq = equivalence_check(self.op, sol, obst)
        results["equivalence_sup"] = (not eq.mismatch(tol["equivalence_rtol"]),
                                      tol["equivalence_rtol"] * sol.alpha - eq.sup_diff)
        j_lim = tol["j_rtol"] * abs(eq.J_value)
        results["equivalence_J"] = (eq.J_gap <= j_lim, j_lim - eq.J_gap)

        summary = self.base_summary()
        summary.update(input=str(src), alpha=sol.alpha, sup_diff=eq.sup_diff, l2_diff=eq.l2_diff,
                       j_gap=eq.J_gap, passed=all(ok for ok, _ in results.values()))
        for name, (ok, margin) in results.items():
            summary[f"{name}_passed"] = bool(ok)
            summary[f"{name}_margin"] = margin
            self.say(f"{'PASS' if ok else 'FAIL'} {name}: margin {margin:.3e}")
        _write_json(self.dir / "summary.json", summary)
        return EXIT_OK if summary["passed"] else EXIT_SOLVER

    def sweep(self) -> int:
        c = self.cfg
        self.setup()
        self.start()
        opts = FWOptions(gap_tol=c.get("solver", "gap_tol"), max_iter=c.get("solver", "max_iter"),
                         variant=c.get("solver", "variant"))
        table = s_sweep(self.grid.domain, c.get("grid", "n"), self.beta(), c.get("kernel", "s_list"), opts,
                        normalized=True, s_cap=c.get("solver", "s_cap"), eps=c.get("solver", "eps"),
                        self_cell=c.get("kernel", "self_cell"), workers=c.get("solver", "workers"),
                        max_nodes=c.get("kernel", "max_nodes"))
        table.write_csv(self.dir / "sweep.csv")
        table.write_json(self.dir / "sweep.json")
        table.write_gnuplot(self.dir / "gnuplot")
        summary = self.base_summary()
        summary.update(beta=self.beta(), s_list=c.get("kernel", "s_list"), failed_rows=sum(r.failed for r in table.rows))
        _write_json(self.dir / "summary.json", summary)
        for r in table.rows:
            self.say(f"s = {r.s:g}: " + ("FAILED " + r.error if r.failed else
                     f"state_dist = {r.state_dist:.4e}, objective_diff = {r.objective_diff:.4e}, "
                     f"frac_measure = {r.frac_measure:.4g}"))
        return EXIT_OK if table.ok else EXIT_SOLVER


def run(cfg: RunConfig, out=None) -> int:
    """Execute a validated configuration; returns the exit status."""
    runner = _Run(cfg, out)
    try:
        return getattr(runner, cfg.command)()
    except ConvergenceError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ParameterError, GridError, OperatorSizeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracrearr", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI file with [domain], [grid], [kernel], [problem], [solver], [output]")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a configuration value (repeatable)")
    for flag, (sec, key) in SHORTCUTS.items():
        ap.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None, help=f"same as --set {sec}.{key}=...")
    ap.add_argument("--normalized", dest="normalized", action="store_const", const="true", default=None)
    ap.add_argument("--unnormalized", dest="normalized", action="store_const", const="false")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    raw = _read_raw(args.config) if args.config else {}
    overrides = list(args.set)
    for flag, (sec, key) in SHORTCUTS.items():
        if getattr(args, flag) is not None:
            overrides.append(f"{sec}.{key}={getattr(args, flag)}")
    if args.normalized is not None:
        overrides.append(f"kernel.normalized={args.normalized}")
    for item in overrides:
        name, sep, value = item.partition("=")
        sec, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        raw.setdefault(sec, {})[key.strip()] = value.strip()
    return load_config(args.command, raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
