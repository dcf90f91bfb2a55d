"""Command line entry point: ``run``, ``verify`` and ``export``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig, apply_override, build_run_config, load_config_dict
from .postprocess import derive_fields, export_history, export_vtk, extract_profile, load_state, save_state
from .solver import (FieldState, Problem, SolveHistory, SolverAbort, build_dof_map, measure_gap, nodal_fields,
                     run_load_program)
from .verify import run_checks

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT, EXIT_PROPERTY = 0, 2, 3, 4

log = logging.getLogger("thirdmedium")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _lam_tag(lam: float) -> str:
    return format(lam, ".6g")


@dataclass
class RunResult:
    status: str
    summary: dict
    history: SolveHistory
    state: FieldState
    problem: Problem
    snapshots: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)
    wall_time: float = 0.0


def execute(cfg: RunConfig, outdir: Path | str | None = None, write: bool = True) -> RunResult:
    """Run a validated configuration; write artifacts when ``write`` is set.

    The summary holds only deterministic quantities; wall time goes to a
    separate ``timing.txt``.
    """
    t0 = time.perf_counter()
    out = Path(outdir if outdir is not None else cfg.output["directory"])
    if write:
        out.mkdir(parents=True, exist_ok=True)
    problem = Problem(cfg.mesh, cfg.materials, cfg.program, d=cfg.domain_scale, p_layout=cfg.p_layout,
                      tangent=cfg.tangent, threads=cfg.threads)
    mesh, dm = cfg.mesh, problem.dofmap
    snap_lams = sorted(set(float(x) for x in cfg.output["snapshots"]))
    prof_lams = sorted({float(a) for p in cfg.output["profiles"] for a in p.get("at", [1.0])})
    watch = sorted(set(snap_lams) | set(prof_lams) | set(cfg.program.stops) | {1.0})
    snapshots, profiles, reactions = {}, {}, {}
    raw_yaml = yaml.safe_dump(cfg.raw, sort_keys=True)

    def on_step(rec, state):
        if write and cfg.output["vtk"] == "every":
            export_vtk(mesh, state, derive_fields(mesh, state, cfg.materials, dm),
                       out / f"step_{rec.step:04d}.vtk", omit_medium=cfg.output["omit_medium"], dofmap=dm)
        hit = [w for w in watch if abs(w - rec.lam) <= 1e-12]
        if not hit:
            return
        lam = hit[0]
        for r in cfg.output["reactions"]:
            reactions[f"reaction.{r['set']}.{r['component']}@{_lam_tag(lam)}"] = problem.assembler.reaction(
                state.U, state.lam, r["set"], r["component"])
        if lam in snap_lams:
            snapshots[lam] = state.copy()
            if write:
                save_state(out / f"state_lam{_lam_tag(lam)}.npz", state, dm, config=raw_yaml)
        for p in cfg.output["profiles"]:
            if any(abs(float(a) - lam) <= 1e-12 for a in p.get("at", [1.0])):
                prof = extract_profile(mesh, state, p["start"], p["end"], int(p["n"]), p.get("field", "theta"),
                                       p.get("frame", "reference"), dofmap=dm)
                profiles[(p["name"], lam)] = prof
                if write:
                    _write_profile(out / f"profile_{p['name']}_lam{_lam_tag(lam)}.csv", prof)

    status = "converged"
    try:
        state, history = run_load_program(problem, on_step=on_step)
    except SolverAbort as exc:
        status = "aborted"
        state, history = exc.state, exc.history
        log.error("solver abort: %s", exc)
    summary = {
        "case": cfg.name,
        "status": status,
        "dim": mesh.dim,
        "n_nodes": mesh.n_nodes,
        "n_elements": mesh.n_elements,
        "n_dofs": dm.n_free,
        "n_dofs_total": dm.n_dofs,
        "steps": history.steps,
        "iterations": history.total_iterations,
        "failed_attempts": history.failed_attempts,
        "final_lambda": state.lam,
        "final_gap": problem.gap(state),
    }
    if "gap_lower" in mesh.node_sets and "gap_upper" in mesh.node_sets:
        u = nodal_fields(mesh, dm, state.U)[0]
        axis = cfg.program.gap[2] if cfg.program.gap else mesh.dim - 1
        summary["final_gap_interface_min"] = measure_gap(mesh, u, "gap_lower", "gap_upper", axis)
    summary.update(sorted(reactions.items()))
    wall = time.perf_counter() - t0
    if write:
        if cfg.output["history"] and history.records:
            export_history(history, out / "history.csv")
        if cfg.output["vtk"] in ("final", "every") and history.records:
            export_vtk(mesh, state, derive_fields(mesh, state, cfg.materials, dm), out / "final.vtk",
                       omit_medium=cfg.output["omit_medium"], dofmap=dm)
        save_state(out / "final_state.npz", state, dm, config=raw_yaml)
        (out / "summary.txt").write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in summary.items()))
        (out / "timing.txt").write_text(f"wall_time_s = {wall:.3f}\nsolve_time_s = {history.wall_time:.3f}\n")
    return RunResult(status, summary, history, state, problem, snapshots, profiles, wall)


def _write_profile(path: Path, prof):
    dim = prof.points.shape[1]
    cols = ["s", "x", "y", "z"][: dim + 1] + ["value"]
    lines = [",".join(cols)]
    for s, pt, v in zip(prof.s, prof.points, prof.values):
        lines.append(",".join(_fmt(float(x)) for x in (s, *pt, v)))
    path.write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    """Parse a ``key = value`` summary file (numbers converted)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " not in line:
            continue
        k, v = line.split(" = ", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands


def _cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.layers is not None:
        overrides.append(f"problem.mesh_params.layers={args.layers}")
    if args.uz is not None:
        overrides.append(f"parameters.uz={args.uz}")
    if args.threads is not None:
        overrides.append(f"solver.threads={args.threads}")
    try:
        data = load_config_dict(args.config, args.preset)
        for ov in overrides:
            data = apply_override(data, ov)
        cfg = build_run_config(data)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    res = execute(cfg, args.out)
    out = Path(args.out or cfg.output["directory"])
    print(f"{cfg.name}: {res.status}, {res.summary['steps']} steps, {res.summary['iterations']} iterations, "
          f"gap {res.summary['final_gap']:.4e}, {res.summary['n_dofs']} dofs -> {out}")
    return EXIT_OK if res.status == "converged" else EXIT_ABORT


def _cmd_verify(args) -> int:
    only = [g for g in (args.only or []) if g]
    try:
        results = run_checks(only)
    except KeyError as exc:
        print(f"validation error: {exc.args[0]}", file=sys.stderr)
        return EXIT_VALIDATION
    failed = []
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed.append(name)
    if failed:
        print("failed properties: " + ", ".join(failed), file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def _cmd_export(args) -> int:
    try:
        state, index, meta = load_state(args.state)
    except (OSError, ValueError, KeyError) as exc:
        print(f"validation error: cannot read state: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if "config" not in meta:
        print("validation error: snapshot carries no configuration", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = build_run_config(yaml.safe_load(str(meta["config"])))
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    dm = build_dof_map(cfg.mesh, cfg.program, cfg.p_layout)
    if not np.array_equal(dm.index, index):
        print("validation error: snapshot layout does not match its configuration", file=sys.stderr)
        return EXIT_VALIDATION
    derived = derive_fields(cfg.mesh, state, cfg.materials, dm)
    export_vtk(cfg.mesh, state, derived, args.vtk, omit_medium=args.omit_medium, dofmap=dm)
    print(f"wrote {args.vtk}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thirdmedium", description="Thermo-mechanical third-medium contact solver")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every load step")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configuration or bundled preset")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="YAML configuration file")
    src.add_argument("--preset", help="bundled benchmark name")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (dotted key)")
    run.add_argument("--layers", type=int, help="medium element layers (block_plate3d)")
    run.add_argument("--uz", type=float, help="prescribed patch displacement (block_plate3d)")
    run.add_argument("--threads", type=int, help="assembly threads")
    run.add_argument("--out", help="output directory (default from config)")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run the property suites")
    ver.add_argument("--only", action="append", metavar="GROUP", help="restrict to a check group (repeatable)")
    ver.set_defaults(func=_cmd_verify)

    exp = sub.add_parser("export", help="write VTK from a saved state")
    exp.add_argument("--state", required=True, help="state snapshot (.npz)")
    exp.add_argument("--vtk", required=True, help="output VTK path")
    exp.add_argument("--omit-medium", action="store_true", help="skip third-medium cells")
    exp.set_defaults(func=_cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
