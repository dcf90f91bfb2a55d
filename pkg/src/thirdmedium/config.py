"""Run configuration: YAML files, bundled presets and validation."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .material import CONDUCTIVITY_LAWS, MediumParams, SolidParams
from .mesh import THIRD_MEDIUM, Mesh, MeshError, generate_preset_mesh, load_mesh
from .solver import DirichletItem, LoadProgram, NeumannItem, ProgramError, StepControls, build_dof_map

PRESET_NAMES = ("block2d", "two_blocks2d", "wavy_interface2d", "block_plate3d")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


_SCHEMA = {
    "problem": {"preset": str, "mesh_file": str, "mesh_params": dict},
    "parameters": dict,
    "materials": dict,
    "conductivity_law": str,
    "load": {
        "theta_initial": float,
        "dirichlet": list,
        "neumann": list,
        "body_forces": dict,
        "heat_sources": dict,
        "stops": list,
    },
    "solver": {
        "dlambda0": float, "dlambda_min": float, "dlambda_max": float, "growth": float,
        "fast_iter": int, "max_iter": int, "tol_abs": float, "tol_rel": float,
        "p_layout": str, "tangent": str, "threads": int, "domain_scale": float,
    },
    "gap": {"lower": str, "upper": str, "axis": int},
    "output": {
        "directory": str, "history": bool, "vtk": str, "omit_medium": bool,
        "profiles": list, "snapshots": list, "reactions": list,
    },
}

_MATERIAL_KEYS = {
    "solid": {"type", "K", "mu", "k_theta", "alpha_t", "theta0"},
    "medium": {"type", "gamma", "k_tm", "k_cap", "alpha_tm", "beta1", "beta2", "theta0", "conductivity_law"},
}


def _check(node, schema, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    for key, val in node.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigError(f"{where}: unknown key")
        expect = schema[key]
        if isinstance(expect, dict):
            _check(val, expect, where)
        elif expect is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{where}: expected a number")
        elif expect is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{where}: expected an integer")
        elif not isinstance(val, expect):
            raise ConfigError(f"{where}: expected {expect.__name__}")


def preset_path(name: str) -> Path:
    if name not in PRESET_NAMES:
        raise ConfigError(f"problem.preset: unknown preset {name!r}")
    return Path(str(resources.files("thirdmedium") / "presets" / f"{name}.yaml"))


def load_config_dict(path=None, preset: str | None = None) -> dict:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of a config path or a preset name")
    src = preset_path(preset) if preset else Path(path)
    try:
        data = yaml.safe_load(src.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {src}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{src}: {exc}") from None
    return data or {}


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``dotted.key=value``; the value is parsed as YAML.

    Integer segments index into lists, e.g. ``load.dirichlet.4.value=-0.1``.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override {assignment!r}: empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: {exc}") from None
    out = copy.deepcopy(data)
    node = out
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[_list_index(node, p, key)]
        else:
            node = node.setdefault(p, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override {key}: {p} is not a section")
    if isinstance(node, list):
        node[_list_index(node, parts[-1], key)] = value
    else:
        node[parts[-1]] = value
    return out


def _list_index(node: list, part: str, key: str) -> int:
    if not part.isdigit() or int(part) >= len(node):
        raise ConfigError(f"override {key}: {part!r} is not a valid list index")
    return int(part)


@dataclass
class RunConfig:
    """Validated run description with the derived solver inputs."""

    raw: dict
    mesh: Mesh
    materials: dict
    program: LoadProgram
    p_layout: str
    tangent: str
    threads: int
    domain_scale: float | None
    output: dict

    @property
    def name(self) -> str:
        return self.raw.get("problem", {}).get("preset") or Path(self.raw["problem"]["mesh_file"]).stem


def _number(v, where, params):
    if isinstance(v, str):
        if v not in params:
            raise ConfigError(f"{where}: unknown parameter {v!r}")
        v = params[v]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number or parameter name")
    return float(v)


def _materials(data, law, params):
    mats = {}
    for region, spec in data.items():
        where = f"materials.{region}"
        if not isinstance(spec, dict) or spec.get("type") not in _MATERIAL_KEYS:
            raise ConfigError(f"{where}.type: must be 'solid' or 'medium'")
        extra = set(spec) - _MATERIAL_KEYS[spec["type"]]
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
        args = {k: v for k, v in spec.items() if k != "type"}
        for k, v in args.items():
            if k != "conductivity_law":
                args[k] = _number(v, f"{where}.{k}", params)
        try:
            if spec["type"] == "solid":
                mats[region] = SolidParams(**args)
            else:
                args.setdefault("conductivity_law", law)
                mats[region] = MediumParams(**args)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return mats


def build_run_config(data: dict) -> RunConfig:
    _check(data, _SCHEMA, "")
    for key in ("problem", "materials", "load"):
        if key not in data:
            raise ConfigError(f"{key}: missing section")
    params = data.get("parameters", {}) or {}
    law = data.get("conductivity_law", "ramp")
    if law not in CONDUCTIVITY_LAWS:
        raise ConfigError(f"conductivity_law: must be one of {CONDUCTIVITY_LAWS}")

    prob = data["problem"]
    try:
        if "preset" in prob and "mesh_file" in prob:
            raise ConfigError("problem: give preset or mesh_file, not both")
        if "preset" in prob:
            if prob["preset"] not in PRESET_NAMES:
                raise ConfigError(f"problem.preset: unknown preset {prob['preset']!r}")
            mesh = generate_preset_mesh(prob["preset"], prob.get("mesh_params"))
        elif "mesh_file" in prob:
            mesh = load_mesh(Path(prob["mesh_file"]).read_text())
        else:
            raise ConfigError("problem: needs preset or mesh_file")
    except MeshError as exc:
        raise ConfigError(f"problem: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"problem.mesh_file: {exc}") from None

    materials = _materials(data["materials"], law, params)
    for region, info in mesh.regions.items():
        if region not in materials:
            raise ConfigError(f"materials.{region}: missing material for mesh region")
        if (info.role == THIRD_MEDIUM) != isinstance(materials[region], MediumParams):
            raise ConfigError(f"materials.{region}.type: does not match region role {info.role}")
    for region in materials:
        if region not in mesh.regions:
            raise ConfigError(f"materials.{region}: no such region in the mesh")

    load = data["load"]
    sets = set(mesh.node_sets)
    dirichlet = []
    for i, item in enumerate(load.get("dirichlet", [])):
        where = f"load.dirichlet[{i}]"
        if not isinstance(item, dict) or set(item) != {"set", "component", "value"}:
            raise ConfigError(f"{where}: needs exactly set, component, value")
        if item["set"] not in sets:
            raise ConfigError(f"{where}.set: unknown node set {item['set']!r}")
        dirichlet.append(DirichletItem(item["set"], str(item["component"]), _number(item["value"], f"{where}.value", params)))
    neumann = []
    for i, item in enumerate(load.get("neumann", [])):
        where = f"load.neumann[{i}]"
        if not isinstance(item, dict) or set(item) != {"set", "kind", "value"}:
            raise ConfigError(f"{where}: needs exactly set, kind, value")
        if item["set"] not in sets:
            raise ConfigError(f"{where}.set: unknown node set {item['set']!r}")
        val = item["value"]
        val = tuple(_number(v, f"{where}.value", params) for v in val) if isinstance(val, list) else _number(val, f"{where}.value", params)
        neumann.append(NeumannItem(item["set"], item["kind"], val))
    for key in ("body_forces", "heat_sources"):
        for region in load.get(key, {}):
            if region not in mesh.regions:
                raise ConfigError(f"load.{key}.{region}: no such region")
    body = {r: tuple(float(x) for x in v) for r, v in load.get("body_forces", {}).items()}
    heat = {r: float(v) for r, v in load.get("heat_sources", {}).items()}

    solver = data.get("solver", {})
    ctrl_keys = {"dlambda0", "dlambda_min", "dlambda_max", "growth", "fast_iter", "max_iter", "tol_abs", "tol_rel"}
    try:
        controls = StepControls(**{k: v for k, v in solver.items() if k in ctrl_keys})
    except ProgramError as exc:
        raise ConfigError(f"solver: {exc}") from None
    gap = None
    if "gap" in data:
        g = data["gap"]
        for k in ("lower", "upper"):
            if g.get(k) not in sets:
                raise ConfigError(f"gap.{k}: unknown node set {g.get(k)!r}")
        axis = g.get("axis", mesh.dim - 1)
        if not 0 <= axis < mesh.dim:
            raise ConfigError("gap.axis: out of range")
        gap = (g["lower"], g["upper"], axis)
    stops = load.get("stops", [])
    if any(not isinstance(s, (int, float)) or not 0 < s <= 1 for s in stops):
        raise ConfigError("load.stops: load factors must lie in (0, 1]")
    program = LoadProgram(
        dirichlet=tuple(dirichlet), neumann=tuple(neumann), body_forces=body, heat_sources=heat,
        controls=controls, theta_initial=float(load.get("theta_initial", 0.0)), stops=tuple(stops), gap=gap,
    )
    p_layout = solver.get("p_layout", "all")
    if p_layout not in ("all", "medium"):
        raise ConfigError("solver.p_layout: must be 'all' or 'medium'")
    tangent = solver.get("tangent", "analytic")
    if tangent not in ("analytic", "fd"):
        raise ConfigError("solver.tangent: must be 'analytic' or 'fd'")
    threads = solver.get("threads", 1)
    if threads < 1:
        raise ConfigError("solver.threads: must be >= 1")

    output = {"directory": "out", "history": True, "vtk": "final", "omit_medium": False,
              "profiles": [], "snapshots": [], "reactions": []}
    output.update(data.get("output", {}))
    if output["vtk"] not in ("none", "final", "every"):
        raise ConfigError("output.vtk: must be none, final or every")
    for i, prof in enumerate(output["profiles"]):
        need = {"name", "start", "end", "n"}
        if not isinstance(prof, dict) or not need <= set(prof) or set(prof) - need - {"field", "frame", "at"}:
            raise ConfigError(f"output.profiles[{i}]: needs name, start, end, n (optional field, frame, at)")
    for i, r in enumerate(output["reactions"]):
        if not isinstance(r, dict) or set(r) != {"set", "component"} or r["set"] not in sets:
            raise ConfigError(f"output.reactions[{i}]: needs an existing set and a component")
    # requested output load factors become stops so the stepper lands on them exactly
    wanted = [*output["snapshots"], *(a for prof in output["profiles"] for a in prof.get("at", [1.0]))]
    if any(not isinstance(s, (int, float)) or not 0 < s <= 1 for s in wanted):
        raise ConfigError("output: snapshot and profile load factors must lie in (0, 1]")
    extra = sorted({float(s) for s in wanted} - set(program.stops) - {1.0})
    if extra:
        program = dataclasses.replace(program, stops=tuple(sorted({*program.stops, *extra})))
    # Dirichlet errors that depend on the DOF layout surface here as validation errors
    try:
        build_dof_map(mesh, program, p_layout)
    except ProgramError as exc:
        raise ConfigError(f"load.dirichlet: {exc}") from None
    return RunConfig(raw=data, mesh=mesh, materials=materials, program=program, p_layout=p_layout,
                     tangent=tangent, threads=threads, domain_scale=solver.get("domain_scale"), output=output)


def load_run_config(path=None, preset=None, overrides=()) -> RunConfig:
    data = load_config_dict(path, preset)
    for ov in overrides:
        data = apply_override(data, ov)
    return build_run_config(data)
