"""Scenario files: schema, defaults, canonical serialization and object builders.

A scenario is a JSON document.  Every physical quantity carries its unit in
the key name (``T_s``, ``k_rad_per_m``, ...).  Dimensionless "desk" scenarios
keep the same keys and set ``unit_system`` to ``"dimensionless"``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import HBAR, MASS_RB87, Pulse, PulseSequence, QuadOptions, build_mach_zehnder
from .engine import EngineOptions
from .oracles import GridOptions, Tolerances
from .potentials import ZeroPotential, earth_taylor, load_grid_potential, polynomial_potential
from .states import GaussianState, trap_ground_state


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _tensor(rank):
    s = _num
    for _ in range(rank):
        s = {"type": "array", "items": s, "minItems": 3, "maxItems": 3}
    return s


_taylor = {
    "type": "object", "additionalProperties": False,
    "properties": {"constant_J": _num, "linear_J_per_m": _tensor(1),
                   "quadratic_J_per_m2": _tensor(2), "cubic_J_per_m3": _tensor(3),
                   "quartic_J_per_m4": _tensor(4)},
}


def _kind(name, props, required=()):
    return {"type": "object", "additionalProperties": False,
            "required": ["kind", *required],
            "properties": {"kind": {"const": name}, **props}}


GEOMETRY = {"oneOf": [
    _kind("mach_zehnder", {
        "T_s": _pos, "k_rad_per_m": _pos, "mass_kg": _pos, "hbar_J_s": _pos,
        "g_m_per_s2": {"type": "number", "minimum": 0}, "r0_m": _vec3, "v0_m_per_s": _vec3,
        "laser_phases_rad": _vec3, "t_d_s": {"type": ["number", "null"]},
    }, ["T_s", "k_rad_per_m"]),
    _kind("pulses", {
        "t_i_s": _num, "t_d_s": _num, "mass_kg": _pos, "hbar_J_s": _pos,
        "g_vec_m_per_s2": _vec3, "r0_m": _vec3, "v0_m_per_s": _vec3,
        "T_s": {"type": ["number", "null"]},
        "pulses": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["t_s"],
            "properties": {"t_s": _num, "k_upper_rad_per_m": _vec3, "k_lower_rad_per_m": _vec3,
                           "phi_upper_rad": _num, "phi_lower_rad": _num}}},
    }, ["t_i_s", "t_d_s", "pulses"]),
]}

POTENTIAL = {"oneOf": [
    _kind("zero", {}),
    _kind("cubic_z", {"lambda_J_per_m3": _num}, ["lambda_J_per_m3"]),
    _kind("polynomial", {"upper": _taylor, "lower": {"oneOf": [_taylor, {"type": "null"}]}},
          ["upper"]),
    _kind("earth_gradient", {"R_m": _pos, "include_linear": {"type": "boolean"},
                             "include_gamma1": {"type": "boolean"},
                             "include_gamma2": {"type": "boolean"}}, ["R_m"]),
    _kind("grid", {"path": {"type": "string"}, "degree": {"type": "integer", "minimum": 1,
                                                          "maximum": 5}}, ["path"]),
]}

STATE = {"oneOf": [
    _kind("point", {}),
    _kind("trap", {"omega_rad_per_s": _vec3, "widen": _pos}, ["omega_rad_per_s"]),
    _kind("covariance", {
        "covariance_SI": {"type": "array", "minItems": 6, "maxItems": 6,
                          "items": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6}},
        "widen": _pos}, ["covariance_SI"]),
]}

ENGINE = {"type": "object", "additionalProperties": False, "properties": {
    "orders": {"type": "integer", "minimum": 0}, "quad_nodes": {"type": "integer", "minimum": 2},
    "quad_subdivisions": {"type": "integer", "minimum": 1},
    "n_samples": {"type": "integer", "minimum": 3}, "warn": _pos, "refuse": _pos,
    "allow_invalid": {"type": "boolean"}, "d_m": {"type": ["number", "null"], "minimum": 0},
}}

ORACLES = {"type": "object", "additionalProperties": False, "properties": {
    "classical": {"type": "boolean"}, "quantum": {"type": "boolean"},
    "classical_steps_per_segment": {"type": "integer", "minimum": 1},
    "quantum_points": {"type": "integer", "minimum": 64},
    "quantum_steps_per_segment": {"type": "integer", "minimum": 1},
    "check_convergence": {"type": "boolean"}, "convergence_tol_rad": _pos,
    "phase_rel_tol": _pos, "contrast_abs_tol": _pos,
}}

SWEEP = {"oneOf": [{"type": "null"}, {
    "type": "object", "additionalProperties": False, "required": ["parameter"],
    "properties": {"parameter": {"type": "string"}, "values": {"type": "array", "items": _num},
                   "workers": {"type": "integer", "minimum": 1}}}]}

OUTPUT = {"type": "object", "additionalProperties": False, "properties": {
    "result_path": {"type": ["string", "null"]}, "csv_path": {"type": ["string", "null"]}}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object", "additionalProperties": False,
    "required": ["name", "geometry", "potential"],
    "properties": {
        "name": {"type": "string"}, "description": {"type": "string"},
        "unit_system": {"enum": ["SI", "dimensionless"]},
        "geometry": GEOMETRY, "potential": POTENTIAL, "state": STATE, "engine": ENGINE,
        "oracles": ORACLES, "sweep": SWEEP, "output": OUTPUT,
    },
}

DEFAULTS = {
    "geometry": {
        "mach_zehnder": {"mass_kg": MASS_RB87, "hbar_J_s": HBAR, "g_m_per_s2": 9.81,
                         "r0_m": [0.0, 0.0, 0.0], "v0_m_per_s": [0.0, 0.0, 0.0],
                         "laser_phases_rad": [0.0, 0.0, 0.0], "t_d_s": None},
        "pulses": {"mass_kg": MASS_RB87, "hbar_J_s": HBAR, "g_vec_m_per_s2": [0.0, 0.0, -9.81],
                   "r0_m": [0.0, 0.0, 0.0], "v0_m_per_s": [0.0, 0.0, 0.0], "T_s": None},
    },
    "pulse": {"k_upper_rad_per_m": [0.0, 0.0, 0.0], "k_lower_rad_per_m": [0.0, 0.0, 0.0],
              "phi_upper_rad": 0.0, "phi_lower_rad": 0.0},
    "potential": {"zero": {}, "cubic_z": {}, "polynomial": {"lower": None},
                  "earth_gradient": {"include_linear": False, "include_gamma1": True,
                                     "include_gamma2": True},
                  "grid": {"degree": 3}},
    "state": {"point": {}, "trap": {"widen": 1.0}, "covariance": {"widen": 1.0}},
    "engine": {"orders": 2, "quad_nodes": 32, "quad_subdivisions": 1, "n_samples": 1000,
               "warn": 1e-2, "refuse": 1e-1, "allow_invalid": False, "d_m": None},
    "oracles": {"classical": False, "quantum": False, "classical_steps_per_segment": 10_000,
                "quantum_points": 2**15, "quantum_steps_per_segment": 2000,
                "check_convergence": True, "convergence_tol_rad": 1e-6,
                "phase_rel_tol": 1e-3, "contrast_abs_tol": 1e-3},
    "output": {"result_path": None, "csv_path": None},
}


# -- locating errors in the source text -------------------------------------

_decoder = json.JSONDecoder()
_WS = " \t\n\r"


def _skip(text, i):
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def locate(text: str, path) -> int | None:
    """Line number (1-based) of the value at ``path`` in the JSON ``text``.

    Falls back to the deepest enclosing element that exists.
    """
    i = _skip(text, 0)
    for key in path:
        if i >= len(text):
            break
        if text[i] == "{" and isinstance(key, str):
            j = _skip(text, i + 1)
            found = None
            while j < len(text) and text[j] != "}":
                name, j = json.decoder.scanstring(text, j + 1)
                j = _skip(text, j)
                j = _skip(text, j + 1)  # colon
                if name == key:
                    found = j
                    break
                _, j = _decoder.raw_decode(text, j)
                j = _skip(text, j)
                if text[j] == ",":
                    j = _skip(text, j + 1)
            if found is None:
                break
            i = found
        elif text[i] == "[" and isinstance(key, int):
            j = _skip(text, i + 1)
            for _ in range(key):
                _, j = _decoder.raw_decode(text, j)
                j = _skip(text, j)
                j = _skip(text, j + 1)
            i = j
        else:
            break
    return text.count("\n", 0, i) + 1


def _where(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def validate(doc: dict, text: str | None = None) -> None:
    """Raise ConfigError naming the offending key (and line, if text is given)."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    # for oneOf failures the most specific sub-error is the useful one
    if err.context:
        # ignore branches rejected only because their "kind" differs
        wrong_kind = {e.relative_schema_path[0] for e in err.context
                      if e.validator == "const" and list(e.relative_path) == ["kind"]}
        pool = [e for e in err.context if e.relative_schema_path[0] not in wrong_kind]
        err = max(pool or err.context, key=lambda e: len(e.absolute_path))
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            path = path + [extra[0]]
    msg = f"{_where(path)}: {err.message}"
    if text is not None:
        msg += f" (line {locate(text, path)})"
    raise ConfigError(msg)


# -- defaults and canonical form --------------------------------------------

def resolve(doc: dict) -> dict:
    """Validated copy with every optional key filled in."""
    validate(doc)
    out = copy.deepcopy(doc)
    out.setdefault("description", "")
    out.setdefault("unit_system", "SI")
    out.setdefault("state", {"kind": "point"})
    out.setdefault("sweep", None)
    for section in ("geometry", "potential", "state"):
        kind = out[section]["kind"]
        out[section] = {**DEFAULTS[section][kind], **out[section]}
    if out["geometry"]["kind"] == "pulses":
        out["geometry"]["pulses"] = [{**DEFAULTS["pulse"], **p} for p in out["geometry"]["pulses"]]
    for section in ("engine", "oracles", "output"):
        out[section] = {**DEFAULTS[section], **out.get(section, {})}
    if out["sweep"] is not None:
        out["sweep"] = {"values": [], "workers": 1, **out["sweep"]}
    validate(out)
    return out


def dumps(doc: dict) -> str:
    """Canonical text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- loading ---------------------------------------------------------------

def scenario_path(name_or_path) -> Path:
    """A file path, or the name of a scenario shipped with the package."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = resources.files("aiphase") / "scenarios" / f"{p.stem}.json"
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"no scenario file or shipped scenario named {name_or_path!r}")


def shipped_scenarios() -> list[str]:
    folder = resources.files("aiphase") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


@dataclass(frozen=True)
class Scenario:
    config: dict  # resolved
    base_dir: Path

    @property
    def name(self) -> str:
        return self.config["name"]

    def text(self) -> str:
        return dumps(self.config)

    def _slot(self, doc: dict, dotted: str):
        keys = [int(k) if k.isdigit() else k for k in dotted.split(".")]
        node = doc
        try:
            for k in keys[:-1]:
                node = node[k]
            current = node[keys[-1]]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"parameter path {dotted!r} does not exist") from None
        if isinstance(current, bool) or not isinstance(current, (int, float)):
            raise ConfigError(f"parameter path {dotted!r} is not a scalar number")
        return node, keys[-1]

    def value_at(self, dotted: str) -> float:
        node, key = self._slot(self.config, dotted)
        return float(node[key])

    def with_value(self, dotted: str, value: float) -> "Scenario":
        """Copy with the scalar at ``dotted`` (e.g. ``geometry.T_s``) replaced."""
        doc = copy.deepcopy(self.config)
        node, key = self._slot(doc, dotted)
        node[key] = float(value)
        return Scenario(resolve(doc), self.base_dir)

    # builders
    def sequence(self) -> PulseSequence:
        return build_sequence(self.config["geometry"])

    def potential(self):
        return build_potential(self.config["potential"], self.config["geometry"], self.base_dir)

    def state(self) -> GaussianState | None:
        return build_state(self.config["state"], self.sequence())

    def engine_options(self) -> EngineOptions:
        e = self.config["engine"]
        return EngineOptions(orders=e["orders"],
                             quad=QuadOptions(e["quad_nodes"], e["quad_subdivisions"]),
                             n_samples=e["n_samples"], warn=e["warn"], refuse=e["refuse"],
                             allow_invalid=e["allow_invalid"], d=e["d_m"])

    def tolerances(self) -> Tolerances:
        o = self.config["oracles"]
        grid = GridOptions(n_points=o["quantum_points"], steps_per_segment=o["quantum_steps_per_segment"],
                           check_convergence=o["check_convergence"],
                           convergence_tol=o["convergence_tol_rad"])
        return Tolerances(o["phase_rel_tol"], o["contrast_abs_tol"],
                          o["classical_steps_per_segment"], grid)


def loads(text: str, base_dir=".") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg} (line {exc.lineno})") from None
    validate(doc, text)
    return Scenario(resolve(doc), Path(base_dir))


def load(name_or_path) -> Scenario:
    path = scenario_path(name_or_path)
    return loads(path.read_text(), path.parent)


def build_sequence(geo: dict) -> PulseSequence:
    if geo["kind"] == "mach_zehnder":
        return build_mach_zehnder(geo["T_s"], geo["k_rad_per_m"], mass=geo["mass_kg"],
                                  g=geo["g_m_per_s2"], laser_phases=geo["laser_phases_rad"],
                                  t_d=geo["t_d_s"], r0=geo["r0_m"], v0=geo["v0_m_per_s"],
                                  hbar=geo["hbar_J_s"])
    pulses = [Pulse(p["t_s"], p["k_upper_rad_per_m"], p["k_lower_rad_per_m"],
                    p["phi_upper_rad"], p["phi_lower_rad"]) for p in geo["pulses"]]
    return PulseSequence(geo["t_i_s"], geo["t_d_s"], pulses, geo["mass_kg"], geo["g_vec_m_per_s2"],
                         geo["r0_m"], geo["v0_m_per_s"], geo["hbar_J_s"], geo["T_s"])


def _gravity(geo: dict) -> float:
    if geo["kind"] == "mach_zehnder":
        return geo["g_m_per_s2"]
    return float(np.linalg.norm(geo["g_vec_m_per_s2"]))


def _taylor_keys(block: dict) -> dict:
    names = {"constant_J": "constant", "linear_J_per_m": "linear",
             "quadratic_J_per_m2": "quadratic", "cubic_J_per_m3": "cubic",
             "quartic_J_per_m4": "quartic"}
    return {names[k]: v for k, v in block.items()}


def build_potential(pot: dict, geo: dict, base_dir: Path = Path(".")):
    kind = pot["kind"]
    if kind == "zero":
        return ZeroPotential()
    if kind == "cubic_z":
        c = np.zeros((3, 3, 3))
        c[2, 2, 2] = 6.0 * pot["lambda_J_per_m3"]
        return polynomial_potential({"cubic": c})
    if kind == "polynomial":
        lower = None if pot["lower"] is None else _taylor_keys(pot["lower"])
        return polynomial_potential(_taylor_keys(pot["upper"]), lower)
    if kind == "earth_gradient":
        p, _ = earth_taylor(_gravity(geo), pot["R_m"], geo["mass_kg"],
                            include_linear=pot["include_linear"],
                            include_gamma1=pot["include_gamma1"],
                            include_gamma2=pot["include_gamma2"])
        return p
    path = Path(pot["path"])
    if not path.is_absolute():
        path = base_dir / path
    return load_grid_potential(path, pot["degree"])


def build_state(st: dict, seq: PulseSequence) -> GaussianState | None:
    kind = st["kind"]
    if kind == "point":
        return None
    p0 = seq.mass * seq.v_mean0
    if kind == "trap":
        base = trap_ground_state(st["omega_rad_per_s"], seq.mass, seq.r_mean0, p0, seq.hbar)
    else:
        base = GaussianState(seq.r_mean0, p0, np.asarray(st["covariance_SI"], float),
                             seq.mass, seq.hbar)
    return base if st["widen"] == 1.0 else base.widened(st["widen"])
