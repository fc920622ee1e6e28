"""Run configuration: a flat ``key = value`` text format with dotted section names.

Example::

    scenario = y-domain
    mesh.n = 32
    scheme.dt = 1/32
    conductivity.scale = 1e-2
    study.fluxes = [(2, -1, -1), (1, -1, -1)]

Values are Python literals; bare words are read as strings and simple
arithmetic on numbers (``1/32``, ``2**-5``) is allowed. ``#`` starts a comment.
Keys not listed in :data:`SCHEMA` are rejected. Missing keys take
scenario-specific defaults, with all physical constants equal to one.
"""

import ast
import operator
from dataclasses import dataclass, field, replace

from . import fem
from .errors import ConfigError
from .sav import SavParams
from .scheme import EnsembleConfig
from .stochastic import ConductivitySpec

SCENARIOS = ("mms-convergence", "mms-temporal", "longtime", "timing", "y-domain", "single-run")

# key -> value kind
SCHEMA = {
    "scenario": "str",
    "output.dir": "str",
    "mesh.n": "int",
    "scheme.J": "int",
    "scheme.k": "int",
    "scheme.beta": "float",
    "scheme.dt": "float",
    "scheme.t_end": "float",
    "scheme.mode": "str",
    "scheme.start": "str",
    "scheme.seed": "int",
    "scheme.deg_u": "int",
    "scheme.deg_p": "int",
    "scheme.deg_phi": "int",
    "scheme.euler_substeps": "int",
    "scheme.startup_refine": "int",
    "scheme.startup_beta": "float",
    "scheme.boundary_power": "bool",
    "physics.nu": "float",
    "physics.g": "float",
    "physics.S": "float",
    "physics.alpha_bj": "float",
    "sav.gamma": "float",
    "sav.alpha_sav": "float",
    "sav.c_r": "float",
    "conductivity.kind": "str",
    "conductivity.scale": "float",
    "conductivity.values": "floats",
    "study.ns": "ints",
    "study.dt_factor": "float",
    "study.dts": "floats",
    "study.dt_ref": "float",
    "study.orders": "ints",
    "study.amplitude": "float",
    "study.js": "ints",
    "study.repeats": "int",
    "study.fluxes": "cases",
    "study.ramp": "float",
}

MMS_KS = (1.1, 2.1, 3.3)

_COMMON = {
    "output.dir": "out",
    "scheme.beta": 3.0, "scheme.mode": "ensemble", "scheme.seed": 0,
    "scheme.deg_u": 2, "scheme.deg_p": 1, "scheme.deg_phi": 2,
    "scheme.euler_substeps": 4, "scheme.startup_refine": 1, "scheme.startup_beta": 3.0,
    "scheme.boundary_power": True,
    "physics.nu": 1.0, "physics.g": 1.0, "physics.S": 1.0, "physics.alpha_bj": 1.0,
    "sav.gamma": 0.01, "sav.alpha_sav": 1e3, "sav.c_r": 1.0,
    "conductivity.kind": "listed-isotropic", "conductivity.scale": 1e-2,
    "conductivity.values": MMS_KS,
    "study.ns": (8, 16, 32), "study.dt_factor": 1.0,
    "study.dts": (1 / 10, 1 / 20, 1 / 40, 1 / 80), "study.dt_ref": 1 / 1280,
    "study.orders": (2, 3, 4), "study.amplitude": 1.0,
    "study.js": (1, 10, 100), "study.repeats": 3,
    "study.fluxes": ((2.0, -1.0, -1.0), (1.0, -1.0, -1.0), (3.0, -1.0, -1.0)),
    "study.ramp": 0.0,
}

_SCENARIO_DEFAULTS = {
    "mms-convergence": {"mesh.n": 8, "scheme.J": 3, "scheme.k": 2, "scheme.dt": 1 / 8,
                        "scheme.t_end": 0.5, "scheme.start": "exact"},
    "mms-temporal": {"mesh.n": 16, "scheme.J": 3, "scheme.k": 3, "scheme.dt": 1 / 10,
                     "scheme.t_end": 0.5, "scheme.start": "bootstrap"},
    "longtime": {"mesh.n": 8, "scheme.J": 3, "scheme.k": 3, "scheme.dt": 0.5,
                 "scheme.t_end": 100.0, "scheme.start": "bootstrap"},
    "timing": {"mesh.n": 32, "scheme.J": 1, "scheme.k": 2, "scheme.dt": 1 / 32,
               "scheme.t_end": 0.5, "scheme.start": "exact",
               "conductivity.kind": "uniform-isotropic", "conductivity.scale": 1.0},
    "y-domain": {"mesh.n": 32, "scheme.J": 100, "scheme.k": 3, "scheme.dt": 1 / 32,
                 "scheme.t_end": 1.0, "scheme.start": "bootstrap",
                 "conductivity.kind": "uniform-isotropic", "conductivity.scale": 1e-2,
                 "sav.c_r": 1e3},
    "single-run": {"mesh.n": 8, "scheme.J": 3, "scheme.k": 2, "scheme.dt": 1 / 8,
                   "scheme.t_end": 0.5, "scheme.start": "exact"},
}


@dataclass(frozen=True)
class StudyParams:
    ns: tuple = (8, 16, 32)          # mms-convergence meshes (cells per unit length)
    dt_factor: float = 1.0           # mms-convergence dt = dt_factor * h
    dts: tuple = ()                  # mms-temporal steps
    dt_ref: float = 1 / 1280         # mms-temporal reference step
    orders: tuple = (2, 3, 4)        # longtime scheme orders
    amplitude: float = 1.0           # longtime forcing amplitude
    js: tuple = (1, 10, 100)         # timing ensemble sizes
    repeats: int = 3                 # timing repetitions (median reported)
    fluxes: tuple = ()               # y-domain (Q0, Q1, Q2) cases
    ramp: float = 0.0                # y-domain switch-on time of the flux data (0: impulsive)


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    ensemble: EnsembleConfig
    mesh_n: int
    conductivity_kind: str = "listed-isotropic"
    conductivity_scale: float = 1e-2
    conductivity_values: tuple = ()
    study: StudyParams = field(default_factory=StudyParams)
    out_dir: str = "out"

    def conductivity_spec(self):
        return ConductivitySpec(self.conductivity_kind, self.conductivity_scale,
                                self.conductivity_values)

    def ensemble_config(self, **over):
        return replace(self.ensemble, **over) if over else self.ensemble

    def with_overrides(self, **flat):
        """New config with flat dotted keys replaced (validated again)."""
        d = flatten(self)
        for k, v in flat.items():
            if k not in SCHEMA:
                raise ConfigError("unknown key", field=k)
            d[k] = v
        return from_flat(d)


# -- literal parsing ---------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_node(node):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, (ast.Tuple, ast.List)):
        return tuple(_eval_node(e) for e in node.elts)
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_eval_node(node.operand))
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        a, b = _eval_node(node.left), _eval_node(node.right)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (a, b)):
            raise ValueError("arithmetic only on numbers")
        return _BINOPS[type(node.op)](a, b)
    raise ValueError(f"unsupported expression {ast.dump(node)}")


def parse_value(text):
    text = text.strip()
    try:
        return _eval_node(ast.parse(text, mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError):
        if text and all(c.isalnum() or c in "-_./:" for c in text):
            return text
        raise


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(key, value):
    kind = SCHEMA[key]
    bad = ConfigError(f"expected {kind}, got {value!r}", field=key)
    if kind == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if kind == "int":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise bad
        return value
    if kind == "float":
        if not _is_num(value):
            raise bad
        return float(value)
    if not isinstance(value, tuple):
        value = (value,)
    if kind == "floats":
        if not all(_is_num(v) for v in value):
            raise bad
        return tuple(float(v) for v in value)
    if kind == "ints":
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise bad
        return tuple(value)
    if kind == "cases":
        if value and not isinstance(value[0], tuple):
            value = (value,)
        if not all(isinstance(c, tuple) and len(c) == 3 and all(_is_num(v) for v in c) for c in value):
            raise ConfigError(f"expected a list of (Q0, Q1, Q2) triples, got {value!r}", field=key)
        return tuple(tuple(float(v) for v in c) for c in value)
    raise AssertionError(kind)


def parse_config_text(text, source="<config>"):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key", field=key)
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key", field=key)
        if not val:
            raise ConfigError(f"{source}:{lineno}: empty value", field=key)
        try:
            raw[key] = parse_value(val)
        except (SyntaxError, ValueError, ZeroDivisionError, OverflowError) as exc:
            raise ConfigError(f"{source}:{lineno}: cannot parse {val!r} ({exc})", field=key) from None
    return from_flat(raw)


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return parse_config_text(text, source=str(path))


def from_flat(raw):
    """Validated RunConfig from a dict of dotted keys; defaults fill the gaps."""
    scen = raw.get("scenario")
    if scen is None or scen == "":
        raise ConfigError("scenario must be set", field="scenario")
    if scen not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scen!r}; expected one of {SCENARIOS}", field="scenario")
    d = dict(_COMMON)
    d.update(_SCENARIO_DEFAULTS[scen])
    if "conductivity.values" in raw and "scheme.J" not in raw:
        vals = raw["conductivity.values"]
        d["scheme.J"] = len(vals) if isinstance(vals, tuple) else 1
    if raw.get("mesh.n") is not None and "scheme.dt" not in raw and scen in ("y-domain", "single-run",
                                                                            "mms-convergence", "timing"):
        n = raw["mesh.n"]
        if _is_num(n) and n > 0:
            d["scheme.dt"] = 1.0 / n
    d.update(raw)
    v = {k: _coerce(k, d[k]) for k in SCHEMA}

    def check(cond, key, msg):
        if not cond:
            raise ConfigError(msg, field=key)

    check(v["mesh.n"] >= 1, "mesh.n", "must be >= 1")
    if scen == "y-domain":
        check(v["mesh.n"] % 4 == 0, "mesh.n", "must be a multiple of 4 for the Y-domain")
        check(len(v["study.fluxes"]) > 0, "study.fluxes", "needs at least one flux case")
    check(v["scheme.k"] in (2, 3, 4), "scheme.k", "must be 2, 3 or 4")
    check(v["scheme.beta"] >= 1, "scheme.beta", "must be >= 1")
    for key in ("scheme.dt", "scheme.t_end", "study.dt_ref", "conductivity.scale"):
        check(v[key] > 0, key, "must be positive")
    for key in ("study.ns", "study.dts", "study.js", "study.orders"):
        check(all(x > 0 for x in v[key]), key, "entries must be positive")
    check(all(k in (2, 3, 4) for k in v["study.orders"]), "study.orders", "orders must be 2, 3 or 4")
    check(v["study.ramp"] >= 0, "study.ramp", "must be >= 0")
    check(v["study.repeats"] >= 1, "study.repeats", "must be >= 1")
    for key in ("physics.nu", "physics.g", "physics.S", "physics.alpha_bj", "sav.gamma", "sav.alpha_sav"):
        check(v[key] > 0, key, "must be positive")
    check(v["sav.c_r"] >= 1, "sav.c_r", "must be >= 1")
    check(v["scheme.J"] >= 1, "scheme.J", "must be >= 1")
    check(v["scheme.mode"] in ("ensemble", "individual"), "scheme.mode", "must be ensemble or individual")
    check(v["scheme.start"] in ("exact", "bootstrap"), "scheme.start", "must be exact or bootstrap")
    if v["conductivity.kind"] == "listed-isotropic":
        check(len(v["conductivity.values"]) == v["scheme.J"], "conductivity.values",
              f"has {len(v['conductivity.values'])} entries but scheme.J = {v['scheme.J']}")
        check(all(x > 0 for x in v["conductivity.values"]), "conductivity.values",
              "conductivities must be positive")

    try:
        physics = fem.Physics(v["physics.nu"], v["physics.g"], v["physics.S"], v["physics.alpha_bj"])
    except ValueError as exc:
        raise ConfigError(str(exc), field="physics") from None
    try:
        sav = SavParams(v["sav.gamma"], v["sav.alpha_sav"], v["sav.c_r"])
    except ValueError as exc:
        raise ConfigError(str(exc), field="sav") from None
    try:
        ens = EnsembleConfig(
            J=v["scheme.J"], k=v["scheme.k"], beta=v["scheme.beta"], dt=v["scheme.dt"],
            t_end=v["scheme.t_end"], physics=physics, sav=sav, deg_u=v["scheme.deg_u"],
            deg_p=v["scheme.deg_p"], deg_phi=v["scheme.deg_phi"], seed=v["scheme.seed"],
            mode=v["scheme.mode"], start=v["scheme.start"],
            euler_substeps=v["scheme.euler_substeps"], startup_refine=v["scheme.startup_refine"],
            startup_beta=v["scheme.startup_beta"], boundary_power=v["scheme.boundary_power"])
        ens.n_steps
    except ValueError as exc:
        raise ConfigError(str(exc), field="scheme") from None
    try:
        ConductivitySpec(v["conductivity.kind"], v["conductivity.scale"], v["conductivity.values"])
    except ValueError as exc:
        raise ConfigError(str(exc), field="conductivity") from None
    study = StudyParams(v["study.ns"], v["study.dt_factor"], v["study.dts"], v["study.dt_ref"],
                        v["study.orders"], v["study.amplitude"], v["study.js"], v["study.repeats"],
                        v["study.fluxes"], v["study.ramp"])
    return RunConfig(scen, ens, v["mesh.n"], v["conductivity.kind"], v["conductivity.scale"],
                     v["conductivity.values"], study, v["output.dir"])


def flatten(rc):
    """Every effective parameter of ``rc`` under its dotted key."""
    e, p, s, st = rc.ensemble, rc.ensemble.physics, rc.ensemble.sav, rc.study
    return {
        "scenario": rc.scenario, "output.dir": rc.out_dir, "mesh.n": rc.mesh_n,
        "scheme.J": e.J, "scheme.k": e.k, "scheme.beta": e.beta, "scheme.dt": e.dt,
        "scheme.t_end": e.t_end, "scheme.mode": e.mode, "scheme.start": e.start,
        "scheme.seed": e.seed, "scheme.deg_u": e.deg_u, "scheme.deg_p": e.deg_p,
        "scheme.deg_phi": e.deg_phi, "scheme.euler_substeps": e.euler_substeps,
        "scheme.startup_refine": e.startup_refine, "scheme.startup_beta": e.startup_beta,
        "scheme.boundary_power": e.boundary_power,
        "physics.nu": p.nu, "physics.g": p.g, "physics.S": p.S, "physics.alpha_bj": p.alpha_bj,
        "sav.gamma": s.gamma, "sav.alpha_sav": s.alpha_sav, "sav.c_r": s.c_r,
        "conductivity.kind": rc.conductivity_kind, "conductivity.scale": rc.conductivity_scale,
        "conductivity.values": rc.conductivity_values,
        "study.ns": st.ns, "study.dt_factor": st.dt_factor, "study.dts": st.dts,
        "study.dt_ref": st.dt_ref, "study.orders": st.orders, "study.amplitude": st.amplitude,
        "study.js": st.js, "study.repeats": st.repeats, "study.fluxes": st.fluxes,
        "study.ramp": st.ramp,
    }


def emit_config(rc):
    """Text that :func:`parse_config_text` turns back into an equal config."""
    lines = []
    for key, val in flatten(rc).items():
        lines.append(f"{key} = {val!r}")
    return "\n".join(lines) + "\n"
