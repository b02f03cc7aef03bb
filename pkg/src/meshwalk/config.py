"""Run configuration: YAML parsing with line-level diagnostics, presets.

A document has the sections ``protocol``, ``noise``, ``run`` and an optional
``sweep``.  Angles may be plain numbers or strings such as ``0.25pi``,
``-pi/2`` or ``pi``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .lattice import ProtocolParams
from .noise import DISTRIBUTIONS, SCHEDULES, NoiseSpec

ENGINES = ("trajectory", "master")
RECORDS = ("every", "stroboscopic")
BOUNDARIES = ("open", "periodic")
PRESETS = ("fig2a", "fig2b", "fig2c", "fig3a", "fig3b", "fig3c", "fig4", "supp-return")

_ANGLE = re.compile(r"^\s*([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)?\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$",
                    re.IGNORECASE)
_OBSERVABLE = re.compile(r"^(population:\d+|coherence:\d+,\d+|edge|trace|density|bands|fwhm|intensity)$")
_INITIAL = re.compile(r"^(site:\d+(:alpha|:beta)?|bloch:[^:]+|edge(:left|:right)?)$")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` holds one message per defect."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def parse_angle(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected an angle, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _ANGLE.match(str(value))
    if not m:
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"cannot read {value!r} as an angle") from None
    scale = float(m.group(2)) if m.group(2) else 1.0
    if m.group(1) == "-":
        scale = -scale
    div = float(m.group(3)) if m.group(3) else 1.0
    if div == 0:
        raise ValueError(f"division by zero in angle {value!r}")
    return scale * np.pi / div


@dataclass
class InitialState:
    kind: str                       # "site" | "bloch" | "edge"
    site: int = 0
    ring: str = "alpha"
    k: float = 0.0
    side: str = "left"

    @classmethod
    def parse(cls, text: str) -> "InitialState":
        text = str(text).strip()
        if not _INITIAL.match(text):
            raise ValueError(f"initial state {text!r} is not site:<j>[:alpha|:beta], bloch:<k> or edge[:left|:right]")
        parts = text.split(":")
        if parts[0] == "site":
            return cls("site", site=int(parts[1]), ring=parts[2] if len(parts) > 2 else "alpha")
        if parts[0] == "bloch":
            return cls("bloch", k=parse_angle(parts[1]))
        return cls("edge", side=parts[1] if len(parts) > 1 else "left")

    def text(self) -> str:
        if self.kind == "site":
            return f"site:{self.site}" + (":beta" if self.ring == "beta" else "")
        if self.kind == "bloch":
            return f"bloch:{self.k!r}"
        return f"edge:{self.side}"


@dataclass
class RunConfig:
    protocol: ProtocolParams
    noise: NoiseSpec
    engine: str = "trajectory"
    initial: InitialState = field(default_factory=lambda: InitialState("site"))
    n_periods: int = 40
    n_realizations: int = 100
    record: str = "stroboscopic"
    out: str = "run"
    observables: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)
    name: str = ""

    @property
    def n_steps(self) -> int:
        return 2 * self.n_periods

    def to_dict(self) -> dict:
        p, n = self.protocol, self.noise
        doc = {
            "name": self.name,
            "protocol": {"theta1": p.theta1, "theta2": p.theta2, "phi": p.phi,
                         "n_sites": p.n_sites, "boundary": p.boundary},
            "noise": {"distribution": n.distribution, "sigma": n.sigma,
                      "schedule": n.schedule, "seed": n.master_seed},
            "run": {"engine": self.engine, "initial": self.initial.text(),
                    "n_periods": self.n_periods, "n_realizations": self.n_realizations,
                    "record": self.record, "out": self.out,
                    "observables": list(self.observables)},
        }
        if self.sweep:
            doc["sweep"] = {k: list(v) for k, v in self.sweep.items()}
        return doc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, **kw) -> "RunConfig":
        """Copy with protocol/noise/run keys replaced (validated)."""
        doc = self.to_dict()
        for key, value in kw.items():
            section = _SECTION_OF.get(key)
            if section is None:
                raise ConfigError([f"unknown override {key!r}"])
            doc[section][key] = value
        return parse_config(yaml.safe_dump(doc, sort_keys=False))

    def expand_sweep(self) -> list[tuple[dict, "RunConfig"]]:
        """Cartesian product of the sweep grid; [({}, self)] when empty."""
        if not self.sweep:
            return [({}, self)]
        keys = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            point = dict(zip(keys, combo))
            out.append((point, self.with_overrides(**point).without_sweep()))
        return out

    def without_sweep(self) -> "RunConfig":
        doc = self.to_dict()
        doc.pop("sweep", None)
        return parse_config(yaml.safe_dump(doc, sort_keys=False))


# -- schema ------------------------------------------------------------------------

def _angle_field(v):
    return parse_angle(v)


def _nonneg_angle(v):
    x = parse_angle(v)
    if not np.isfinite(x) or x < 0:
        raise ValueError(f"must be a finite angle >= 0, got {v!r}")
    return x


def _int_field(lo, hi=None):
    def conv(v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError(f"expected an integer, got {v!r}")
        if v < lo or (hi is not None and v >= hi):
            bound = f">= {lo}" + (f" and < {hi}" if hi is not None else "")
            raise ValueError(f"must be {bound}, got {v}")
        return v
    return conv


def _choice(options):
    def conv(v):
        if v not in options:
            raise ValueError(f"must be one of {list(options)}, got {v!r}")
        return v
    return conv


def _string(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _observables(v):
    if not isinstance(v, list):
        raise ValueError(f"expected a list, got {v!r}")
    for item in v:
        if not isinstance(item, str) or not _OBSERVABLE.match(item):
            raise ValueError(f"unknown observable {item!r}")
    return list(v)


_REQ = object()
SCHEMA = {
    "protocol": {
        "theta1": (_angle_field, _REQ),
        "theta2": (_angle_field, _REQ),
        "phi": (_angle_field, _REQ),
        "n_sites": (_int_field(2), _REQ),
        "boundary": (_choice(BOUNDARIES), "open"),
    },
    "noise": {
        "distribution": (_choice(DISTRIBUTIONS), "gaussian"),
        "sigma": (_nonneg_angle, 0.0),
        "schedule": (_choice(SCHEDULES), "none"),
        "seed": (_int_field(0, 2**64), 0),
    },
    "run": {
        "engine": (_choice(ENGINES), "trajectory"),
        "initial": (InitialState.parse, "site:0"),
        "n_periods": (_int_field(1), None),
        "n_steps": (_int_field(2), None),
        "n_realizations": (_int_field(1), 100),
        "record": (_choice(RECORDS), "stroboscopic"),
        "out": (_string, "run"),
        "observables": (_observables, []),
    },
}
_SECTION_OF = {key: sec for sec, keys in SCHEMA.items() for key in keys}
_TOP = set(SCHEMA) | {"sweep", "name"}


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def parse_config(text: str) -> RunConfig:
    """Validate a YAML run configuration; every defect is reported with its line."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark else ""
        raise ConfigError([f"{where}malformed YAML ({getattr(exc, 'problem', exc)})"]) from None
    problems: list[str] = []
    values: dict = {sec: {} for sec in SCHEMA}
    present: set = set()
    sweep: dict = {}
    name = ""
    sections = {}
    if root is None:
        pass
    elif not isinstance(root, yaml.MappingNode):
        raise ConfigError([f"line {_line(root)}: top level must be a mapping"])
    else:
        for key_node, val_node in root.value:
            key = key_node.value
            if key not in _TOP:
                problems.append(f"line {_line(key_node)}: unknown section {key!r} (expected {sorted(_TOP)})")
            elif key == "name":
                name = str(_scalar(val_node) or "")
            else:
                sections[key] = val_node

    for sec, schema in SCHEMA.items():
        node = sections.get(sec)
        if node is None:
            continue
        if not isinstance(node, yaml.MappingNode):
            problems.append(f"line {_line(node)}: section {sec!r} must be a mapping")
            continue
        for key_node, val_node in node.value:
            key = key_node.value
            if key not in schema:
                problems.append(f"line {_line(key_node)}: unknown key {sec}.{key} (expected {sorted(schema)})")
                continue
            present.add((sec, key))
            try:
                values[sec][key] = schema[key][0](_scalar(val_node))
            except ValueError as exc:
                problems.append(f"line {_line(val_node)}: {sec}.{key}: {exc}")

    if "sweep" in sections:
        node = sections["sweep"]
        if not isinstance(node, yaml.MappingNode):
            problems.append(f"line {_line(node)}: section 'sweep' must be a mapping")
        else:
            for key_node, val_node in node.value:
                key = key_node.value
                if key not in _SECTION_OF or key in ("out", "observables", "initial"):
                    problems.append(f"line {_line(key_node)}: cannot sweep over {key!r}")
                    continue
                vals = _scalar(val_node)
                if not isinstance(vals, list) or not vals:
                    problems.append(f"line {_line(val_node)}: sweep.{key} must be a non-empty list")
                    continue
                conv = SCHEMA[_SECTION_OF[key]][key][0]
                for v in vals:
                    try:
                        conv(v)
                    except ValueError as exc:
                        problems.append(f"line {_line(val_node)}: sweep.{key}: {exc}")
                sweep[key] = vals

    missing = [f"{sec}.{key}" for sec, schema in SCHEMA.items()
               for key, (_, default) in schema.items()
               if default is _REQ and (sec, key) not in present]
    run = values["run"]
    if "n_periods" in run and "n_steps" in run:
        problems.append("run: give either n_periods or n_steps, not both")
    elif not {("run", "n_periods"), ("run", "n_steps")} & present:
        missing.append("run.n_periods (or run.n_steps)")
    if "n_steps" in run and run["n_steps"] % 2:
        problems.append(f"run.n_steps must be even (whole periods), got {run['n_steps']}")
    if missing:
        problems.append("missing required fields: " + ", ".join(missing))
    if problems:
        raise ConfigError(problems)

    def get(sec, key):
        return values[sec].get(key, SCHEMA[sec][key][1])

    prot = values["protocol"]
    try:
        protocol = ProtocolParams(prot["theta1"], prot["theta2"], prot["phi"],
                                  prot["n_sites"], get("protocol", "boundary"))
        noise = NoiseSpec(get("noise", "distribution"), get("noise", "sigma"),
                          get("noise", "schedule"), get("noise", "seed"))
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    initial = run.get("initial") or InitialState.parse("site:0")
    if initial.kind == "site" and initial.site >= protocol.n_sites:
        raise ConfigError([f"run.initial: site {initial.site} outside lattice of {protocol.n_sites} sites"])
    if initial.kind == "edge" and protocol.boundary != "open":
        raise ConfigError(["run.initial: edge states need protocol.boundary = open"])
    n_periods = run["n_periods"] if "n_periods" in run else run["n_steps"] // 2
    return RunConfig(protocol, noise, get("run", "engine"), initial, n_periods,
                     get("run", "n_realizations"), get("run", "record"), get("run", "out"),
                     list(get("run", "observables")), sweep, name)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(PRESETS)}"])
    return resources.files("meshwalk").joinpath("presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name))
