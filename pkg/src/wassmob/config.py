"""Experiment configuration: flat ``key = value`` entries under ``[section]`` headers.

Example::

    [experiment]
    kind = jko

    [grid]
    lo = 0
    hi = 1
    n = 128

    [mobility]
    family = exponential
    rate = 2

Lists are comma separated.  Every recognised key has a default except
``experiment.kind`` and ``mobility.family`` (when the experiment needs a
mobility).  Parsing collects all violations before failing.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

KINDS = ("distance", "geodesic", "jko", "fv_reference", "jko_vs_fv", "relaxation", "metric_axioms")
MOBILITY_FAMILIES = ("constant", "exponential", "csv")
POTENTIALS = ("zero", "quadratic_well", "double_well", "csv")
DENSITIES = ("gaussian", "uniform", "linear", "csv")
REQUIRED = object()


def _floats(s):
    return tuple(float(t) for t in s.split(",") if t.strip())


def _ints(s):
    return tuple(int(t) for t in s.split(",") if t.strip())


def _opt_float(s):
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _str(s):
    return s.strip()


# section -> key -> (converter, default)
SCHEMA = {
    "experiment": {"kind": (_str, REQUIRED), "seed": (int, 0)},
    "grid": {"lo": (_floats, (0.0,)), "hi": (_floats, (1.0,)), "n": (_ints, (64,))},
    "mobility": {
        "family": (_str, REQUIRED),
        "rate": (_floats, (2.0,)),
        "matrix": (_floats, (1.0,)),
        "path": (_str, ""),
    },
    "potential": {"kind": (_str, "zero"), "a": (float, 1.0), "x0": (_floats, ()), "c": (float, 0.25), "path": (_str, "")},
    "initial": {
        "kind": (_str, "gaussian"),
        "center": (_floats, (0.3,)),
        "width": (float, 0.1),
        "floor": (float, 1e-3),
        "intercept": (float, 1.0),
        "slope": (float, 0.0),
        "path": (_str, ""),
    },
    "target": {
        "kind": (_str, "gaussian"),
        "center": (_floats, (0.7,)),
        "width": (float, 0.1),
        "floor": (float, 1e-3),
        "intercept": (float, 1.0),
        "slope": (float, 0.0),
        "path": (_str, ""),
    },
    "solver": {
        "tau": (float, 1e-2),
        "steps": (int, 10),
        "epsilon": (_opt_float, None),
        "epsilon_floor": (float, 1e-4),
        "epsilon_coeff": (float, 100.0),
        "method": (_str, "newton"),
        "tol": (float, 1e-9),
        "max_iter": (int, 500),
        "dt": (_opt_float, None),
        "horizon": (_opt_float, None),
        "taus": (_floats, (4e-3, 2e-3, 1e-3)),
        "slices": (int, 32),
        "min_order": (float, 0.8),
    },
    "relaxation": {
        "dimension": (int, 10),
        "tau": (float, 1e-3),
        "horizon": (float, 2.0),
        "epsilons": (_floats, (1e-1, 1e-2, 1e-3, 1e-4)),
        "samples": (int, 1000),
        "window": (float, 10.0),
    },
    "checks": {"triples": (int, 200), "apriori_tol": (float, 1e-6), "bias_tol": (float, 1e-3)},
}

NEEDS_MOBILITY = {"distance", "geodesic", "jko", "fv_reference", "jko_vs_fv", "metric_axioms"}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    values: dict = field(repr=False)
    base_dir: str = "."

    def __getitem__(self, section):
        return self.values[section]

    def with_seed(self, seed):
        vals = {k: dict(v) for k, v in self.values.items()}
        vals["experiment"]["seed"] = int(seed)
        return ExperimentConfig(self.kind, int(seed), vals, self.base_dir)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def __hash__(self):
        return hash(self.kind)


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(t) for t in v)
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parsing it gives back an equal config."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for k in keys:
            out.append(f"{k} = {_fmt(cfg.values[sec][k])}")
        out.append("")
    return "\n".join(out)


def _locate(text, section, key):
    cur = None
    for ln, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip().lower()
        elif cur == section and "=" in s and s.split("=", 1)[0].strip().lower() == key:
            return ln, raw.index("=") + 2
    return None, None


def parse_config_text(text: str, base_dir=".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("entry outside any [section]", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        col = len(line) - len(line.lstrip()) + 1
        raise ParseError(f"expected 'key = value', got {line.strip()!r}", lineno, col) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(str(exc).split(":")[0].split("[line")[0].strip(), exc.lineno, 1) from None

    violations = []
    for sec in cp.sections():
        if sec.lower() not in SCHEMA:
            violations.append(f"{sec}: unknown section")
            continue
        for key in cp[sec]:
            if key not in SCHEMA[sec.lower()]:
                violations.append(f"{sec}.{key}: unknown key")

    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            raw = cp.get(sec, key, fallback=None) if cp.has_section(sec) else None
            if raw is None:
                values[sec][key] = default
                continue
            try:
                values[sec][key] = conv(raw)
            except ValueError as exc:
                ln, col = _locate(text, sec, key)
                violations.append(f"{sec}.{key}: {exc} (line {ln}, column {col})")
                values[sec][key] = default

    kind = values["experiment"]["kind"]
    if kind is REQUIRED:
        violations.append("experiment.kind: required")
    elif kind not in KINDS:
        violations.append(f"experiment.kind: {kind!r} is not one of {', '.join(KINDS)}")
    if values["mobility"]["family"] is REQUIRED:
        if kind in NEEDS_MOBILITY:
            violations.append("mobility.family: required")
        values["mobility"]["family"] = "constant"
    violations += _validate(values, base_dir)
    if violations:
        raise ValidationError(violations)
    return ExperimentConfig(kind, values["experiment"]["seed"], values, os.path.abspath(base_dir))


def _check_path(values, sec, base_dir, out):
    p = values[sec]["path"]
    if not p:
        out.append(f"{sec}.path: required for csv input")
        return
    full = p if os.path.isabs(p) else os.path.join(base_dir, p)
    if not os.path.isfile(full):
        out.append(f"{sec}.path: {p!r} does not exist")
    else:
        values[sec]["path"] = os.path.abspath(full)


def _validate(v, base_dir):
    out = []
    g = v["grid"]
    d = len(g["n"])
    if d not in (1, 2) or len(g["lo"]) != d or len(g["hi"]) != d:
        out.append("grid.n: need 1 or 2 axes with matching lo/hi")
    else:
        if any(k < 2 or k > 4096 for k in g["n"]):
            out.append("grid.n: node counts must lie in [2, 4096]")
        if any(hi <= lo for lo, hi in zip(g["lo"], g["hi"])):
            out.append("grid.hi: each hi must exceed lo")
    if v["experiment"]["seed"] < 0 or v["experiment"]["seed"] >= 2**64:
        out.append("experiment.seed: must be an unsigned 64-bit integer")
    m = v["mobility"]
    if m["family"] not in MOBILITY_FAMILIES:
        out.append(f"mobility.family: {m['family']!r} is not one of {', '.join(MOBILITY_FAMILIES)}")
    elif m["family"] == "constant" and len(m["matrix"]) not in (1, d * d):
        out.append(f"mobility.matrix: need 1 or {d * d} entries")
    elif m["family"] == "exponential" and len(m["rate"]) not in (1, d):
        out.append(f"mobility.rate: need 1 or {d} entries")
    elif m["family"] == "csv":
        _check_path(v, "mobility", base_dir, out)
    p = v["potential"]
    if p["kind"] not in POTENTIALS:
        out.append(f"potential.kind: {p['kind']!r} is not one of {', '.join(POTENTIALS)}")
    elif p["kind"] == "csv":
        _check_path(v, "potential", base_dir, out)
    if p["a"] < 0:
        out.append("potential.a: must be nonnegative")
    for sec in ("initial", "target"):
        s = v[sec]
        if s["kind"] not in DENSITIES:
            out.append(f"{sec}.kind: {s['kind']!r} is not one of {', '.join(DENSITIES)}")
        elif s["kind"] == "csv":
            _check_path(v, sec, base_dir, out)
        if s["width"] <= 0:
            out.append(f"{sec}.width: must be positive")
        if s["floor"] < 0:
            out.append(f"{sec}.floor: must be nonnegative")
    s = v["solver"]
    for key in ("tau", "tol", "epsilon_floor", "epsilon_coeff"):
        if s[key] <= 0:
            out.append(f"solver.{key}: must be positive")
    for key in ("epsilon", "dt", "horizon"):
        if s[key] is not None and s[key] <= 0:
            out.append(f"solver.{key}: must be positive")
    if s["steps"] < 0:
        out.append("solver.steps: must be nonnegative")
    if s["max_iter"] < 1:
        out.append("solver.max_iter: must be at least 1")
    if s["slices"] < 1:
        out.append("solver.slices: must be at least 1")
    if s["method"] not in ("newton", "scaling"):
        out.append("solver.method: must be newton or scaling")
    if len(s["taus"]) < 2 or any(t <= 0 for t in s["taus"]):
        out.append("solver.taus: need at least two positive steps")
    r = v["relaxation"]
    if r["dimension"] < 1:
        out.append("relaxation.dimension: must be positive")
    if r["tau"] <= 0 or r["horizon"] <= 0:
        out.append("relaxation.tau: tau and horizon must be positive")
    if not r["epsilons"] or any(e < 0 for e in r["epsilons"]):
        out.append("relaxation.epsilons: need nonnegative values")
    elif r["horizon"] <= r["window"] * max(r["epsilons"]):
        out.append("relaxation.horizon: must exceed window * max(epsilons) so every gap window is nonempty")
    if r["samples"] < 0:
        out.append("relaxation.samples: must be nonnegative")
    c = v["checks"]
    if c["triples"] < 1:
        out.append("checks.triples: must be positive")
    return out


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, os.path.dirname(os.path.abspath(path)))
