"""Job configuration and design/figure file formats.

Configs are single JSON documents. Designs are CSV files with a metadata
comment line, a column header ``i,k,value`` and one row per grid point in
flat design order (1-based indices, covariate index fastest).
"""
import csv
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .criteria import CriterionSpec, parse_criterion
from .errors import ConfigError, DesignError
from .model import (ModelSpec, assemble_A, build_factorial_covariates, build_onehot_covariates,
                    centered_groups, centering, control_contrasts)
from .sparsify import ConstraintSet, covariate_total_constraints, user_constraints

BUILTIN_CONFIGS = ("example1", "example2", "example3")
ROUNDING_METHODS = ("efficient", "stratum_argmax")
TIE_BREAKS = ("criterion", "index")


@dataclass
class JobConfig:
    name: str
    spec: ModelSpec
    interest: object
    crit: CriterionSpec
    constraints: ConstraintSet
    rounding: dict
    seed: int
    figures: dict
    raw: dict


def _data_path(name):
    return resources.files("hetdesign") / "data" / name


def builtin_design_path(name):
    """Path of a shipped design table such as 'table2'."""
    path = _data_path(f"{name}.csv")
    if not path.is_file():
        raise ConfigError(f"no built-in design named {name!r}")
    return path


def _read_config_text(source):
    if isinstance(source, dict):
        return source, "config"
    text = str(source)
    if text in BUILTIN_CONFIGS:
        return json.loads(_data_path(f"{text}.json").read_text()), text
    path = Path(text)
    try:
        return json.loads(path.read_text()), path.stem
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _matrix(value, what):
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a numeric matrix") from exc
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ConfigError(f"{what} must be a matrix")
    return m


def _covariates(block):
    kind = block.get("type")
    if kind == "factorial":
        return build_factorial_covariates(block["levels"]), None
    if kind == "onehot":
        return build_onehot_covariates(block["sizes"]), [int(s) for s in block["sizes"]]
    if kind == "table":
        return _matrix(block["g"], "covariate table"), None
    raise ConfigError(f"unknown covariate builder {kind!r}; use factorial, onehot or table")


def _q1(value, v1):
    if value == "control":
        return control_contrasts(v1)
    if value == "centered":
        return centering(v1)
    if isinstance(value, str):
        raise ConfigError(f"unknown Q1 preset {value!r}")
    return _matrix(value, "Q1")


def _k(value, v2, groups):
    if value in (None, "none"):
        return None
    if value == "identity":
        return np.eye(v2)
    if value == "centered-groups":
        if groups is None:
            raise ConfigError("K preset 'centered-groups' needs one-hot covariates")
        return centered_groups(groups)
    if isinstance(value, str):
        raise ConfigError(f"unknown K preset {value!r}")
    return _matrix(value, "K")


def _constraints(block, spec):
    if not block:
        return None
    cs = None
    totals = block.get("covariate_totals")
    if totals is not None:
        if totals == "uniform":
            totals = np.full(spec.d, 1.0 / spec.d)
        cs = covariate_total_constraints(spec, totals)
    extra = user_constraints(
        spec,
        [(row["row"], row["rhs"]) for row in block.get("equalities", [])],
        [(row["row"], row["rhs"]) for row in block.get("inequalities", [])])
    if extra is not None:
        cs = extra if cs is None else cs.extend(extra)
    return cs


def load_config(source):
    """Parse a config from a path, a built-in name or an already-loaded dict."""
    raw, default_name = _read_config_text(source)
    try:
        model = raw["model"]
        g, groups = _covariates(model["covariates"])
        spec = ModelSpec(model["lambda"], g)
        interest_block = raw.get("interest", {})
        Q1 = _q1(interest_block.get("Q1", "control"), spec.v1)
        K = _k(interest_block.get("K", "identity"), spec.v2, groups)
        interest = assemble_A(Q1, K, spec.v1, spec.v2)
        crit = parse_criterion(raw.get("criterion", "A"))
        constraints = _constraints(raw.get("constraints"), spec)
        rounding = dict(raw.get("rounding", {}))
    except KeyError as exc:
        raise ConfigError(f"config is missing required field {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    rounding.setdefault("n", [])
    rounding.setdefault("method", "efficient")
    rounding.setdefault("tie_break", "criterion")
    if rounding["method"] not in ROUNDING_METHODS:
        raise ConfigError(f"rounding method must be one of {ROUNDING_METHODS}")
    if rounding["tie_break"] not in TIE_BREAKS:
        raise ConfigError(f"tie_break must be one of {TIE_BREAKS}")
    return JobConfig(raw.get("name", default_name), spec, interest, crit, constraints, rounding,
                     int(raw.get("seed", 0)), raw.get("figures", {}), raw)


_HEADER = re.compile(r"#\s*hetdesign design\s+(.*)")


def write_design(path, spec, values, kind="weight"):
    """Write a flat design (weights or counts) with 17 significant digits."""
    values = np.asarray(values)
    if values.size != spec.n_points:
        raise DesignError(f"design has {values.size} entries, grid has {spec.n_points}")
    lines = [f"# hetdesign design v1={spec.v1} d={spec.d} v2={spec.v2} order=k-fastest kind={kind}",
             "i,k,value"]
    for pos, value in enumerate(values.ravel()):
        i, k = divmod(pos, spec.d)
        text = str(int(value)) if kind == "count" else f"{float(value):.17g}"
        lines.append(f"{i + 1},{k + 1},{text}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_design(path, spec=None):
    """Read a design file; returns (values, meta). Checks the grid against ``spec`` if given."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise DesignError(f"{path} is empty")
    match = _HEADER.match(text[0])
    if not match:
        raise DesignError(f"{path} lacks the design header line")
    meta = dict(item.split("=", 1) for item in match.group(1).split())
    try:
        v1, d = int(meta["v1"]), int(meta["d"])
    except (KeyError, ValueError) as exc:
        raise DesignError(f"{path}: header must declare v1 and d") from exc
    if spec is not None and (v1, d) != (spec.v1, spec.d):
        raise DesignError(f"{path} is a {v1} x {d} design, model grid is {spec.v1} x {spec.d}")
    values = np.zeros(v1 * d)
    seen = np.zeros(v1 * d, dtype=bool)
    reader = csv.DictReader(text[1:])
    for row in reader:
        i, k = int(row["i"]), int(row["k"])
        if not (1 <= i <= v1 and 1 <= k <= d):
            raise DesignError(f"{path}: grid point ({i}, {k}) out of range")
        pos = (i - 1) * d + (k - 1)
        values[pos] = float(row["value"])
        seen[pos] = True
    if not seen.all():
        raise DesignError(f"{path}: {int((~seen).sum())} grid points missing")
    return values, meta


def write_rows(path, header, rows):
    """CSV with a one-line header; reals at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"
                             for v in row])


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
