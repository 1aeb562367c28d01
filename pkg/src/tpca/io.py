"""CSV panels in FRED-MD layout, run configuration files, and JSON reports."""

import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .panel import Panel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REPORT_VERSION = "1"

TRANSFORM_CODES = {
    1: "level",
    2: "first difference",
    3: "second difference",
    4: "log",
    5: "first difference of log",
    6: "second difference of log",
    7: "first difference of percent change",
}


@dataclass(frozen=True)
class CsvLayout:
    """How a panel CSV is laid out.

    The first column holds time labels and the header row unit names. A
    second row whose first cell starts with ``codes_label`` (case
    insensitive) carries transform codes 1-7. Cells equal to one of the
    ``sentinels`` (case insensitive, surrounding blanks ignored) are
    missing.
    """

    sentinels: tuple = ("", "NA", "NaN")
    codes_label: str = "transform"
    apply_transforms: bool = True


def _diff(a, n=1):
    out = np.full_like(a, np.nan)
    if n == 1:
        out[1:] = a[1:] - a[:-1]
    else:
        out[2:] = a[2:] - 2 * a[1:-1] + a[:-2]
    return out


def _log(a, name):
    obs = a[np.isfinite(a)]
    if np.any(obs <= 0):
        raise ValueError(f"series {name!r} has non-positive values under a log transform")
    return np.log(a)


def apply_transform(series, code, name="series"):
    """Apply a transform code to one series; NaN marks missing cells.

    The length is kept: cells without enough history become NaN.
    """
    a = np.asarray(series, dtype=float)
    code = int(code)
    if code == 1:
        return a.copy()
    if code == 2:
        return _diff(a)
    if code == 3:
        return _diff(a, 2)
    if code == 4:
        return _log(a, name)
    if code == 5:
        return _diff(_log(a, name))
    if code == 6:
        return _diff(_log(a, name), 2)
    if code == 7:
        pct = np.full_like(a, np.nan)
        pct[1:] = a[1:] / a[:-1] - 1.0
        return _diff(pct)
    raise ValueError(f"unknown transform code {code} for series {name!r}")


def _parse_code(cell, name):
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"transform code {cell!r} of series {name!r} is not a number") from None
    if v != int(v) or int(v) not in TRANSFORM_CODES:
        raise ValueError(f"unknown transform code {cell!r} for series {name!r}")
    return int(v)


def read_csv(path, layout=None):
    """Parse a panel CSV.

    Returns
    -------
    data : ndarray, shape (T, N)
        NaN marks missing cells; no transform applied.
    names, index : list of str
    codes : list of int or None
    """
    layout = layout or CsvLayout()
    sentinels = {s.strip().lower() for s in layout.sentinels}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    names = [c.strip() for c in header[1:]]
    width = len(header)
    if width < 2:
        raise ValueError(f"{path}: need a time column and at least one series")
    body = rows[1:]
    codes = None
    if body and body[0][0].strip().lower().startswith(layout.codes_label):
        if len(body[0]) != width:
            raise ValueError(f"{path}: transform row has {len(body[0])} cells, expected {width}")
        codes = [_parse_code(c.strip(), n) for c, n in zip(body[0][1:], names)]
        body = body[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    data = np.empty((len(body), width - 1))
    index = []
    for r, row in enumerate(body):
        if len(row) != width:
            raise ValueError(f"{path}: row {r + 2} has {len(row)} cells, expected {width}")
        index.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            token = cell.strip()
            if token.lower() in sentinels:
                data[r, j] = np.nan
                continue
            try:
                data[r, j] = float(token)
            except ValueError:
                raise ValueError(f"{path}: row {r + 2}, column {names[j]!r}: "
                                 f"non-numeric cell {token!r}") from None
            if not math.isfinite(data[r, j]):
                data[r, j] = np.nan
    return data, names, index, codes


def load_csv(path, layout=None):
    """Load a panel CSV, applying transform codes when the file has them."""
    layout = layout or CsvLayout()
    data, names, index, codes = read_csv(path, layout)
    if codes is not None and layout.apply_transforms:
        data = np.column_stack([apply_transform(data[:, j], c, names[j]) for j, c in enumerate(codes)])
    return Panel.from_array(data, unit_names=names, time_index=index)


def write_csv(path, panel, time_label="date"):
    """Write a panel; missing cells are left empty. Values round-trip exactly."""
    names = panel.unit_names or [f"unit{i + 1}" for i in range(panel.N)]
    index = panel.time_index or [str(t + 1) for t in range(panel.T)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_label, *names])
        for t in range(panel.T):
            cells = [repr(float(v)) if m else "" for v, m in zip(panel.values[t], panel.mask[t])]
            w.writerow([index[t], *cells])


def write_matrix_csv(path, matrix, names=None, index=None, time_label="date"):
    m = np.asarray(matrix)
    names = names or [f"unit{i + 1}" for i in range(m.shape[1])]
    index = index or [str(t + 1) for t in range(m.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_label, *names])
        for t in range(m.shape[0]):
            w.writerow([index[t], *(repr(v.item()) for v in m[t])])


@dataclass
class RunConfig:
    """Settings shared by the CLI subcommands.

    ``gamma`` is None for the two-stage automatic choice. Paths are
    resolved relative to the config file.
    """

    x: list = field(default_factory=list)
    y: str = None
    k: int = 1
    gamma: float = None
    r_min: float = 1e-2
    r_max: float = 1e2
    r_size: int = 61
    objective: str = "all"
    anchor: bool = False
    standardize: bool = False
    transform: bool = True
    ci_level: float = 0.95
    empty_pairs: str = "error"
    aux_grid: list = None
    omega_mode: str = "exact"
    omega_sample_size: int = 100_000
    omega_tuples: str = "distinct"
    mask: dict = None
    dgp: dict = None
    estimators: list = None
    reps: int = 50
    seed: int = 0
    out: str = None

    def r_grid(self):
        if self.r_size < 1 or not 0 < self.r_min <= self.r_max:
            raise ValueError("grid needs 0 < r_min <= r_max and r_size >= 1")
        if self.r_size == 1:
            return np.array([float(self.r_min)])
        return np.logspace(math.log10(self.r_min), math.log10(self.r_max), int(self.r_size))

    def echo(self):
        d = dict(self.__dict__)
        return {key: v for key, v in d.items() if v is not None}


_SECTIONS = {
    "data": ("x", "y", "standardize", "transform", "anchor"),
    "model": ("k", "gamma", "objective", "ci_level", "empty_pairs", "aux_grid"),
    "grid": ("r_min", "r_max", "r_size"),
    "omega": ("omega_mode", "omega_sample_size", "omega_tuples"),
    "simulation": ("dgp", "estimators", "reps"),
    "run": ("seed", "out"),
}


def parse_gamma(value):
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() == "auto":
            return None
        value = float(value)
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"gamma must be 'auto' or a positive number, got {value}")
    return value


def load_config(path):
    """Read a TOML run configuration."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    cfg = RunConfig()
    for section, keys in _SECTIONS.items():
        block = raw.pop(section, {})
        if not isinstance(block, dict):
            raise ValueError(f"[{section}] must be a table")
        unknown = set(block) - set(keys)
        if unknown:
            raise ValueError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        for key, v in block.items():
            setattr(cfg, key, v)
    if "mask" in raw:
        cfg.mask = dict(raw.pop("mask"))
    if raw:
        raise ValueError(f"unknown section(s): {', '.join(sorted(raw))}")
    if isinstance(cfg.x, str):
        cfg.x = [cfg.x]
    cfg.x = [os.path.join(base, p) for p in cfg.x]
    if cfg.y is not None:
        cfg.y = os.path.join(base, cfg.y)
    if cfg.out is not None:
        cfg.out = os.path.join(base, cfg.out)
    cfg.gamma = parse_gamma(cfg.gamma)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if int(cfg.k) != cfg.k or cfg.k < 1:
        raise ValueError(f"k must be a positive integer, got {cfg.k}")
    cfg.k = int(cfg.k)
    if cfg.objective not in ("all", "missing"):
        raise ValueError(f"objective must be 'all' or 'missing', got {cfg.objective!r}")
    if not 0 < cfg.ci_level < 1:
        raise ValueError("ci_level must lie in (0, 1)")
    if cfg.empty_pairs not in ("error", "zero"):
        raise ValueError("empty_pairs must be 'error' or 'zero'")
    if cfg.omega_mode not in ("exact", "sampled"):
        raise ValueError("omega_mode must be 'exact' or 'sampled'")
    if cfg.omega_tuples not in ("all", "distinct"):
        raise ValueError("omega_tuples must be 'all' or 'distinct'")
    if int(cfg.reps) < 1:
        raise ValueError("reps must be at least 1")
    if not 0 <= int(cfg.seed) < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    cfg.r_grid()
    return cfg


def _clean(obj):
    if isinstance(obj, dict):
        return {str(key): _clean(v) for key, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


REPORT_FIELDS = ("version", "config_echo", "gamma_first", "gamma_star", "objective_curve",
                 "estimators", "omega", "ci_level", "runtime_seconds", "seed")


def make_report(**fields):
    """Report dictionary with every schema field present (None if unused)."""
    unknown = set(fields) - set(REPORT_FIELDS) - {"outputs"}
    if unknown:
        raise ValueError(f"unknown report field(s): {', '.join(sorted(unknown))}")
    report = {name: None for name in REPORT_FIELDS}
    report["version"] = REPORT_VERSION
    report["estimators"] = {}
    report.update(fields)
    return _clean(report)


def dumps_report(report):
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report, path):
    text = dumps_report(report)
    with open(path, "w") as fh:
        fh.write(text)
    return text
