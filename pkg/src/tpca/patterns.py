"""Seeded generators of observation masks.

Every generator returns a T x N boolean array with True marking observed
cells. Random patterns draw from :func:`tpca._rng.make_rng`, so a
``MaskSpec`` reproduces the same mask on every platform.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng

KINDS = (
    "full",
    "mar",
    "block",
    "staggered",
    "low_frequency",
    "mixed_frequency",
    "censoring",
    "loading_dependent",
)

# Defaults for optional parameters; required ones are listed without a default.
_PARAMS = {
    "full": {},
    "mar": {"p": None},
    "block": {"p": None, "start_fraction": 0.5},
    "staggered": {"c": None},
    "low_frequency": {"period": 2, "phase": 0},
    "mixed_frequency": {"t1": None, "t2": None},
    "censoring": {"threshold": None},
    "loading_dependent": {"threshold": 0.1, "p1": 0.2, "p2": 1.0, "column": 1},
}


def _fraction(name, v, allow_zero=False):
    v = float(v)
    lo_ok = v >= 0 if allow_zero else v > 0
    if not (lo_ok and v <= 1):
        raise ValueError(f"{name} must lie in {'[0' if allow_zero else '(0'}, 1], got {v}")
    return v


def staggered_start(p):
    """Start fraction c of a staggered pattern whose observed share is p."""
    p = _fraction("p", p)
    if p < 0.5:
        raise ValueError("a staggered pattern observes at least half of the cells")
    return 1.0 - math.sqrt(2.0 * (1.0 - p))


@dataclass(frozen=True)
class MaskSpec:
    """A mask recipe.

    Parameters by kind::

        full
        mar              p                         observation probability
        block            p, start_fraction=0.5     2(1-p) of the units go missing
                                                   from start_fraction * T on
        staggered        c  (or p)                 treated share t/T - c at t >= cT
        low_frequency    period=2, phase=0         rows with t % period == phase
        mixed_frequency  t1, t2                    first half of the units every t1
                                                   periods, second half every t2
        censoring        threshold                 missing where |value| > threshold
        loading_dependent threshold=0.1, p1=0.2, p2=1, column=1
                                                   probability p1 for units with
                                                   |loading[column]| > threshold,
                                                   p2 otherwise
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "_")
        if kind not in KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        params = dict(self.params)
        if kind == "staggered" and "c" not in params and "p" in params:
            params["c"] = staggered_start(params.pop("p"))
        allowed = _PARAMS[kind]
        unknown = set(params) - set(allowed)
        if unknown:
            raise ValueError(f"unknown parameter(s) for {kind}: {', '.join(sorted(unknown))}")
        for name, default in allowed.items():
            if name not in params:
                if default is None:
                    raise ValueError(f"{kind} mask needs parameter {name!r}")
                params[name] = default
        _validate(kind, params)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        seed = d.pop("seed", 0)
        params = d.pop("params", {})
        params.update(d)
        return cls(kind, params, seed)

    def to_dict(self):
        return {"kind": self.kind, "seed": self.seed, **self.params}


def _validate(kind, pr):
    if kind in ("mar", "block"):
        _fraction("p", pr["p"])
    if kind == "block":
        _fraction("start_fraction", pr["start_fraction"], allow_zero=True)
        if pr["p"] < 0.5:
            raise ValueError("block pattern needs p >= 0.5 so that 2(1-p) <= 1")
    if kind == "staggered":
        _fraction("c", pr["c"], allow_zero=True)
    if kind == "low_frequency":
        if int(pr["period"]) < 1 or int(pr["period"]) != pr["period"]:
            raise ValueError("period must be a positive integer")
        if not 0 <= int(pr["phase"]) < int(pr["period"]):
            raise ValueError("phase must lie in [0, period)")
    if kind == "mixed_frequency":
        for name in ("t1", "t2"):
            if not float(pr[name]) >= 1:
                raise ValueError(f"{name} must be at least 1")
    if kind == "censoring" and not float(pr["threshold"]) >= 0:
        raise ValueError("threshold must be non-negative")
    if kind == "loading_dependent":
        _fraction("p1", pr["p1"])
        _fraction("p2", pr["p2"])


def _every(T, step):
    # rows ceil(j * step) for j = 0, 1, ...; non-integer steps give the
    # stated long-run frequency 1 / step
    rows = np.ceil(np.arange(0, T / step + 1) * step - 1e-9).astype(int)
    out = np.zeros(T, dtype=bool)
    out[rows[rows < T]] = True
    return out


def generate_mask(spec, T, N, values=None, loadings=None):
    """Draw a T x N observation mask.

    ``values`` (T x N) is required for censoring and ``loadings`` (N x k)
    for the loading-dependent pattern.
    """
    if not isinstance(spec, MaskSpec):
        spec = MaskSpec.from_dict(spec)
    T, N = int(T), int(N)
    if T < 1 or N < 1:
        raise ValueError("mask dimensions must be positive")
    pr = spec.params
    rng = make_rng(spec.seed)
    kind = spec.kind
    if kind == "full":
        return np.ones((T, N), dtype=bool)
    if kind == "mar":
        return rng.random((T, N)) < pr["p"]
    if kind == "block":
        n_miss = math.floor(2.0 * (1.0 - pr["p"]) * N + 1e-9)
        units = rng.permutation(N)[:n_miss]
        mask = np.ones((T, N), dtype=bool)
        start = math.ceil(pr["start_fraction"] * T - 1e-9)
        mask[start:, units] = False
        return mask
    if kind == "staggered":
        order = rng.permutation(N)
        share = np.maximum(np.arange(T) / T - pr["c"], 0.0)
        n_treated = np.floor(share * N + 1e-9).astype(int)
        rank = np.empty(N, dtype=int)
        rank[order] = np.arange(N)
        return rank[None, :] >= n_treated[:, None]
    if kind == "low_frequency":
        rows = np.arange(T) % int(pr["period"]) == int(pr["phase"])
        return np.repeat(rows[:, None], N, axis=1)
    if kind == "mixed_frequency":
        half = N // 2
        mask = np.empty((T, N), dtype=bool)
        mask[:, :half] = _every(T, float(pr["t1"]))[:, None]
        mask[:, half:] = _every(T, float(pr["t2"]))[:, None]
        return mask
    if kind == "censoring":
        if values is None:
            raise ValueError("censoring mask needs the panel values")
        v = np.asarray(values, dtype=float)
        if v.shape != (T, N):
            raise ValueError("values do not match the mask dimensions")
        return ~(np.abs(v) > pr["threshold"])
    # loading_dependent
    if loadings is None:
        raise ValueError("loading-dependent mask needs the target loadings")
    lam = np.asarray(loadings, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != N:
        raise ValueError("loadings must have one row per unit")
    exposed = np.abs(lam[:, int(pr["column"])]) > pr["threshold"]
    prob = np.where(exposed, pr["p1"], pr["p2"])
    return rng.random((T, N)) < prob[None, :]


@dataclass(frozen=True, eq=False)
class HeldOut:
    """Cells removed by a mask that had ground truth."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __len__(self):
        return int(self.rows.size)


def apply_mask(p, mask):
    """Hide the cells where ``mask`` is False.

    Returns the masked panel and the previously observed cells that were
    hidden.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != p.shape:
        raise ValueError(f"mask shape {mask.shape} does not match panel {p.shape}")
    hidden = p.mask & ~mask
    rows, cols = np.nonzero(hidden)
    held = HeldOut(rows, cols, p.values[rows, cols].copy())
    return p.replace(mask=p.mask & mask), held
