"""Partially observed panels and the weighted concatenation of two panels."""

import math
from dataclasses import dataclass

import numpy as np


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """A T x N panel with an observation mask.

    Unobserved cells carry the placeholder 0 in ``values``; every computation
    in the package gates on ``mask``. Both arrays are stored read-only.

    Parameters
    ----------
    values : array_like, shape (T, N)
    mask : array_like of bool, shape (T, N)
        True where the cell is observed.
    unit_names, time_index : sequence, optional
        Column and row labels, carried through to CSV output.
    """

    values: np.ndarray
    mask: np.ndarray
    unit_names: tuple = None
    time_index: tuple = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"panel values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} does not match values {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("panel needs at least one period and one unit")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed cells must be finite")
        values = np.where(mask, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        if self.unit_names is not None:
            names = tuple(str(u) for u in self.unit_names)
            if len(names) != values.shape[1]:
                raise ValueError("unit_names length does not match the number of units")
            object.__setattr__(self, "unit_names", names)
        if self.time_index is not None:
            index = tuple(str(t) for t in self.time_index)
            if len(index) != values.shape[0]:
                raise ValueError("time_index length does not match the number of periods")
            object.__setattr__(self, "time_index", index)

    @classmethod
    def from_array(cls, data, unit_names=None, time_index=None):
        """Build a panel from an array that marks missing cells with NaN."""
        data = np.asarray(data, dtype=float)
        mask = np.isfinite(data)
        return cls(np.where(mask, data, 0.0), mask, unit_names, time_index)

    @classmethod
    def full(cls, data, unit_names=None, time_index=None):
        data = np.asarray(data, dtype=float)
        return cls(data, np.ones(data.shape, dtype=bool), unit_names, time_index)

    @property
    def shape(self):
        return self.values.shape

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def N(self):
        return self.values.shape[1]

    @property
    def fully_observed(self):
        return bool(self.mask.all())

    def to_array(self):
        """Values with NaN in unobserved cells."""
        return np.where(self.mask, self.values, np.nan)

    def replace(self, values=None, mask=None):
        return Panel(
            self.values if values is None else values,
            self.mask if mask is None else mask,
            self.unit_names,
            self.time_index,
        )

    def columns(self, idx):
        """Sub-panel made of the selected units."""
        idx = np.arange(self.N)[idx]
        names = None if self.unit_names is None else [self.unit_names[i] for i in idx]
        return Panel(self.values[:, idx], self.mask[:, idx], names, self.time_index)


@dataclass(frozen=True, eq=False)
class WeightedConcat:
    """The panel [X, sqrt(gamma) * Y] together with its block sizes."""

    panel: Panel
    gamma: float
    n_x: int
    n_y: int

    def x_block(self):
        return self.panel.columns(slice(0, self.n_x))

    def y_block(self):
        """The Y block with the sqrt(gamma) scaling undone."""
        y = self.panel.columns(slice(self.n_x, self.n_x + self.n_y))
        return y.replace(values=y.values / math.sqrt(self.gamma))

    @property
    def column_weights(self):
        return np.concatenate([np.ones(self.n_x), np.full(self.n_y, float(self.gamma))])


def _check_gamma(gamma):
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"target weight must be positive and finite, got {gamma}")
    return gamma


def concat_weighted(x, y, gamma):
    """Concatenate ``x`` and ``y`` column-wise, scaling ``y`` by sqrt(gamma)."""
    gamma = _check_gamma(gamma)
    if x.T != y.T:
        raise ValueError(f"panels cover different periods: {x.T} vs {y.T}")
    values = np.hstack([x.values, math.sqrt(gamma) * y.values])
    mask = np.hstack([x.mask, y.mask])
    names = None
    if x.unit_names is not None and y.unit_names is not None:
        names = x.unit_names + y.unit_names
    time_index = y.time_index if y.time_index is not None else x.time_index
    return WeightedConcat(Panel(values, mask, names, time_index), gamma, x.N, y.N)


def delta_rate(n_y, T):
    """min(N_y, T), the rate scale of the common-component estimator."""
    n_y, T = int(n_y), int(T)
    if n_y < 1 or T < 1:
        raise ValueError("dimensions must be positive")
    return min(n_y, T)


def anchor_forward_fill(y):
    """Fill each missing cell with the unit's most recent observed value.

    Filled cells are marked observed. Cells before a unit's first observation
    stay missing.
    """
    T = y.T
    rows = np.where(y.mask, np.arange(T)[:, None], -1)
    last = np.maximum.accumulate(rows, axis=0)
    seen = last >= 0
    cols = np.broadcast_to(np.arange(y.N), last.shape)
    filled = np.where(seen, y.values[np.maximum(last, 0), cols], 0.0)
    return y.replace(values=filled, mask=seen)


def standardize(p):
    """Demean and scale each unit over its observed cells (divisor T_obs).

    Returns
    -------
    (Panel, means, stds)
    """
    counts = p.mask.sum(axis=0)
    short = np.flatnonzero(counts < 2)
    if short.size:
        raise ValueError(f"unit {short[0]} has fewer than two observed cells")
    means = p.values.sum(axis=0) / counts
    dev = np.where(p.mask, p.values - means, 0.0)
    stds = np.sqrt((dev ** 2).sum(axis=0) / counts)
    # constant units can leave rounding residue in the deviations
    flat = np.flatnonzero(stds <= 1e-12 * np.maximum(np.abs(means), 1.0))
    if flat.size:
        raise ValueError(f"unit {flat[0]} has zero variance over its observed cells")
    return p.replace(values=dev / stds), means, stds


def unstandardize(p, means, stds):
    return p.replace(values=p.values * np.asarray(stds) + np.asarray(means))


@dataclass(frozen=True, eq=False)
class StackedAuxiliary:
    """Several auxiliary panels stacked column-wise into one.

    Panel j is scaled by sqrt(scales[j]) with
    scales[j] = rel[j] * N_total / (m * N_j), so that with equal relative
    weights every panel carries the same total weight. A target weight
    gamma on the stacked panel gives panel j the source weight
    eta_j = scales[j] / gamma.
    """

    panel: Panel
    scales: np.ndarray
    sizes: tuple

    def source_weights(self, gamma):
        return self.scales / float(gamma)


def stack_auxiliary(xs, rel=None):
    xs = list(xs)
    if not xs:
        raise ValueError("need at least one auxiliary panel")
    T = xs[0].T
    if any(x.T != T for x in xs):
        raise ValueError("auxiliary panels cover different periods")
    sizes = tuple(x.N for x in xs)
    m = len(xs)
    rel = np.ones(m) if rel is None else np.asarray(rel, dtype=float)
    if rel.shape != (m,) or np.any(~(rel > 0)):
        raise ValueError("relative weights must be positive, one per panel")
    scales = rel * sum(sizes) / (m * np.asarray(sizes, dtype=float))
    values = np.hstack([math.sqrt(c) * x.values for c, x in zip(scales, xs)])
    mask = np.hstack([x.mask for x in xs])
    names = None
    if all(x.unit_names is not None for x in xs):
        names = sum((x.unit_names for x in xs), ())
    return StackedAuxiliary(Panel(values, mask, names, xs[0].time_index), scales, sizes)
