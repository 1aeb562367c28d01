"""Synthetic factor-model panels and a seeded Monte Carlo runner."""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng, spawn_seeds
from .benchmarks import BenchmarkId, run_benchmark
from .errors import InfeasibleError
from .estimator import align_rotation
from .panel import Panel
from .patterns import MaskSpec, generate_mask
from .variance import select_gamma

DGP_KINDS = ("two_factor_iid", "consistency_toy", "efficiency_one_factor", "loading_dependent")

_DGP_PARAMS = {
    "two_factor_iid": {"sigma_ex": 1.0, "sigma_ey": 1.0},
    "loading_dependent": {"sigma_ex": 4.0, "sigma_ey": 2.0},
    "consistency_toy": {"sigma_F": 1.0, "sigma_Lx": 1.0, "sigma_Ly": 1.0, "sigma_ex": 1.0, "sigma_ey": 1.0},
    "efficiency_one_factor": {"sigma_F": 1.0, "sigma_Lx": 1.0, "sigma_Ly": 1.0, "sigma_ex": 1.0, "sigma_ey": 1.0},
}


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process.

    Kinds:

    two_factor_iid
        F_t, loadings ~ N(0, I_k); noise sd ``sigma_ex``, ``sigma_ey``.
    loading_dependent
        As two_factor_iid but X does not load on the first factor.
    consistency_toy
        Two factors. Y loads on factor 1 everywhere and on factor 2 only for
        its first ceil(sqrt(N_y)) - 1 units; X loads on factor 2 only.
    efficiency_one_factor
        One factor with scalar loading and noise scales.
    """

    kind: str
    T: int
    n_x: int
    n_y: int
    k: int = 2
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "_")
        if kind not in DGP_KINDS:
            raise ValueError(f"unknown DGP {self.kind!r}; expected one of {', '.join(DGP_KINDS)}")
        params = dict(_DGP_PARAMS[kind])
        unknown = set(self.params) - set(params)
        if unknown:
            raise ValueError(f"unknown parameter(s) for {kind}: {', '.join(sorted(unknown))}")
        params.update({key: float(v) for key, v in self.params.items()})
        if any(v < 0 for v in params.values()):
            raise ValueError("standard deviations must be non-negative")
        k = int(self.k)
        if kind == "consistency_toy" and k != 2:
            raise ValueError("the consistency toy model has two factors")
        if kind == "efficiency_one_factor" and k != 1:
            raise ValueError("the efficiency model has one factor")
        if kind == "loading_dependent" and k < 2:
            raise ValueError("the loading-dependent model needs at least two factors")
        if min(self.T, self.n_x, self.n_y, k) < 1:
            raise ValueError("dimensions must be positive")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        dims = {name: int(d.pop(name)) for name in ("T", "n_x", "n_y")}
        k = int(d.pop("k", 1 if str(kind).startswith("efficiency") else 2))
        seed = int(d.pop("seed", 0))
        params = d.pop("params", {})
        params.update(d)
        return cls(kind, k=k, seed=seed, params=params, **dims)

    def to_dict(self):
        return {"kind": self.kind, "T": self.T, "n_x": self.n_x, "n_y": self.n_y,
                "k": self.k, "seed": self.seed, **self.params}

    def with_seed(self, seed):
        return DgpSpec(self.kind, self.T, self.n_x, self.n_y, self.k, seed, self.params)


@dataclass(frozen=True, eq=False)
class SimData:
    x: Panel
    y: Panel
    factors: np.ndarray
    loadings_x: np.ndarray
    loadings_y: np.ndarray
    common_x: np.ndarray
    common_y: np.ndarray


def generate(spec):
    """Draw one fully observed pair of panels from ``spec``."""
    rng = make_rng(spec.seed)
    T, nx, ny, k = spec.T, spec.n_x, spec.n_y, spec.k
    pr = spec.params
    sf = pr.get("sigma_F", 1.0)
    slx = pr.get("sigma_Lx", 1.0)
    sly = pr.get("sigma_Ly", 1.0)
    F = sf * rng.standard_normal((T, k))
    lx = slx * rng.standard_normal((nx, k))
    ly = sly * rng.standard_normal((ny, k))
    if spec.kind in ("loading_dependent", "consistency_toy"):
        lx[:, 0] = 0.0
    if spec.kind == "consistency_toy":
        ly[math.ceil(math.sqrt(ny)) - 1 :, 1] = 0.0
    ex = pr["sigma_ex"] * rng.standard_normal((T, nx))
    ey = pr["sigma_ey"] * rng.standard_normal((T, ny))
    cx = F @ lx.T
    cy = F @ ly.T
    return SimData(Panel.full(cx + ex), Panel.full(cy + ey), F, lx, ly, cx, cy)


def relative_mse(est_C, true_C, cells=None):
    """sum (est - true)^2 / sum true^2 over the selected cells."""
    est = np.asarray(est_C, dtype=float)
    true = np.asarray(true_C, dtype=float)
    if est.shape != true.shape:
        raise ValueError("estimate and truth differ in shape")
    sel = np.ones(true.shape, bool) if cells is None else np.asarray(cells, bool)
    if not sel.any():
        raise ValueError("no cells selected")
    den = float(np.sum(true[sel] ** 2))
    if den <= 0:
        raise ValueError("true common components are zero on the selected cells")
    return float(np.sum((est[sel] - true[sel]) ** 2)) / den


def factor_recovery(est_factors, true_factors):
    """Per-factor MSE and squared correlation after least-squares rotation."""
    H = align_rotation(est_factors, true_factors)
    aligned = est_factors @ H
    mse = np.mean((aligned - true_factors) ** 2, axis=0)
    corr2 = np.array([np.corrcoef(aligned[:, j], true_factors[:, j])[0, 1] ** 2
                      for j in range(true_factors.shape[1])])
    return mse, corr2


CELL_SETS = ("obs", "miss", "all")


@dataclass(frozen=True, eq=False)
class EstimatorSummary:
    """Relative MSE of one estimator across replications.

    ``values[cell]`` holds one entry per replication, NaN where the
    estimator was infeasible or the cell set was empty.
    """

    name: str
    values: dict
    feasible: np.ndarray

    @property
    def n_feasible(self):
        return int(self.feasible.sum())

    @property
    def all_feasible(self):
        return bool(self.feasible.all())

    def mean(self, cell="all"):
        v = self.values[cell][self.feasible]
        v = v[np.isfinite(v)]
        return float(np.sum(v) / v.size) if v.size else float("nan")

    def se(self, cell="all"):
        v = self.values[cell][self.feasible]
        v = v[np.isfinite(v)]
        if v.size < 2:
            return float("nan")
        return float(np.std(v, ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True, eq=False)
class McResult:
    estimators: dict
    reps: int
    master_seed: int
    seeds: list
    gammas: np.ndarray
    runtime_seconds: float = 0.0

    def __getitem__(self, name):
        return self.estimators[BenchmarkId.parse(name).value]


def _one_rep(dgp, mask_spec, estimators, seed, gamma, r_grid, objective, empty_pairs):
    data_seed, mask_seed = spawn_seeds(seed, 2)
    data = generate(dgp.with_seed(data_seed))
    spec = MaskSpec(mask_spec.kind, mask_spec.params, mask_seed)
    mask = generate_mask(spec, dgp.T, dgp.n_y, values=data.y.values, loadings=data.loadings_y)
    y = data.y.replace(mask=mask)
    sets = {"obs": mask, "miss": ~mask, "all": np.ones_like(mask)}
    g = float("nan")
    out = {}
    for tag in estimators:
        try:
            if tag is BenchmarkId.TPCA:
                if gamma is None:
                    g = select_gamma(data.x, y, dgp.k, r_grid=r_grid, objective=objective,
                                     empty_pairs=empty_pairs).gamma_star
                else:
                    g = float(gamma)
            est = run_benchmark(tag, data.x, y, dgp.k, g, empty_pairs)
        except InfeasibleError:
            out[tag.value] = None
            continue
        out[tag.value] = {
            c: relative_mse(est.common_y, data.common_y, s) if s.any() else float("nan")
            for c, s in sets.items()
        }
    return out, g


def run_table(dgp, mask, estimators=tuple(BenchmarkId), reps=50, master_seed=0,
              gamma=None, r_grid=None, objective="all", n_jobs=1, empty_pairs="zero"):
    """Monte Carlo relative MSE of several estimators.

    Replication j draws data and mask from seeds derived from
    ``master_seed``; results do not depend on ``n_jobs``. TPCA selects its
    target weight per replication unless ``gamma`` is given. Sparse random
    masks occasionally leave a pair of units without a common period, so
    by default such pairs get a zero second moment instead of failing the
    replication.
    """
    reps = int(reps)
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if not isinstance(mask, MaskSpec):
        mask = MaskSpec.from_dict(mask)
    tags = [BenchmarkId.parse(e) for e in estimators]
    seeds = spawn_seeds(master_seed, reps)
    start = time.perf_counter()

    def job(s):
        return _one_rep(dgp, mask, tags, s, gamma, r_grid, objective, empty_pairs)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(s) for s in seeds]

    summaries = {}
    for tag in tags:
        vals = {c: np.full(reps, np.nan) for c in CELL_SETS}
        feasible = np.zeros(reps, dtype=bool)
        for j, (res, _) in enumerate(results):
            r = res[tag.value]
            if r is None:
                continue
            feasible[j] = True
            for c in CELL_SETS:
                vals[c][j] = r[c]
        summaries[tag.value] = EstimatorSummary(tag.value, vals, feasible)
    return McResult(
        estimators=summaries,
        reps=reps,
        master_seed=int(master_seed),
        seeds=seeds,
        gammas=np.array([g for _, g in results]),
        runtime_seconds=time.perf_counter() - start,
    )


# Mixed-frequency periods giving observed shares 0.6, 0.75 and 0.9.
MIXED_FREQUENCY_PERIODS = {0.6: (1 / 0.35, 1 / 0.85), 0.75: (1 / 0.6, 1 / 0.9), 0.9: (1 / 0.8, 1.0)}


def pattern_spec(pattern, p, seed=0):
    """Mask recipe with observed share ``p`` for the target-weight experiments."""
    if pattern == "mar":
        return MaskSpec("mar", {"p": p}, seed)
    if pattern == "block":
        return MaskSpec("block", {"p": p}, seed)
    if pattern == "staggered":
        return MaskSpec("staggered", {"p": p}, seed)
    if pattern == "mixed_frequency":
        t1, t2 = MIXED_FREQUENCY_PERIODS[p]
        return MaskSpec("mixed_frequency", {"t1": t1, "t2": t2}, seed)
    raise ValueError(f"unknown pattern {pattern!r}")


def optimized_gamma(pattern, p, noise_ratio, size_ratio, reps=20, master_seed=0,
                    n_y=50, T=50, r_grid=None):
    """Selected target weight in the one-factor model, averaged over replications.

    The noise variances are (NR, 1) when NR >= 1 and (1, 1/NR) otherwise.
    Returns the geometric mean of the per-replication gamma* and the list
    of individual values.
    """
    if noise_ratio >= 1:
        var_ex, var_ey = noise_ratio, 1.0
    else:
        var_ex, var_ey = 1.0, 1.0 / noise_ratio
    n_x = int(round(size_ratio * n_y))
    gammas = []
    for s in spawn_seeds(master_seed, reps):
        data_seed, mask_seed = spawn_seeds(s, 2)
        dgp = DgpSpec("efficiency_one_factor", T, n_x, n_y, 1, data_seed,
                      {"sigma_ex": math.sqrt(var_ex), "sigma_ey": math.sqrt(var_ey)})
        data = generate(dgp)
        mask = generate_mask(pattern_spec(pattern, p, mask_seed), T, n_y)
        y = data.y.replace(mask=mask)
        gammas.append(select_gamma(data.x, y, 1, r_grid=r_grid).gamma_star)
    gammas = np.array(gammas)
    return float(np.exp(np.mean(np.log(gammas)))), gammas
