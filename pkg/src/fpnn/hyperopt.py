"""Bayesian hyperparameter search with a Gaussian-process surrogate and
expected-improvement acquisition, plus the exhaustive depth sweep.

The surrogate is an exact GP with an anisotropic squared-exponential kernel
and a noise term, fit by Cholesky on points normalized to the unit cube and
objectives standardized. Kernel hyperparameters are chosen by maximizing
the log marginal likelihood with a multi-start coordinate search, keeping
the module free of gradient-based optimizers and fully deterministic.
Integer dimensions are relaxed to continuous values and rounded before
evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr  # standard normal CDF, vectorized

from .errors import FpnnError

_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

N_INITIAL_TRIALS = 4
N_RANDOM_CANDIDATES = 1024
N_LOCAL_CANDIDATES = 128
LOCAL_PERTURBATION = 0.05


# ---------------------------------------------------------------------------
# search space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dimension:
    """One search dimension: continuous [low, high] (optionally log-scaled)
    or an integer range {low..high}."""

    name: str
    low: float
    high: float
    integer: bool = False
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"dimension {self.name!r}: low must be < high")
        if self.log and self.low <= 0:
            raise ValueError(f"dimension {self.name!r}: log scale needs low > 0")
        if self.integer and self.log:
            raise ValueError(f"dimension {self.name!r}: integer dims are linear")

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        value = self.low + u * (self.high - self.low)
        if self.integer:
            return int(min(max(round(value), self.low), self.high))
        return float(value)

    def to_unit(self, value: float) -> float:
        if self.log:
            return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (float(value) - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __post_init__(self):
        if not self.dims:
            raise ValueError("search space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def from_unit(self, u: np.ndarray) -> dict:
        return {d.name: d.from_unit(u[i]) for i, d in enumerate(self.dims)}

    def to_unit(self, point: dict) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dims])


def default_search_space() -> SearchSpace:
    """Model/training knobs searched for the life-prediction task; the
    inception-unit count is always part of it."""
    return SearchSpace(
        (
            Dimension("learning_rate", 1e-4, 1e-2, log=True),
            Dimension("batch_size", 8, 64, integer=True),
            Dimension("alpha", 0.005, 0.3),
            Dimension("weight_decay", 1e-6, 1e-3, log=True),
            Dimension("noi", 0, 4, integer=True),
        )
    )


@dataclass
class Trial:
    point: dict
    objective: float  # validation MAPE (%); NaN when failed
    status: str  # "ok" | "failed"
    message: str = ""


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel in standardized-objective space."""

    lengthscales: np.ndarray  # per input dimension
    signal_var: float
    noise_var: float


@dataclass
class GpSurrogate:
    x: np.ndarray  # [n, d] observed points
    y_mean: float
    y_std: float
    y_standardized: np.ndarray  # [n]
    kernel: KernelParams
    chol: np.ndarray  # lower Cholesky factor of K + noise*I (+ jitter)
    alpha: np.ndarray  # solve(K, y_standardized)
    jitter: float


def _kernel_matrix(a: np.ndarray, b: np.ndarray, k: KernelParams) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / k.lengthscales
    return k.signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _cholesky_with_jitter(k_mat: np.ndarray) -> tuple[np.ndarray, float]:
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(k_mat + jitter * np.eye(len(k_mat))), jitter
        except np.linalg.LinAlgError:
            continue
    raise FpnnError(
        "kernel matrix is not positive definite even with jitter 1e-6; "
        "likely duplicate observation points with near-zero noise"
    )


def _log_marginal_likelihood(x, ys, kernel: KernelParams) -> float:
    k_mat = _kernel_matrix(x, x, kernel) + kernel.noise_var * np.eye(len(x))
    try:
        chol, _ = _cholesky_with_jitter(k_mat)
    except FpnnError:
        return -np.inf
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys))
    return float(
        -0.5 * ys @ alpha - np.log(np.diag(chol)).sum() - 0.5 * len(x) * math.log(2 * math.pi)
    )


def _fit_kernel(x: np.ndarray, ys: np.ndarray) -> KernelParams:
    """Maximize log marginal likelihood by multi-start coordinate search."""
    d = x.shape[1]
    factors = np.array([0.25, 0.5, 1 / 1.4, 1.0, 1.4, 2.0, 4.0])
    bounds = {"ell": (0.05, 20.0), "sf": (1e-2, 1e2), "sn": (1e-8, 1.0)}

    def clamp(v, lo, hi):
        return min(max(v, lo), hi)

    best = None
    best_lml = -np.inf
    for ell0, sn0 in ((0.3, 1e-4), (1.0, 1e-2), (3.0, 1e-2)):
        ell = np.full(d, ell0)
        sf = 1.0
        sn = sn0
        for _ in range(3):  # coordinate sweeps
            for j in range(d):
                cand = [clamp(ell[j] * f, *bounds["ell"]) for f in factors]
                lmls = []
                for c in cand:
                    trial_ell = ell.copy()
                    trial_ell[j] = c
                    lmls.append(_log_marginal_likelihood(
                        x, ys, KernelParams(trial_ell, sf, sn)))
                ell[j] = cand[int(np.argmax(lmls))]
            cand = [clamp(sf * f, *bounds["sf"]) for f in factors]
            lmls = [_log_marginal_likelihood(x, ys, KernelParams(ell, c, sn)) for c in cand]
            sf = cand[int(np.argmax(lmls))]
            cand = [clamp(sn * f, *bounds["sn"]) for f in factors]
            lmls = [_log_marginal_likelihood(x, ys, KernelParams(ell, sf, c)) for c in cand]
            sn = cand[int(np.argmax(lmls))]
        lml = _log_marginal_likelihood(x, ys, KernelParams(ell.copy(), sf, sn))
        if lml > best_lml:
            best_lml = lml
            best = KernelParams(ell.copy(), sf, sn)
    if best is None:
        raise FpnnError("kernel fitting failed for every start")
    return best


def gp_fit(points: np.ndarray, objectives: np.ndarray, kernel: KernelParams | None = None) -> GpSurrogate:
    """Exact GP regression via Cholesky.

    ``points`` is [n, d] (callers normalize to the unit cube); objectives
    are standardized internally. When ``kernel`` is omitted its parameters
    are fit by maximizing the log marginal likelihood.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(objectives, dtype=float)
    if len(x) != len(y):
        raise ValueError("points and objectives must have equal length")
    if len(x) < 2:
        raise ValueError("GP fitting needs at least 2 points")
    if len(np.unique(x, axis=0)) < 2:
        raise FpnnError("GP fitting needs at least 2 distinct points")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    if kernel is None:
        kernel = _fit_kernel(x, ys)
    else:
        kernel = KernelParams(np.asarray(kernel.lengthscales, dtype=float),
                              float(kernel.signal_var), float(kernel.noise_var))
        if kernel.lengthscales.shape != (x.shape[1],):
            raise ValueError("lengthscales must have one entry per dimension")
    k_mat = _kernel_matrix(x, x, kernel) + kernel.noise_var * np.eye(len(x))
    chol, jitter = _cholesky_with_jitter(k_mat)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys))
    return GpSurrogate(x, y_mean, y_std, ys, kernel, chol, alpha, jitter)


def gp_predict(surrogate: GpSurrogate, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at one point [d] or a batch [m, d].

    Variance is clamped at zero (numerical dust can dip to about -1e-12).
    """
    q = np.atleast_2d(np.asarray(x, dtype=float))
    if q.shape[1] != surrogate.x.shape[1]:
        raise ValueError(
            f"query dimension {q.shape[1]} != surrogate dimension {surrogate.x.shape[1]}"
        )
    k_star = _kernel_matrix(q, surrogate.x, surrogate.kernel)
    mean_std = k_star @ surrogate.alpha
    v = np.linalg.solve(surrogate.chol, k_star.T)
    var_std = surrogate.kernel.signal_var - np.sum(v * v, axis=0)
    var_std = np.maximum(var_std, 0.0)
    mean = surrogate.y_mean + surrogate.y_std * mean_std
    var = surrogate.y_std**2 * var_std
    if np.ndim(x) == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def ei_value(mean, sigma, best):
    """Expected improvement for minimization; sigma == 0 collapses to
    max(0, best - mean). Accepts scalars or equal-length arrays."""
    scalar = np.ndim(mean) == 0 and np.ndim(sigma) == 0
    mean_arr = np.atleast_1d(np.asarray(mean, dtype=float))
    sigma_arr = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), mean_arr.shape).copy()
    if np.any(sigma_arr < 0):
        raise ValueError("sigma must be nonnegative")
    improve = best - mean_arr
    out = np.maximum(improve, 0.0)
    pos = sigma_arr > 0
    z = improve[pos] / sigma_arr[pos]
    out[pos] = improve[pos] * ndtr(z) + sigma_arr[pos] * np.exp(-0.5 * z * z) / _SQRT_2PI
    return float(out[0]) if scalar else out


def expected_improvement(surrogate: GpSurrogate, x, best_so_far: float) -> float:
    """EI of a single point under the surrogate (minimization)."""
    mean, var = gp_predict(surrogate, np.asarray(x, dtype=float))
    return float(ei_value(np.asarray(mean), np.sqrt(np.asarray(var)), best_so_far))


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _halton(n: int, d: int) -> np.ndarray:
    """Unscrambled Halton sequence; deterministic low-discrepancy design."""
    if d > len(_PRIMES):
        raise ValueError(f"halton supports up to {len(_PRIMES)} dimensions")
    out = np.empty((n, d))
    for j in range(d):
        p = _PRIMES[j]
        for i in range(n):
            f, r, x = 1.0, 0.0, i + 1
            while x > 0:
                f /= p
                r += f * (x % p)
                x //= p
            out[i, j] = r
    return out


def bayes_optimize(objective, space: SearchSpace, budget: int, seed: int) -> tuple[Trial, list[Trial]]:
    """Minimize ``objective(point_dict)`` within ``budget`` evaluations.

    Four Halton-sequence initial trials, then EI-maximizing proposals over
    1024 seeded uniform candidates plus local perturbations of the
    incumbent. Failed evaluations (exceptions or non-finite objectives)
    are recorded and excluded from the surrogate. Deterministic per seed.
    """
    if budget < N_INITIAL_TRIALS:
        raise ValueError(f"budget must be >= {N_INITIAL_TRIALS}")
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    unit_points: list[np.ndarray] = []

    def run(u: np.ndarray) -> None:
        u = np.clip(u, 0.0, 1.0)
        point = space.from_unit(u)
        try:
            value = float(objective(point))
            if math.isfinite(value):
                trials.append(Trial(point, value, "ok"))
            else:
                trials.append(Trial(point, float("nan"), "failed", "non-finite objective"))
        except Exception as exc:  # noqa: BLE001 - failed trials are data
            trials.append(Trial(point, float("nan"), "failed", str(exc)))
        unit_points.append(space.to_unit(point) if trials[-1].status == "ok" else u)

    for u in _halton(min(N_INITIAL_TRIALS, budget), space.ndim):
        run(u)

    while len(trials) < budget:
        ok = [i for i, t in enumerate(trials) if t.status == "ok"]
        candidates = rng.uniform(size=(N_RANDOM_CANDIDATES, space.ndim))
        if len(ok) >= 2 and len({tuple(unit_points[i]) for i in ok}) >= 2:
            x_obs = np.stack([unit_points[i] for i in ok])
            y_obs = np.array([trials[i].objective for i in ok])
            surrogate = gp_fit(x_obs, y_obs)
            best = float(y_obs.min())
            incumbent = x_obs[int(np.argmin(y_obs))]
            local = np.clip(
                incumbent + LOCAL_PERTURBATION * rng.standard_normal((N_LOCAL_CANDIDATES, space.ndim)),
                0.0, 1.0,
            )
            cand = np.vstack([candidates, local])
            mean, var = gp_predict(surrogate, cand)
            ei = ei_value(mean, np.sqrt(var), best)
            run(cand[int(np.argmax(ei))])
        else:
            run(candidates[0])

    ok_trials = [t for t in trials if t.status == "ok"]
    if not ok_trials:
        raise FpnnError("every trial failed; nothing to optimize")
    best_trial = min(ok_trials, key=lambda t: t.objective)
    return best_trial, trials


# ---------------------------------------------------------------------------
# depth sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    """One (input window, unit count) grid cell of the depth sweep."""

    n_input_cycles: int
    noi: int
    seed: int
    mape: float = float("nan")
    mae: float = float("nan")
    rmse: float = float("nan")
    error: str = ""


def run_sweep_cell(records, n_input_cycles: int, noi: int, grid_side: int,
                   train_config, cell_seed: int, detach=None) -> SweepCell:
    """Train and evaluate one grid cell; failures land in the cell, they
    never propagate."""
    from .model import DetachFlags, FpnnConfig, build_model
    from .preprocess import holdout_by_battery, preprocess_fleet
    from .training import evaluate, train

    cell = SweepCell(n_input_cycles, noi, cell_seed)
    try:
        train_set, test_set, _, _ = preprocess_fleet(
            records, n_input_cycles, grid_side=grid_side, seed=train_config.seed
        )
        fit_set, val_set = holdout_by_battery(train_set, 0.2, cell_seed)
        config = FpnnConfig(
            noi=noi, grid_side=grid_side, seed=cell_seed,
            detach=detach if detach is not None else DetachFlags(),
        )
        cfg = type(train_config)(**{**train_config.to_dict(), "seed": cell_seed})
        best, _ = train(build_model(config), fit_set, val_set, cfg)
        report = evaluate(best, test_set)
        cell.mape, cell.mae, cell.rmse = report.mape, report.mae, report.rmse
    except Exception as exc:  # noqa: BLE001 - recorded as a NaN row
        cell.error = str(exc)
    return cell


def noi_sweep(records, cycles_values, noi_values, grid_side: int, train_config,
              seed: int, jobs: int = 1) -> list[SweepCell]:
    """Grid of (input window, unit count) cells with everything else held
    fixed; per-cell seeds are the base seed plus a fixed 1000 * index
    offset. Failed cells become NaN rows."""
    tasks = []
    index = 0
    for cycles in cycles_values:
        for noi in noi_values:
            tasks.append((records, cycles, noi, grid_side, train_config, seed + 1000 * index))
            index += 1
    if not tasks:
        raise ValueError("empty sweep grid")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell_star, tasks))
    return [_run_cell_star(t) for t in tasks]


def _run_cell_star(args):
    return run_sweep_cell(*args)
