"""The PaRMIS loop and the baseline strategies it is compared against.

Every strategy minimizes a black-box ``objective(theta) -> k-vector`` over a
box and returns a :class:`RunRecord` holding the full evaluation log, the
Pareto front of every successful evaluation, and a PHV-vs-evaluation curve.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import acquisition as acq
from . import gp as gplib
from . import governors, nsga2, socsim
from .errors import InputError, ParmisError
from .pareto import ParetoFront, dominated_hypervolume, pareto_front, reference_point
from .policy import float32_exact

Objective = Callable[[np.ndarray], np.ndarray]


class OptimizationAborted(ParmisError, RuntimeError):
    """Too many consecutive evaluation failures. Carries the partial record."""

    def __init__(self, message: str, record: "RunRecord | None" = None):
        super().__init__(message)
        self.record = record


def copula_warp(y: np.ndarray) -> np.ndarray:
    """Map each column to normal scores of its ranks (ties share the average rank).

    Monotone per column, so Pareto dominance is unchanged, and it removes the
    heavy right tail that slow or power-hungry policies put on every objective.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    ranks = stats.rankdata(y, axis=0)
    return stats.norm.ppf((ranks - 0.5) / n)


# Above this many parameters a posterior sample maximized over the whole box
# reaches far past anything observed, the utility flattens to zero and the
# argmax degenerates to "largest variance", i.e. random search.
TRUST_REGION_AUTO_DIM = 50

WARPINGS = {"none": lambda y: np.asarray(y, dtype=float), "copula": copula_warp}


@dataclass(frozen=True)
class ParmisConfig:
    init_samples: int = 10
    max_iters: int = 290
    theta_bound: float = 1.0
    noise: float = 1e-3  # standardized units
    refit_every: int = 10
    hyper_restarts: int = 1
    front_samples: int = 1
    front_population: int = 40
    front_generations: int = 30
    rff_features: int = 256
    candidate_budget: int = 512
    polish_steps: int = 20
    convergence_window: int = 50
    convergence_tol: float = 1e-4
    stop_on_convergence: bool = True
    max_consecutive_failures: int = 10
    round_float32: bool = True
    output_warping: str = "copula"  # or "none"
    trust_region: str = "auto"  # "on", "off", or "auto" (on when d > TRUST_REGION_AUTO_DIM)
    tr_length_init: float = 0.2  # side length as a fraction of the box
    tr_length_min: float = 0.0125
    tr_success_tol: int = 3
    tr_failure_tol: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.init_samples < 2:
            raise InputError("init_samples must be at least 2")
        if self.max_iters < 0:
            raise InputError("max_iters must be non-negative")
        if not self.theta_bound > 0:
            raise InputError("theta_bound must be positive")
        if self.output_warping not in WARPINGS:
            raise InputError(f"output_warping must be one of {list(WARPINGS)}")
        if self.trust_region not in ("on", "off", "auto"):
            raise InputError("trust_region must be 'on', 'off' or 'auto'")
        if not 0 < self.tr_length_min <= self.tr_length_init <= 1:
            raise InputError("need 0 < tr_length_min <= tr_length_init <= 1")
        if self.front_population < 4 or self.front_population % 2:
            raise InputError("front_population must be even and at least 4")
        for name in ("refit_every", "front_samples", "rff_features", "candidate_budget",
                     "convergence_window", "max_consecutive_failures"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1")

    @property
    def budget(self) -> int:
        return self.init_samples + self.max_iters

    def uses_trust_region(self, d: int) -> bool:
        return self.trust_region == "on" or (self.trust_region == "auto" and d > TRUST_REGION_AUTO_DIM)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    """Evaluation log and results of one optimization run.

    ``values`` rows of failed evaluations are NaN. ``phv`` has one entry per
    evaluation: the hypervolume of the front of every successful evaluation
    so far, measured against ``reference``.
    """

    strategy: str
    seed: int
    config: dict
    thetas: np.ndarray
    values: np.ndarray
    failed: np.ndarray
    phases: list
    reference: np.ndarray
    phv: np.ndarray
    front: ParetoFront
    stop_reason: str = "budget"
    converged_at: int | None = None
    timings: dict = field(default_factory=dict)

    @property
    def n_evals(self) -> int:
        return self.thetas.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def front_thetas(self) -> np.ndarray:
        return self.thetas[self.front.member_ids]

    @property
    def successful(self) -> np.ndarray:
        return np.flatnonzero(~self.failed)

    def final_phv(self, reference=None) -> float:
        ref = self.reference if reference is None else np.asarray(reference, dtype=float)
        return dominated_hypervolume(self.front.points, ref)

    def phv_curve(self, reference) -> np.ndarray:
        return _phv_curve(self.values, self.failed, np.asarray(reference, dtype=float))

    def same_result(self, other: "RunRecord") -> bool:
        """Equality of everything except wall-clock timings."""
        return (
            self.strategy == other.strategy
            and self.seed == other.seed
            and self.config == other.config
            and self.thetas.tobytes() == other.thetas.tobytes()
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.failed, other.failed)
            and self.phases == other.phases
            and self.reference.tobytes() == other.reference.tobytes()
            and self.phv.tobytes() == other.phv.tobytes()
            and self.front.member_ids == other.front.member_ids
            and self.stop_reason == other.stop_reason
        )


def _phv_curve(values: np.ndarray, failed: np.ndarray, ref: np.ndarray) -> np.ndarray:
    curve = np.zeros(len(values))
    current = np.empty((0, values.shape[1]))
    hv = 0.0
    for i, (v, bad) in enumerate(zip(values, failed)):
        if not bad and np.all(v < ref) and not any(np.all(c <= v) for c in current):
            keep = ~np.all(v <= current, axis=1)
            current = np.vstack([current[keep], v])
            hv = dominated_hypervolume(current, ref)
        curve[i] = hv
    return curve


def _finish(strategy, seed, config, thetas, values, failed, phases, reference=None, **extra) -> RunRecord:
    thetas = np.asarray(thetas, dtype=float).reshape(len(phases), -1)
    values = np.asarray(values, dtype=float)
    failed = np.asarray(failed, dtype=bool)
    ok = np.flatnonzero(~failed)
    if ok.size == 0:
        raise OptimizationAborted(f"{strategy}: no successful evaluations")
    if reference is None:
        first = [i for i in ok if phases[i] == "init"] or list(ok)
        reference = reference_point(values[first])
    reference = np.asarray(reference, dtype=float)
    front = pareto_front(values[ok], ids=ok.tolist())
    return RunRecord(
        strategy=strategy,
        seed=seed,
        config=config,
        thetas=thetas,
        values=values,
        failed=failed,
        phases=list(phases),
        reference=reference,
        phv=_phv_curve(values, failed, reference),
        front=front,
        **extra,
    )


class _Log:
    """Append-only evaluation log shared by every strategy."""

    def __init__(self, objective: Objective, k: int | None, round32: bool):
        self.objective = objective
        self.k = k
        self.round32 = round32
        self.thetas, self.values, self.failed, self.phases, self.errors = [], [], [], [], []
        self.consecutive_failures = 0
        self.timings = defaultdict(float)

    def evaluate(self, theta: np.ndarray, phase: str) -> np.ndarray | None:
        theta = float32_exact(theta) if self.round32 else np.asarray(theta, dtype=float)
        t0 = time.perf_counter()
        err = None
        try:
            v = np.asarray(self.objective(theta), dtype=float).ravel()
            if self.k is None:
                self.k = v.size
            if v.size != self.k:
                err = f"objective returned {v.size} values, expected {self.k}"
            elif not np.all(np.isfinite(v)):
                err = f"non-finite objective vector {v.tolist()}"
        except Exception as exc:  # noqa: BLE001 - any evaluation failure is quarantined
            err = f"{type(exc).__name__}: {exc}"
        self.timings["evaluate"] += time.perf_counter() - t0
        self.thetas.append(theta)
        self.phases.append(phase)
        if err is None:
            self.values.append(v)
            self.failed.append(False)
            self.consecutive_failures = 0
            return v
        self.values.append(None)
        self.failed.append(True)
        self.errors.append((len(self.thetas) - 1, err))
        self.consecutive_failures += 1
        return None

    def value_matrix(self) -> np.ndarray:
        k = self.k or 1
        return np.array([np.full(k, np.nan) if v is None else v for v in self.values]).reshape(-1, k)

    def ok(self):
        idx = [i for i, f in enumerate(self.failed) if not f]
        return np.array([self.thetas[i] for i in idx]), np.array([self.values[i] for i in idx])


def _check_abort(log: _Log, limit: int, strategy: str, seed: int, config: dict):
    if log.consecutive_failures >= limit:
        idx, msg = log.errors[-1]
        partial = None
        if not all(log.failed):
            partial = _finish(strategy, seed, config, log.thetas, log.value_matrix(), log.failed, log.phases,
                              stop_reason="aborted", timings=dict(log.timings))
        raise OptimizationAborted(
            f"{strategy}: {log.consecutive_failures} consecutive evaluation failures; last at "
            f"evaluation {idx}: {msg}",
            partial,
        )


def _box(d: int, bound: float) -> np.ndarray:
    if d < 1:
        raise InputError("d must be at least 1")
    return np.tile([-bound, bound], (d, 1))


def _median_distance(x: np.ndarray) -> float:
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(len(x), 1)]
    med = float(np.median(dist)) if dist.size else 1.0
    return med if med > 0 else 1.0


class _SurrogateBank:
    """One GP per objective; hyperparameters refit every ``refit_every`` calls."""

    def __init__(self, k: int, noise: float, refit_every: int, restarts: int, warping: str = "none"):
        self.warp = WARPINGS[warping]
        self.noise = noise
        self.refit_every = refit_every
        self.restarts = restarts
        self.kernels = [None] * k
        self.calls = 0

    def fit(self, x: np.ndarray, y: np.ndarray, seed: int) -> list:
        refit = self.calls % self.refit_every == 0
        self.calls += 1
        y = self.warp(y)
        models = []
        for j in range(y.shape[1]):
            kern = self.kernels[j]
            if kern is None:
                kern = gplib.KernelSpec.default(x.shape[1], _median_distance(x))
            if refit:
                kern = gplib.fit_hyperparameters(x, y[:, j], kern, noise=self.noise,
                                                 n_restarts=self.restarts, seed=seed + j)
            self.kernels[j] = kern
            models.append(gplib.fit(x, y[:, j], kern, self.noise))
        return models


def hv_contributions(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Hypervolume lost by removing each point of a mutually non-dominated set."""
    total = dominated_hypervolume(points, ref)
    keep = np.ones(len(points), dtype=bool)
    out = np.empty(len(points))
    for i in range(len(points)):
        keep[i] = False
        out[i] = total - (dominated_hypervolume(points[keep], ref) if keep.any() else 0.0)
        keep[i] = True
    return out


class _TrustRegion:
    """Box around the front member with the largest exclusive hypervolume.

    The side length doubles after ``success_tol`` consecutive evaluations that
    raise the PHV, halves after ``failure_tol`` consecutive ones that do not,
    and restarts from its initial value once it shrinks below the minimum.
    """

    def __init__(self, cfg: ParmisConfig):
        self.cfg = cfg
        self.length = cfg.tr_length_init
        self.successes = self.failures = 0

    def bounds(self, x: np.ndarray, y: np.ndarray, ref: np.ndarray, box: np.ndarray) -> np.ndarray:
        front = pareto_front(y)
        inside = np.all(front.points < ref, axis=1)
        if inside.any():
            contrib = hv_contributions(front.points[inside], ref)
            center = x[np.asarray(front.member_ids)[inside][int(np.argmax(contrib))]]
        else:
            center = x[front.member_ids[0]]
        lo, hi = box[:, 0], box[:, 1]
        half = 0.5 * self.length * (hi - lo)
        return np.column_stack([np.maximum(center - half, lo), np.minimum(center + half, hi)])

    def update(self, improved: bool) -> None:
        if improved:
            self.successes, self.failures = self.successes + 1, 0
        else:
            self.successes, self.failures = 0, self.failures + 1
        if self.successes >= self.cfg.tr_success_tol:
            self.length, self.successes = min(2 * self.length, 1.0), 0
        elif self.failures >= self.cfg.tr_failure_tol:
            self.length, self.failures = self.length / 2, 0
            if self.length < self.cfg.tr_length_min:
                self.length = self.cfg.tr_length_init


def _converged(phv: list, window: int, tol: float) -> bool:
    if len(phv) <= window:
        return False
    old, new = phv[-1 - window], phv[-1]
    if old <= 0:
        return False
    return (new - old) / old < tol


def run_parmis(objective: Objective, d: int, config: ParmisConfig = ParmisConfig()) -> RunRecord:
    """Information-gain multi-objective BO over policy parameters.

    Seeds the data with ``init_samples`` uniform draws, then repeats: fit one
    GP per objective, sample Pareto fronts of posterior function draws, pick
    the parameter vector with the largest information gain, evaluate it.

    In high dimension (see ``ParmisConfig.uses_trust_region``) the sampled
    fronts and the argmax are restricted to an adaptive box around the front
    member with the largest exclusive hypervolume; the utility is unchanged.
    """
    cfg = config
    bounds = _box(d, cfg.theta_bound)
    ss = np.random.SeedSequence(cfg.seed)
    init_rng = np.random.default_rng(ss.spawn(1)[0])
    log = _Log(objective, None, cfg.round_float32)
    snapshot = cfg.to_dict()

    for _ in range(cfg.init_samples):
        log.evaluate(-cfg.theta_bound + init_rng.random(d) * 2 * cfg.theta_bound, "init")
        _check_abort(log, cfg.max_consecutive_failures, "parmis", cfg.seed, snapshot)
    x, y = log.ok()
    if len(x) < 2:
        raise OptimizationAborted("parmis: fewer than two successful initial evaluations")
    ref = reference_point(y)
    phv = [dominated_hypervolume(pareto_front(y).points, ref)]
    bank = _SurrogateBank(y.shape[1], cfg.noise, cfg.refit_every, cfg.hyper_restarts, cfg.output_warping)
    stop, converged_at = "budget", None
    tr = _TrustRegion(cfg) if cfg.uses_trust_region(d) else None

    for it in range(cfg.max_iters):
        it_seed = int(np.random.SeedSequence([cfg.seed, it]).generate_state(1)[0])
        t0 = time.perf_counter()
        models = bank.fit(x, y, it_seed)
        t1 = time.perf_counter()
        region = bounds if tr is None else tr.bounds(x, y, ref, bounds)
        front_cfg = nsga2.Nsga2Config(region, cfg.front_population, cfg.front_generations, seed=it_seed)
        ctx = acq.build_context(models, front_cfg, it_seed, n_samples=cfg.front_samples,
                                num_features=cfg.rff_features)
        t2 = time.perf_counter()
        theta = acq.select_next(ctx, cfg.candidate_budget, it_seed, history=x, polish_steps=cfg.polish_steps)
        t3 = time.perf_counter()
        log.timings["fit"] += t1 - t0
        log.timings["sample_fronts"] += t2 - t1
        log.timings["select"] += t3 - t2
        log.evaluate(theta, "iter")
        _check_abort(log, cfg.max_consecutive_failures, "parmis", cfg.seed, snapshot)
        x, y = log.ok()
        phv.append(dominated_hypervolume(pareto_front(y).points, ref))
        if tr is not None:
            tr.update(phv[-1] > phv[-2])
        if converged_at is None and _converged(phv, cfg.convergence_window, cfg.convergence_tol):
            converged_at = len(log.thetas)
            if cfg.stop_on_convergence:
                stop = "converged"
                break

    return _finish("parmis", cfg.seed, snapshot, log.thetas, log.value_matrix(), log.failed, log.phases,
                   reference=ref, stop_reason=stop, converged_at=converged_at, timings=dict(log.timings))


def run_random_search(objective: Objective, d: int, budget: int, seed: int = 0, *,
                      theta_bound: float = 1.0, round_float32: bool = True) -> RunRecord:
    if budget < 1:
        raise InputError("budget must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    log = _Log(objective, None, round_float32)
    snapshot = {"budget": budget, "theta_bound": theta_bound, "seed": seed}
    for _ in range(budget):
        log.evaluate(-theta_bound + rng.random(d) * 2 * theta_bound, "init")
        _check_abort(log, 10, "random", seed, snapshot)
    return _finish("random", seed, snapshot, log.thetas, log.value_matrix(), log.failed, log.phases,
                   timings=dict(log.timings))


def simplex_grid(n: int) -> list[np.ndarray]:
    """``n`` evenly spaced two-objective weight vectors from (1, 0) to (0, 1)."""
    if n < 2:
        raise InputError("need at least two weight vectors")
    return [np.array([1 - t, t]) for t in np.linspace(0.0, 1.0, n)]


def expected_improvement(mean, std, best) -> np.ndarray:
    """EI for minimization; zero where the posterior is certain."""
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    safe = np.where(std > acq.SIGMA_FLOOR, std, 1.0)
    z = (best - mean) / safe
    ei = safe * (z * stats.norm.cdf(z) + stats.norm.pdf(z))
    return np.where(std > acq.SIGMA_FLOOR, ei, np.maximum(best - mean, 0.0))


def _ei_select(model, best, bounds, budget, rng, history, polish_steps):
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    d = len(lo)
    pool = np.vstack([lo + rng.random((budget, d)) * span,
                      np.clip(history + 0.1 * span * rng.standard_normal(history.shape), lo, hi)])

    def score(p):
        m, s = model.predict(p)
        return expected_improvement(m, s, best)

    sc = score(pool)
    i = int(np.argmax(sc))
    x, fx = pool[i].copy(), float(sc[i])
    step = 0.1 * span
    for _ in range(polish_steps):
        dirs = np.eye(d) if d <= 8 else rng.standard_normal((8, d))
        trials = np.clip(np.vstack([x + dirs * step, x - dirs * step]), lo, hi)
        ts = score(trials)
        j = int(np.argmax(ts))
        if ts[j] > fx:
            x, fx = trials[j].copy(), float(ts[j])
        else:
            step = step * 0.5
    return x


def run_scalarized(objective: Objective, d: int, weights: Sequence, per_weight_budget: int,
                   seed: int = 0, config: ParmisConfig = ParmisConfig()) -> RunRecord:
    """Single-objective BO with expected improvement, once per scalarization weight.

    Each weight gets its own ``init_samples`` uniform draws; objectives are
    min-max normalized using that initial sample before weighting. The front
    is computed over the union of every evaluation.
    """
    w_list = [np.asarray(w, dtype=float) for w in weights]
    if len(w_list) < 2:
        raise InputError("the weight grid needs at least two points")
    for w in w_list:
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise InputError(f"weights {w.tolist()} are not on the simplex")
    n_init = min(config.init_samples, per_weight_budget)
    bounds = _box(d, config.theta_bound)
    log = _Log(objective, None, config.round_float32)
    snapshot = {"weights": [w.tolist() for w in w_list], "per_weight_budget": per_weight_budget,
                "seed": seed, **{k: v for k, v in config.to_dict().items() if k != "seed"}}
    children = np.random.SeedSequence(seed).spawn(len(w_list))

    for wi, (w, child) in enumerate(zip(w_list, children)):
        rng = np.random.default_rng(child)
        start = len(log.thetas)
        for _ in range(n_init):
            log.evaluate(bounds[:, 0] + rng.random(d) * (bounds[:, 1] - bounds[:, 0]), "init")
            _check_abort(log, config.max_consecutive_failures, "scalarized", seed, snapshot)
        init_vals = np.array([v for v in log.values[start:] if v is not None])
        if len(init_vals) == 0:
            continue
        lo, hi = init_vals.min(0), init_vals.max(0)
        scale = np.where(hi > lo, hi - lo, 1.0)
        if w.size != init_vals.shape[1]:
            raise InputError(f"weight vector has {w.size} entries for {init_vals.shape[1]} objectives")
        bank = _SurrogateBank(1, config.noise, config.refit_every, config.hyper_restarts,
                              config.output_warping)
        for it in range(per_weight_budget - n_init):
            idx = [i for i in range(start, len(log.thetas)) if not log.failed[i]]
            xs = np.array([log.thetas[i] for i in idx])
            ys = (np.array([log.values[i] for i in idx]) - lo) / scale @ w
            it_seed = int(np.random.SeedSequence([seed, wi, it]).generate_state(1)[0])
            t0 = time.perf_counter()
            (model,) = bank.fit(xs, ys[:, None], it_seed)
            theta = _ei_select(model, bank.warp(ys[:, None]).min(), bounds, config.candidate_budget,
                               np.random.default_rng(it_seed), xs, config.polish_steps)
            log.timings["fit_select"] += time.perf_counter() - t0
            log.evaluate(theta, f"w{wi}")
            _check_abort(log, config.max_consecutive_failures, "scalarized", seed, snapshot)

    return _finish("scalarized", seed, snapshot, log.thetas, log.value_matrix(), log.failed, log.phases,
                   timings=dict(log.timings))


def run_nsga2_direct(objective: Objective, d: int, population_size: int, generations: int,
                     seed: int = 0, *, theta_bound: float = 1.0, round_float32: bool = True) -> RunRecord:
    """NSGA-II on the true objective; every call counts against the budget."""
    log = _Log(objective, None, round_float32)
    cfg = nsga2.Nsga2Config(_box(d, theta_bound), population_size, generations, seed=seed)
    snapshot = {"population_size": population_size, "generations": generations,
                "theta_bound": theta_bound, "seed": seed}

    def wrapped(theta):
        v = log.evaluate(theta, "nsga2")
        if v is None:
            return np.full(log.k or 2, np.nan)
        return v

    nsga2.optimize(wrapped, cfg)
    return _finish("nsga2", seed, snapshot, log.thetas, log.value_matrix(), log.failed, log.phases,
                   timings=dict(log.timings))


def governor_points(apps, objectives: Sequence[str] = ("time", "energy"),
                    cal: socsim.Calibration = socsim.DEFAULT_CALIBRATION) -> list[tuple[str, np.ndarray]]:
    """Objective vector of each stock governor on ``apps``."""
    objs = socsim.check_objectives(objectives)
    return [(name, socsim.simulate(governors.make(name), apps, cal, keep_trace=False).objectives(objs))
            for name in governors.GOVERNORS]


def socsim_objective(apps, objectives: Sequence[str] = ("time", "energy"),
                     cal: socsim.Calibration = socsim.DEFAULT_CALIBRATION, arch=None) -> Objective:
    """Closure evaluating a policy vector on the simulator."""
    objs = socsim.check_objectives(objectives)
    apps = list(apps)
    if not apps:
        raise InputError("need at least one application")

    def objective(theta):
        return socsim.evaluate(theta, apps, objs, cal, arch)

    return objective
