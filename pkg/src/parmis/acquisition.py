"""Information gain about the optimal Pareto front, and its maximization.

All arithmetic in this module uses the maximization convention: objectives
flagged in ``sign_flips`` (every minimized objective) are negated before a
Pareto-front sample is drawn and before posterior means enter ``gamma``.
Under that convention each objective value at an unseen policy is bounded
above by the largest value the sampled front attains in that objective, so
its posterior becomes a Gaussian truncated from above, and the utility is the
summed entropy drop caused by that truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from . import gp as gplib
from . import nsga2
from .errors import InputError

HALF_LOG_2PI_E = 0.5 * (1.0 + np.log(2.0 * np.pi))
SIGMA_FLOOR = 1e-12
DEFAULT_RFF_FEATURES = 256


@dataclass(frozen=True)
class ParetoFrontSample:
    """One sampled Pareto front ``{z_1..z_m}``, maximization convention."""

    vectors: np.ndarray
    thetas: np.ndarray | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", v)
        if v.shape[0] < 1:
            raise InputError("a Pareto-front sample needs at least one vector")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def componentwise_max(self) -> np.ndarray:
        return self.vectors.max(axis=0)


@dataclass(frozen=True)
class AcquisitionContext:
    models: tuple
    samples: tuple
    sign_flips: tuple
    bounds: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "sign_flips", tuple(bool(s) for s in self.sign_flips))
        if not self.samples:
            raise InputError("need at least one Pareto-front sample")
        k = len(self.models)
        if len(self.sign_flips) != k or any(s.vectors.shape[1] != k for s in self.samples):
            raise InputError("models, samples and sign_flips disagree on the number of objectives")
        if self.bounds is not None:
            object.__setattr__(self, "bounds", np.atleast_2d(np.asarray(self.bounds, dtype=float)))

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def dim(self) -> int:
        return self.models[0].dim


def gaussian_entropy(stds) -> float:
    """Differential entropy of independent Gaussians with the given standard deviations."""
    s = np.atleast_1d(np.asarray(stds, dtype=float))
    if np.any(~(s > 0)):
        raise InputError("standard deviations must be positive")
    return float(s.size * HALF_LOG_2PI_E + np.log(s).sum())


def truncated_entropy_term(gamma):
    """Entropy lost when a standard normal is truncated from above at ``gamma``.

    ``gamma * pdf(gamma) / (2 * cdf(gamma)) - log cdf(gamma)``, evaluated with
    a log-space CDF so very negative ``gamma`` neither underflows nor yields
    NaN. ``+inf`` maps to 0. Scalar in, scalar out.
    """
    g = np.asarray(gamma, dtype=float)
    out = np.zeros_like(g)
    ok = np.isfinite(g)
    if np.any(ok):
        gg = g[ok]
        log_cdf = special.log_ndtr(gg)
        log_pdf = -0.5 * gg * gg - 0.5 * np.log(2.0 * np.pi)
        ratio = np.exp(log_pdf - log_cdf)
        out[ok] = np.maximum(0.5 * gg * ratio - log_cdf, 0.0)
    neg_inf = np.isneginf(g)
    out[neg_inf] = np.inf
    return float(out) if out.ndim == 0 else out


def _max_convention(values: np.ndarray, sign_flips: Sequence[bool]) -> np.ndarray:
    flips = np.where(np.asarray(sign_flips, dtype=bool), -1.0, 1.0)
    return values * flips


def sample_pareto_front(
    models: Sequence[gplib.GaussianProcess],
    nsga2_config: nsga2.Nsga2Config,
    seed: int,
    *,
    sign_flips: Sequence[bool] | None = None,
    num_features: int = DEFAULT_RFF_FEATURES,
) -> ParetoFrontSample:
    """Draw one function per model and solve the sampled multi-objective problem.

    The NSGA-II population is seeded with the best training inputs under the
    sampled functions, so the sampled front is never worse than the sampled
    values at already-evaluated policies.
    """
    models = list(models)
    if not models:
        raise InputError("need at least one model")
    flips = [True] * len(models) if sign_flips is None else list(sign_flips)
    ss = np.random.SeedSequence(seed)
    sub = ss.spawn(len(models) + 1)
    draws = [
        gplib.sample_posterior_function(m, num_features, int(s.generate_state(1)[0]))
        for m, s in zip(models, sub[:-1])
    ]

    def minimize_form(x):
        vals = np.column_stack([f(x) for f in draws])
        return -_max_convention(vals, flips)

    train = models[0].inputs
    fronts = nsga2.non_dominated_sort(minimize_form(train))
    order = [i for f in fronts for i in f][: nsga2_config.population_size // 2]
    cfg = nsga2.Nsga2Config(
        bounds=nsga2_config.bounds,
        population_size=nsga2_config.population_size,
        generations=nsga2_config.generations,
        crossover_prob=nsga2_config.crossover_prob,
        crossover_eta=nsga2_config.crossover_eta,
        mutation_prob=nsga2_config.mutation_prob,
        mutation_eta=nsga2_config.mutation_eta,
        seed=int(sub[-1].generate_state(1)[0]),
    )
    if len(models) == 1:
        # Single objective: the "front" is the best point found.
        vals = minimize_form(train)
        best = int(np.argmin(vals[:, 0]))
        return ParetoFrontSample(-vals[best : best + 1], train[best : best + 1])
    res = nsga2.optimize(minimize_form, cfg, vectorized=True, initial_population=train[order])
    return ParetoFrontSample(-res.values, res.thetas)


def build_context(
    models: Sequence[gplib.GaussianProcess],
    nsga2_config: nsga2.Nsga2Config,
    seed: int,
    *,
    n_samples: int = 1,
    sign_flips: Sequence[bool] | None = None,
    num_features: int = DEFAULT_RFF_FEATURES,
) -> AcquisitionContext:
    flips = [True] * len(models) if sign_flips is None else list(sign_flips)
    seeds = np.random.SeedSequence(seed).generate_state(n_samples)
    samples = [
        sample_pareto_front(models, nsga2_config, int(s), sign_flips=flips, num_features=num_features)
        for s in seeds
    ]
    return AcquisitionContext(models, samples, flips, nsga2_config.bounds)


def utility_batch(thetas, context: AcquisitionContext) -> np.ndarray:
    """Vectorized :func:`utility` over a (n, d) batch."""
    x = np.atleast_2d(np.asarray(thetas, dtype=float))
    if x.shape[1] != context.dim:
        raise InputError(f"theta has dimension {x.shape[1]}, models expect {context.dim}")
    total = np.zeros(x.shape[0])
    for j, (model, flip) in enumerate(zip(context.models, context.sign_flips)):
        # the truncation bounds the noise-free function value, so use its std
        mean, std = model.predict(x, latent=True)
        mean = -mean if flip else mean
        known = std <= SIGMA_FLOOR
        safe_std = np.where(known, 1.0, std)
        for sample in context.samples:
            gamma = (sample.componentwise_max[j] - mean) / safe_std
            term = truncated_entropy_term(gamma)
            total += np.where(known, 0.0, term)
    return total / len(context.samples)


def utility(theta, context: AcquisitionContext) -> float:
    """Monte-Carlo information gain about the optimal Pareto front at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise InputError("utility takes a single parameter vector; use utility_batch")
    return float(utility_batch(theta[None, :], context)[0])


def _row_keys(rows) -> list[bytes]:
    r = np.atleast_2d(np.asarray(rows, dtype=float)).astype(np.float32)
    return [row.tobytes() for row in r]


def select_next(
    context: AcquisitionContext,
    candidate_budget: int = 512,
    seed: int = 0,
    *,
    history=None,
    bounds=None,
    polish_steps: int = 20,
    n_directions: int = 8,
) -> np.ndarray:
    """Approximate argmax of the utility over the box.

    Pool: ``candidate_budget`` uniform draws, then every ``history`` row with
    Gaussian noise of 0.1 x range. The best pool member (lowest index on ties)
    is then polished by a pattern search that only accepts strict improvements.
    Evaluations are deterministic, so candidates that repeat a ``history`` row
    (compared at float32 precision) are never chosen while any other exists.
    """
    if candidate_budget < 1:
        raise InputError("candidate_budget must be at least 1")
    b = bounds if bounds is not None else context.bounds
    if b is not None:
        b = np.atleast_2d(np.asarray(b, dtype=float))
    if b is None or b.shape != (context.dim, 2):
        raise InputError("select_next needs (d, 2) bounds matching the models")
    lo, hi = b[:, 0], b[:, 1]
    span = hi - lo
    rng = np.random.default_rng(seed)

    pool = [lo + rng.random((candidate_budget, context.dim)) * span]
    if history is not None and len(history):
        h = np.atleast_2d(np.asarray(history, dtype=float))
        pool.append(np.clip(h + 0.1 * span * rng.standard_normal(h.shape), lo, hi))
    pool = np.vstack(pool)
    seen = _row_keys(history) if history is not None and len(history) else set()

    def score(cands):
        sc = utility_batch(cands, context)
        if seen:
            repeat = np.array([k in seen for k in _row_keys(cands)])
            sc = np.where(repeat, -np.inf, sc)
        return sc

    scores = score(pool)
    if not np.any(np.isfinite(scores)):
        scores = utility_batch(pool, context)
    best = int(np.argmax(scores))
    x, fx = pool[best].copy(), float(scores[best])

    step = 0.1 * span
    d = context.dim
    for _ in range(polish_steps):
        if d <= n_directions:
            dirs = np.eye(d)
        else:
            dirs = rng.standard_normal((n_directions, d))
        trials = np.clip(np.vstack([x + dirs * step, x - dirs * step]), lo, hi)
        ts = score(trials)
        j = int(np.argmax(ts))
        if ts[j] > fx:
            x, fx = trials[j].copy(), float(ts[j])
        else:
            step = step * 0.5
    return x
