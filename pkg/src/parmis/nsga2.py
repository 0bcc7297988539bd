"""NSGA-II (Deb et al. 2002) over box-bounded real vectors.

Used twice: to extract Pareto-front samples from posterior function draws,
and directly on the simulator as an evolutionary baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .pareto import ParetoFront, pareto_front


@dataclass(frozen=True)
class Nsga2Config:
    """Run settings. ``mutation_prob=None`` means 1/d."""

    bounds: np.ndarray
    population_size: int = 100
    generations: int = 100
    crossover_prob: float = 0.9
    crossover_eta: float = 15.0
    mutation_prob: float | None = None
    mutation_eta: float = 20.0
    seed: int = 0

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        object.__setattr__(self, "bounds", b)
        if b.ndim != 2 or b.shape[1] != 2:
            raise InputError("bounds must be a (d, 2) array of [lo, hi] rows")
        if np.any(b[:, 0] >= b[:, 1]):
            raise InputError("every bound needs lo < hi")
        if self.population_size < 4 or self.population_size % 2:
            raise InputError("population_size must be even and at least 4")
        if self.generations < 0:
            raise InputError("generations must be non-negative")
        if not 0 <= self.crossover_prob <= 1:
            raise InputError("crossover_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0 <= self.mutation_prob <= 1:
            raise InputError("mutation_prob must lie in [0, 1]")
        if self.crossover_eta <= 0 or self.mutation_eta <= 0:
            raise InputError("distribution indices must be positive")

    @classmethod
    def uniform_box(cls, dim: int, lo: float = -5.0, hi: float = 5.0, **kwargs):
        return cls(bounds=np.tile([lo, hi], (dim, 1)), **kwargs)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


def _dominance_matrix(values: np.ndarray) -> np.ndarray:
    le = np.all(values[:, None, :] <= values[None, :, :], axis=2)
    lt = np.any(values[:, None, :] < values[None, :, :], axis=2)
    return le & lt


def non_dominated_sort(points) -> list[list[int]]:
    """Fast non-dominated sorting: list of fronts, each a sorted list of indices."""
    values = np.asarray(points, dtype=float)
    if values.ndim != 2 or values.shape[0] == 0:
        raise InputError("non_dominated_sort needs a non-empty (n, k) array")
    dom = _dominance_matrix(values)
    counts = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while current.size:
        fronts.append(current.tolist())
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def crowding_distance(front_points) -> np.ndarray:
    """Crowding distance of each member of one front.

    Boundary members of every objective get ``inf``; an objective with zero
    range adds nothing to interior members.
    """
    values = np.asarray(front_points, dtype=float)
    n, k = values.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for j in range(k):
        order = np.argsort(values[:, j], kind="stable")
        col = values[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = col[-1] - col[0]
        if not np.isfinite(span) or span <= 0:
            continue
        dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


@dataclass
class Nsga2Result:
    """Final non-dominated set plus the full evaluation log."""

    thetas: np.ndarray
    values: np.ndarray
    front: ParetoFront
    evaluated_thetas: np.ndarray
    evaluated_values: np.ndarray
    history: list = field(default_factory=list)

    @property
    def n_evals(self) -> int:
        return self.evaluated_thetas.shape[0]


def _rank_and_crowd(values: np.ndarray):
    fronts = non_dominated_sort(values)
    rank = np.empty(len(values), dtype=int)
    crowd = np.empty(len(values))
    for r, members in enumerate(fronts):
        rank[members] = r
        with np.errstate(invalid="ignore"):
            crowd[members] = np.nan_to_num(crowding_distance(values[members]), nan=0.0, posinf=np.inf)
    return fronts, rank, crowd


def _tournament(rng, rank, crowd, n_select):
    a = rng.integers(0, rank.size, n_select)
    b = rng.integers(0, rank.size, n_select)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def _sbx(rng, p1, p2, cfg: Nsga2Config):
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    c1, c2 = p1.copy(), p2.copy()
    n, d = p1.shape
    do_pair = rng.random(n) < cfg.crossover_prob
    u = rng.random((n, d))
    swap_var = rng.random((n, d)) <= 0.5
    eta = cfg.crossover_eta
    gap = np.abs(p1 - p2)
    mask = do_pair[:, None] & swap_var & (gap > 1e-14)
    um = u[mask]
    beta = np.where(um <= 0.5, (2 * um) ** (1 / (eta + 1)), (1 / (2 * (1 - um))) ** (1 / (eta + 1)))
    mean = 0.5 * (p1[mask] + p2[mask])
    half = 0.5 * beta * gap[mask]
    c1[mask] = mean - half
    c2[mask] = mean + half
    # randomly exchange which child receives which side
    flip = mask & (rng.random((n, d)) < 0.5)
    c1[flip], c2[flip] = c2[flip], c1[flip].copy()
    return np.clip(c1, lo, hi), np.clip(c2, lo, hi)


def _polynomial_mutation(rng, x, cfg: Nsga2Config):
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    n, d = x.shape
    pm = cfg.mutation_prob if cfg.mutation_prob is not None else 1.0 / d
    eta = cfg.mutation_eta
    mutate = rng.random((n, d)) < pm
    u = rng.random((n, d))
    rows, cols = np.nonzero(mutate)
    um = u[rows, cols]
    span = (hi - lo)[cols]
    xm = x[rows, cols]
    d1 = (xm - lo[cols]) / span
    d2 = (hi[cols] - xm) / span
    power = 1.0 / (eta + 1)
    left = (2 * um + (1 - 2 * um) * (1 - d1) ** (eta + 1)) ** power - 1
    right = 1 - (2 * (1 - um) + 2 * (um - 0.5) * (1 - d2) ** (eta + 1)) ** power
    out = x.copy()
    out[rows, cols] = xm + np.where(um < 0.5, left, right) * span
    return np.clip(out, lo, hi)


def _make_evaluator(objectives, vectorized: bool) -> Callable[[np.ndarray], np.ndarray]:
    if callable(objectives):
        fn = objectives
        if vectorized:
            return lambda pop: np.asarray(fn(pop), dtype=float)
        return lambda pop: np.array([np.asarray(fn(x), dtype=float) for x in pop])
    funcs = list(objectives)
    if len(funcs) < 2:
        raise InputError("NSGA-II needs at least two objectives")
    if vectorized:
        return lambda pop: np.column_stack([np.asarray(f(pop), dtype=float) for f in funcs])
    return lambda pop: np.array([[float(f(x)) for f in funcs] for x in pop])


def optimize(
    objectives: Sequence[Callable] | Callable,
    config: Nsga2Config,
    *,
    vectorized: bool = False,
    initial_population=None,
    record_history: bool = False,
) -> Nsga2Result:
    """Minimize several objectives with NSGA-II.

    ``objectives`` is either a list of scalar functions of one parameter
    vector, or a single function returning the whole objective vector. With
    ``vectorized=True`` the functions receive the full (n, d) population.
    Non-finite objective values quarantine that individual at ``+inf``.

    ``initial_population`` rows (clipped to bounds) seed the first generation;
    the remainder is drawn uniformly.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    n, d = cfg.population_size, cfg.dim
    evaluate = _make_evaluator(objectives, vectorized)

    pop = lo + rng.random((n, d)) * (hi - lo)
    if initial_population is not None:
        seeds = np.atleast_2d(np.asarray(initial_population, dtype=float))[:n]
        if seeds.shape[1] != d:
            raise InputError(f"initial population has dimension {seeds.shape[1]}, bounds have {d}")
        pop[: seeds.shape[0]] = np.clip(seeds, lo, hi)

    def run_eval(x):
        vals = evaluate(x)
        if vals.ndim != 2 or vals.shape[0] != x.shape[0]:
            raise InputError(f"objective evaluation returned shape {vals.shape}")
        bad = ~np.all(np.isfinite(vals), axis=1)
        vals[bad] = np.inf
        return vals

    vals = run_eval(pop)
    log_x, log_v = [pop.copy()], [vals.copy()]
    history = []
    _, rank, crowd = _rank_and_crowd(vals)
    if record_history:
        history.append(vals[rank == 0].copy())

    for _ in range(cfg.generations):
        parents = _tournament(rng, rank, crowd, n)
        p1, p2 = pop[parents[0::2]], pop[parents[1::2]]
        c1, c2 = _sbx(rng, p1, p2, cfg)
        children = _polynomial_mutation(rng, np.vstack([c1, c2]), cfg)
        child_vals = run_eval(children)
        log_x.append(children.copy())
        log_v.append(child_vals.copy())

        merged_x = np.vstack([pop, children])
        merged_v = np.vstack([vals, child_vals])
        fronts, m_rank, m_crowd = _rank_and_crowd(merged_v)
        chosen: list[int] = []
        for members in fronts:
            if len(chosen) + len(members) <= n:
                chosen.extend(members)
                continue
            members = np.asarray(members)
            order = np.argsort(-m_crowd[members], kind="stable")
            chosen.extend(members[order[: n - len(chosen)]].tolist())
            break
        chosen_arr = np.asarray(chosen)
        pop, vals = merged_x[chosen_arr], merged_v[chosen_arr]
        rank, crowd = m_rank[chosen_arr], m_crowd[chosen_arr]
        if record_history:
            history.append(vals[rank == 0].copy())

    finite = np.all(np.isfinite(vals), axis=1)
    idx = np.flatnonzero(finite)
    if idx.size == 0:
        idx = np.arange(n)
    front = pareto_front(vals[idx], ids=idx.tolist())
    members = np.asarray(front.member_ids)
    return Nsga2Result(
        thetas=pop[members],
        values=vals[members],
        front=front,
        evaluated_thetas=np.vstack(log_x),
        evaluated_values=np.vstack(log_v),
        history=history,
    )
