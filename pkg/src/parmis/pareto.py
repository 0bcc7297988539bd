"""Pareto dominance, front extraction and hypervolume.

Everything here minimizes. Objectives that are naturally maximized (PPW) are
negated before they reach this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError

# Monte-Carlo sample count used for k >= 4.
MC_SAMPLES = 200_000


@dataclass(frozen=True)
class ParetoFront:
    """Mutually non-dominated objective vectors, lexicographically sorted.

    ``member_ids`` index into whatever collection the points came from.
    """

    points: np.ndarray
    member_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.member_ids)

    @property
    def k(self) -> int:
        return self.points.shape[1]


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, ParetoFront):
        return points.points
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"expected a (n, k) array of objective vectors, got shape {arr.shape}")
    return arr


def dominates(a, b) -> bool:
    """True if ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputError(f"objective vectors differ in length: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def pareto_front(points, ids: Sequence[int] | None = None) -> ParetoFront:
    """Non-dominated subset of ``points``.

    Duplicated vectors collapse onto their first occurrence. The sweep relies
    on the fact that a dominating vector always sorts lexicographically before
    the vector it dominates, so each candidate only needs checking against the
    front accumulated so far.
    """
    pts = _as_matrix(points)
    n = pts.shape[0]
    if n == 0:
        raise InputError("pareto_front needs at least one point")
    if ids is None:
        ids = list(range(n))
    elif len(ids) != n:
        raise InputError("ids and points differ in length")

    # np.lexsort is stable and sorts by the last key first.
    order = np.lexsort(tuple(pts[:, j] for j in reversed(range(pts.shape[1]))))
    kept: list[int] = []
    for idx in order:
        p = pts[idx]
        if kept and np.any(np.all(pts[kept] <= p, axis=1)):
            continue
        kept.append(int(idx))
    return ParetoFront(points=pts[kept].copy(), member_ids=[ids[i] for i in kept])


def _check_reference(pts: np.ndarray, ref: np.ndarray) -> None:
    if ref.shape != (pts.shape[1],):
        raise InputError(f"reference has length {ref.size}, front has k={pts.shape[1]}")
    bad = np.flatnonzero(~np.all(pts < ref, axis=1))
    if bad.size:
        raise InputError(
            f"point {pts[bad[0]].tolist()} does not strictly dominate reference {ref.tolist()}"
        )


def _hv2d(pts: np.ndarray, ref: np.ndarray) -> float:
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    volume = 0.0
    best_y = ref[1]
    for x, y in pts:
        if y >= best_y:
            continue
        # horizontal strip between this step and the previous one
        volume += (ref[0] - x) * (best_y - y)
        best_y = y
    return float(volume)


def _hv3d(pts: np.ndarray, ref: np.ndarray) -> float:
    pts = pts[np.argsort(pts[:, 2], kind="stable")]
    volume = 0.0
    for i in range(pts.shape[0]):
        z_lo = pts[i, 2]
        z_hi = pts[i + 1, 2] if i + 1 < pts.shape[0] else ref[2]
        if z_hi <= z_lo:
            continue
        volume += _hv2d(pts[: i + 1, :2], ref[:2]) * (z_hi - z_lo)
    return float(volume)


def _hv_monte_carlo(pts: np.ndarray, ref: np.ndarray, n_samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    lo = pts.min(axis=0)
    box = float(np.prod(ref - lo))
    hits = 0
    chunk = 20_000
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        u = lo + rng.random((m, pts.shape[1])) * (ref - lo)
        covered = np.zeros(m, dtype=bool)
        for p in pts:
            covered |= np.all(u >= p, axis=1)
        hits += int(covered.sum())
    return box * hits / n_samples


def hypervolume(front, reference, n_samples: int = MC_SAMPLES, seed: int = 0) -> float:
    """Volume dominated by ``front`` and bounded by ``reference``.

    Exact for k = 2 (staircase sweep) and k = 3 (slicing along the last
    objective); Monte-Carlo with ``n_samples`` draws for k >= 4. Dominated
    points may be passed in and contribute nothing.
    """
    pts = _as_matrix(front)
    ref = np.asarray(reference, dtype=float)
    if pts.shape[0] == 0:
        return 0.0
    _check_reference(pts, ref)
    pts = pareto_front(pts).points
    k = pts.shape[1]
    if k == 1:
        return float(ref[0] - pts[:, 0].min())
    if k == 2:
        return _hv2d(pts, ref)
    if k == 3:
        return _hv3d(pts, ref)
    return _hv_monte_carlo(pts, ref, n_samples, seed)


def reference_point(*point_sets, margin: float = 0.1) -> np.ndarray:
    """Shared reference: componentwise max over every set, pushed out by ``margin``.

    For positive maxima this is ``(1 + margin) * max``. Negative or zero maxima
    (negated PPW) are pushed by ``margin * |max|`` instead so the reference
    stays strictly worse than every point.
    """
    stacked = np.vstack([_as_matrix(p) for p in point_sets if len(_as_matrix(p))])
    hi = stacked.max(axis=0)
    lo = stacked.min(axis=0)
    pad = margin * np.abs(hi)
    fallback = np.maximum(margin * (hi - lo), 1e-12)
    pad = np.where(pad > 0, pad, fallback)
    return hi + pad


def dominated_hypervolume(points, reference) -> float:
    """Hypervolume of whichever points strictly dominate ``reference``; the rest are ignored."""
    pts = _as_matrix(points)
    ref = np.asarray(reference, dtype=float)
    inside = pts[np.all(pts < ref, axis=1)]
    if inside.shape[0] == 0:
        return 0.0
    return hypervolume(inside, ref)


def normalized_phv(fronts: Mapping[str, object], reference, baseline: str = "parmis") -> dict:
    """PHV of each method divided by the PHV of ``baseline`` (which maps to 1.0)."""
    if baseline not in fronts:
        raise InputError(f"normalized PHV needs a '{baseline}' entry; got {sorted(fronts)}")
    ref = np.asarray(reference, dtype=float)
    raw = {name: hypervolume(front, ref) for name, front in fronts.items()}
    denom = raw[baseline]
    if denom <= 0:
        raise InputError(f"baseline '{baseline}' has zero hypervolume")
    return {name: (1.0 if name == baseline else value / denom) for name, value in raw.items()}
