"""Parametric DRM policies: four small MLPs over counter features.

A policy is a flat vector ``theta``. The layout is fixed: heads in the order
(a_big, a_little, f_big, f_little); within a head, layers input-to-output;
within a layer, the (in, out) weight matrix in row-major order followed by
the bias vector.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InputError

HEAD_NAMES = ("a_big", "a_little", "f_big", "f_little")
BIG_FREQS_MHZ = tuple(range(200, 2001, 100))
LITTLE_FREQS_MHZ = tuple(range(200, 1401, 100))
N_FEATURES = 12

FEATURE_NAMES = (
    "instructions",
    "cycles",
    "branch_mispredictions",
    "l2_misses",
    "data_memory_accesses",
    "noncache_external_requests",
    "little_utilization_sum",
    "big0_utilization",
    "big1_utilization",
    "big2_utilization",
    "big3_utilization",
    "chip_power",
)


class DrmDecision(NamedTuple):
    """Active core counts and cluster frequencies for one epoch."""

    a_big: int
    a_little: int
    f_big: int  # MHz
    f_little: int  # MHz

    @classmethod
    def from_indices(cls, i_big: int, i_little: int, i_fbig: int, i_flittle: int) -> "DrmDecision":
        return cls(int(i_big), int(i_little) + 1, BIG_FREQS_MHZ[i_fbig], LITTLE_FREQS_MHZ[i_flittle])

    def validate(self) -> "DrmDecision":
        if not 0 <= self.a_big <= 4 or not 1 <= self.a_little <= 4:
            raise InputError(f"core counts out of range in {self}")
        if self.f_big not in BIG_FREQS_MHZ or self.f_little not in LITTLE_FREQS_MHZ:
            raise InputError(f"frequency off the DVFS grid in {self}")
        return self


def all_decisions() -> Iterator[DrmDecision]:
    """Every point of the decision space (5 x 4 x 19 x 13 = 4940)."""
    for a_big, a_little, fb, fl in itertools.product(
        range(5), range(1, 5), BIG_FREQS_MHZ, LITTLE_FREQS_MHZ
    ):
        yield DrmDecision(a_big, a_little, fb, fl)


@dataclass(frozen=True)
class PolicyArchitecture:
    input_dim: int = N_FEATURES
    hidden: tuple = (8, 8)
    heads: tuple = (5, 4, 19, 13)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden) or any(h < 1 for h in self.heads):
            raise InputError("layer sizes must be positive")

    def layer_shapes(self, head: int) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, self.heads[head]]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def is_drm(self) -> bool:
        return self.heads == (5, 4, 19, 13)


def param_count(arch: PolicyArchitecture) -> int:
    return sum((i + 1) * o for h in range(len(arch.heads)) for i, o in arch.layer_shapes(h))


def decode(theta, arch: PolicyArchitecture) -> list[list[tuple[np.ndarray, np.ndarray]]]:
    """Split ``theta`` into per-head lists of (weights, bias) pairs. Views, not copies."""
    theta = np.asarray(theta, dtype=float)
    d = param_count(arch)
    if theta.ndim != 1 or theta.size != d:
        raise InputError(f"policy vector has length {theta.size}, expected d={d}")
    heads, pos = [], 0
    for h in range(len(arch.heads)):
        layers = []
        for i, o in arch.layer_shapes(h):
            w = theta[pos : pos + i * o].reshape(i, o)
            pos += i * o
            b = theta[pos : pos + o]
            pos += o
            layers.append((w, b))
        heads.append(layers)
    return heads


def encode(heads, arch: PolicyArchitecture) -> np.ndarray:
    parts = []
    for h, layers in enumerate(heads):
        shapes = arch.layer_shapes(h)
        if len(layers) != len(shapes):
            raise InputError(f"head {h} has {len(layers)} layers, expected {len(shapes)}")
        for (w, b), (i, o) in zip(layers, shapes):
            w, b = np.asarray(w, dtype=float), np.asarray(b, dtype=float)
            if w.shape != (i, o) or b.shape != (o,):
                raise InputError(f"head {h} layer shape {w.shape}/{b.shape}, expected {(i, o)}/{(o,)}")
            parts += [w.ravel(), b]
    return np.concatenate(parts)


def head_logits(theta, state, arch: PolicyArchitecture, *, heads=None) -> list[np.ndarray]:
    x = np.asarray(state, dtype=float)
    if x.shape != (arch.input_dim,):
        raise InputError(f"state has shape {x.shape}, expected ({arch.input_dim},)")
    out = []
    for layers in heads if heads is not None else decode(theta, arch):
        h = x
        for w, b in layers[:-1]:
            h = np.maximum(h @ w + b, 0.0)
        w, b = layers[-1]
        out.append(h @ w + b)
    return out


def head_choices(theta, state, arch: PolicyArchitecture, *, heads=None) -> list[int]:
    """Greedy index per head. Softmax is monotone, so argmax of the logits suffices."""
    choices = []
    names = HEAD_NAMES if arch.is_drm else range(len(arch.heads))
    for name, logits in zip(names, head_logits(theta, state, arch, heads=heads)):
        if not np.all(np.isfinite(logits)):
            raise InputError(f"non-finite output in policy head {name}")
        choices.append(int(np.argmax(logits)))
    return choices


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


@dataclass(frozen=True)
class Policy:
    """A DRM policy: architecture plus flat parameters."""

    theta: np.ndarray
    arch: PolicyArchitecture = field(default_factory=PolicyArchitecture)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if not self.arch.is_drm:
            raise InputError("DRM policies need heads (5, 4, 19, 13)")
        d = param_count(self.arch)
        if theta.shape != (d,):
            raise InputError(f"policy vector has length {theta.size}, expected d={d}")
        object.__setattr__(self, "_heads", decode(theta, self.arch))

    @property
    def d(self) -> int:
        return self.theta.size

    def decide(self, state) -> DrmDecision:
        return DrmDecision.from_indices(*head_choices(self.theta, state, self.arch, heads=self._heads))

    def reset(self) -> None:
        """Policies are stateless; present so policies and governors share one interface."""


def decide(theta, state, arch: PolicyArchitecture | None = None) -> DrmDecision:
    arch = arch or PolicyArchitecture()
    return DrmDecision.from_indices(*head_choices(theta, state, arch))


# Policy file: magic, format version, architecture, d, then little-endian float32 theta.
MAGIC = b"PRMS"
FORMAT_VERSION = 1


def to_bytes(policy: Policy) -> bytes:
    a = policy.arch
    header = struct.pack("<4sHH", MAGIC, FORMAT_VERSION, a.input_dim)
    header += struct.pack(f"<H{len(a.hidden)}H", len(a.hidden), *a.hidden)
    header += struct.pack(f"<H{len(a.heads)}H", len(a.heads), *a.heads)
    header += struct.pack("<I", policy.d)
    return header + policy.theta.astype("<f4").tobytes()


def from_bytes(blob: bytes) -> Policy:
    try:
        magic, version, input_dim = struct.unpack_from("<4sHH", blob, 0)
        if magic != MAGIC:
            raise InputError("not a policy file (bad magic)")
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported policy file version {version}")
        pos = 8
        (nh,) = struct.unpack_from("<H", blob, pos)
        hidden = struct.unpack_from(f"<{nh}H", blob, pos + 2)
        pos += 2 + 2 * nh
        (nk,) = struct.unpack_from("<H", blob, pos)
        heads = struct.unpack_from(f"<{nk}H", blob, pos + 2)
        pos += 2 + 2 * nk
        (d,) = struct.unpack_from("<I", blob, pos)
        pos += 4
    except struct.error as exc:
        raise InputError(f"truncated policy header: {exc}") from None
    arch = PolicyArchitecture(input_dim, hidden, heads)
    if d != param_count(arch):
        raise InputError(f"header says d={d} but architecture implies {param_count(arch)}")
    body = blob[pos:]
    if len(body) != 4 * d:
        raise InputError(f"policy body has {len(body)} bytes, expected {4 * d}")
    theta = np.frombuffer(body, dtype="<f4").astype(float)
    return Policy(theta, arch)


def save(policy: Policy, path) -> None:
    Path(path).write_bytes(to_bytes(policy))


def load(path) -> Policy:
    return from_bytes(Path(path).read_bytes())


def float32_exact(theta) -> np.ndarray:
    """Round to float32 precision so a saved policy reproduces its evaluations exactly."""
    return np.asarray(theta, dtype=float).astype(np.float32).astype(float)
