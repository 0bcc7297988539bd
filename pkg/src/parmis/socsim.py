"""Deterministic big.LITTLE SoC simulator with epoch-level counter feedback.

Each application is a list of epochs. The controller (a policy or a
governor) sees the normalized counters of the previous epoch and picks the
decision for the next one; the first epoch of every application sees a fixed
boot state (all zeros).

Performance model, per active core::

    r_little = IPC_L * f_L * (1 - 0.5 * beta) * (1 - 0.5 * mu)
    r_big    = IPC_B * f_B * (0.5 + 0.5 * beta) * (1 - 0.5 * mu)
    time     = work * ((1 - p) / r_best + p / r_total)

The serial part runs on the fastest single active core, the parallel part on
every active core. Power is cubic dynamic power weighted by utilization plus
static power per active core plus an uncore constant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import InputError
from .policy import (
    BIG_FREQS_MHZ,
    LITTLE_FREQS_MHZ,
    N_FEATURES,
    DrmDecision,
    Policy,
    PolicyArchitecture,
)

OBJECTIVES = ("time", "energy", "ppw")
BOOT_STATE = np.zeros(N_FEATURES)

DEFAULT_SUITE = (
    "basicmath",
    "bitcount",
    "blowfish",
    "dijkstra",
    "fft",
    "qsort",
    "sha",
    "stringsearch",
    "kmeans",
    "motion",
    "pca",
    "spectral",
)
# Fully serial workloads: the performance governor can be matched in time
# with fewer cores, so governor dominance is attainable on these.
DESIGNATED = ("blowfish", "spectral", "qsort", "pca")


@dataclass(frozen=True)
class Calibration:
    """Every constant of the performance, power and counter model."""

    ipc_big: float = 2.0
    ipc_little: float = 1.0
    kappa_big: float = 0.1875  # W / GHz^3 per fully busy core
    kappa_little: float = 0.091
    static_big: float = 0.15  # W per active core
    static_little: float = 0.03
    uncore: float = 0.25
    # counters per instruction: (base, slope in memory intensity)
    branch_miss: tuple = (0.002, 0.004)
    l2_miss: tuple = (0.001, 0.02)
    mem_access: tuple = (0.2, 0.2)
    external_req: tuple = (0.0005, 0.01)
    # normalization scales, one per feature group
    scale_instructions: float = 1e9
    scale_cycles: float = 1e10
    scale_power: float = 10.0

    @classmethod
    def from_dict(cls, data: dict | None) -> "Calibration":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown calibration keys: {sorted(unknown)}")
        for key in ("branch_miss", "l2_miss", "mem_access", "external_req"):
            if key in data:
                data[key] = tuple(data[key])
        cal = cls(**data)
        for f in fields(cls):
            v = getattr(cal, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if any(not np.isfinite(x) or x < 0 for x in vals):
                raise InputError(f"calibration {f.name} must be finite and non-negative")
        if cal.ipc_big <= 0 or cal.ipc_little <= 0:
            raise InputError("IPC values must be positive")
        return cal

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


DEFAULT_CALIBRATION = Calibration()


@dataclass(frozen=True)
class EpochSpec:
    work: float
    parallel_fraction: float
    memory_intensity: float
    big_affinity: float

    def __post_init__(self):
        if not 1e6 <= self.work <= 1e9:
            raise InputError(f"epoch work {self.work} outside [1e6, 1e9]")
        for name in ("parallel_fraction", "memory_intensity", "big_affinity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    epochs: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        if not self.epochs:
            raise InputError(f"workload {self.name!r} has no epochs")

    @property
    def total_work(self) -> float:
        return float(sum(e.work for e in self.epochs))

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadSpec":
        unknown = set(data) - {"name", "epochs", "seed"}
        if unknown:
            raise InputError(f"unknown workload keys: {sorted(unknown)}")
        try:
            epochs = [EpochSpec(**e) for e in data["epochs"]]
            return cls(str(data["name"]), epochs, int(data.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed workload spec: {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "epochs": [asdict(e) for e in self.epochs]}


def load_workload(name_or_path) -> WorkloadSpec:
    """Load a shipped workload by name, or any workload JSON file by path."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read workload file {path}: {exc}") from None
    else:
        res = resources.files("parmis") / "workloads" / f"{name_or_path}.json"
        if not res.is_file():
            raise InputError(f"unknown workload {name_or_path!r}")
        text = res.read_text()
    try:
        return WorkloadSpec.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InputError(f"workload {name_or_path} is not valid JSON: {exc}") from None


def load_suite(names: Iterable[str] = DEFAULT_SUITE) -> list[WorkloadSpec]:
    return [load_workload(n) for n in names]


class StepResult(NamedTuple):
    time: float
    power: float
    counters: np.ndarray  # normalized features for the next decision


def _physics(a_big, a_little, f_big_mhz, f_little_mhz, epoch: EpochSpec, cal: Calibration):
    """Vectorized model over arrays of decisions. Returns (time, power, extras)."""
    a_big = np.asarray(a_big, dtype=float)
    a_little = np.asarray(a_little, dtype=float)
    fb = np.asarray(f_big_mhz, dtype=float) * 1e-3  # GHz
    fl = np.asarray(f_little_mhz, dtype=float) * 1e-3
    p, mu, beta = epoch.parallel_fraction, epoch.memory_intensity, epoch.big_affinity
    mem = 1.0 - 0.5 * mu
    r_big = cal.ipc_big * fb * 1e9 * (0.5 + 0.5 * beta) * mem
    r_little = cal.ipc_little * fl * 1e9 * (1.0 - 0.5 * beta) * mem
    r_big = np.where(a_big > 0, r_big, 0.0)
    big_serial = r_big > r_little  # the serial part runs on the faster cluster
    r_best = np.where(big_serial, r_big, r_little)
    r_total = a_big * r_big + a_little * r_little
    t_serial = epoch.work * (1.0 - p) / r_best
    t_par = epoch.work * p / r_total
    time = t_serial + t_par
    # the serial core is busy throughout, every other active core only in the parallel phase
    share = t_par / time
    u_big_sum = np.where(big_serial, 1.0 + (a_big - 1.0) * share, a_big * share)
    u_little_sum = np.where(big_serial, a_little * share, 1.0 + (a_little - 1.0) * share)
    power = (
        cal.kappa_big * fb**3 * u_big_sum
        + cal.kappa_little * fl**3 * u_little_sum
        + cal.static_big * a_big
        + cal.static_little * a_little
        + cal.uncore
    )
    return time, power, (big_serial, share, u_little_sum)


def _counters(decision: DrmDecision, epoch: EpochSpec, time, power, big_serial, share, u_little_sum, cal):
    w, mu = epoch.work, epoch.memory_intensity
    fb, fl = decision.f_big * 1e6, decision.f_little * 1e6
    cycles = (decision.a_big * fb + decision.a_little * fl) * time

    def per_inst(coef):
        return w * (coef[0] + coef[1] * mu)

    def cap(coef):
        return cal.scale_instructions * (coef[0] + coef[1])

    big_u = np.zeros(4)
    if decision.a_big:
        big_u[: decision.a_big] = share
        if big_serial:
            big_u[0] = 1.0
    raw = np.array(
        [
            w / cal.scale_instructions,
            cycles / cal.scale_cycles,
            per_inst(cal.branch_miss) / cap(cal.branch_miss),
            per_inst(cal.l2_miss) / cap(cal.l2_miss),
            per_inst(cal.mem_access) / cap(cal.mem_access),
            per_inst(cal.external_req) / cap(cal.external_req),
            u_little_sum / 4.0,
            *big_u,
            power / cal.scale_power,
        ]
    )
    return np.clip(raw, 0.0, 1.0)


def step_model(decision: DrmDecision, epoch: EpochSpec, cal: Calibration = DEFAULT_CALIBRATION) -> StepResult:
    """Time, power and next-epoch counters for one decision applied to one epoch."""
    decision.validate()
    t, pw, (bs, share, ul) = _physics(
        decision.a_big, decision.a_little, decision.f_big, decision.f_little, epoch, cal
    )
    t, pw = float(t), float(pw)
    return StepResult(t, pw, _counters(decision, epoch, t, pw, bool(bs), float(share), float(ul), cal))


class Controller(Protocol):
    def reset(self) -> None: ...

    def decide(self, state: np.ndarray) -> DrmDecision: ...


@dataclass(frozen=True)
class FixedDecision:
    """Apply the same decision in every epoch."""

    decision: DrmDecision

    def reset(self) -> None:
        pass

    def decide(self, state) -> DrmDecision:
        return self.decision


class EpochRecord(NamedTuple):
    app: str
    epoch: int
    decision: DrmDecision
    state: np.ndarray  # what the controller saw
    time: float
    power: float


@dataclass(frozen=True)
class EvalResult:
    exec_time: float
    energy: float
    ppw: float  # instructions per joule
    work: float
    trace: tuple = field(default=(), repr=False)

    def objective(self, name: str) -> float:
        if name == "time":
            return self.exec_time
        if name == "energy":
            return self.energy
        if name == "ppw":
            return -self.ppw  # minimization convention
        raise InputError(f"unknown objective {name!r}; choose from {OBJECTIVES}")

    def objectives(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.objective(n) for n in names])

    def trace_records(self) -> list[dict]:
        return [
            {
                "app": r.app,
                "epoch": r.epoch,
                "decision": list(r.decision),
                "state": r.state.tolist(),
                "time": r.time,
                "power": r.power,
            }
            for r in self.trace
        ]


def as_controller(obj, arch: PolicyArchitecture | None = None):
    if hasattr(obj, "decide") and hasattr(obj, "reset"):
        return obj
    if isinstance(obj, DrmDecision):
        return FixedDecision(obj)
    return Policy(np.asarray(obj, dtype=float), arch or PolicyArchitecture())


def simulate(
    controller,
    apps: Sequence[WorkloadSpec],
    cal: Calibration = DEFAULT_CALIBRATION,
    *,
    keep_trace: bool = True,
    arch: PolicyArchitecture | None = None,
) -> EvalResult:
    """Run ``controller`` (policy, theta, governor or fixed decision) over ``apps``."""
    apps = list(apps)
    if not apps:
        raise InputError("need at least one application")
    ctl = as_controller(controller, arch)
    total_t = total_e = total_w = 0.0
    trace = []
    for app in apps:
        ctl.reset()
        state = BOOT_STATE
        for i, epoch in enumerate(app.epochs):
            decision = ctl.decide(state)
            t, pw, counters = step_model(decision, epoch, cal)
            if keep_trace:
                trace.append(EpochRecord(app.name, i, decision, state, t, pw))
            total_t += t
            total_e += pw * t
            total_w += epoch.work
            state = counters
    return EvalResult(total_t, total_e, total_w / total_e, total_w, tuple(trace))


def evaluate(
    policy,
    apps: Sequence[WorkloadSpec],
    objectives: Sequence[str] = ("time", "energy"),
    cal: Calibration = DEFAULT_CALIBRATION,
    arch: PolicyArchitecture | None = None,
) -> np.ndarray:
    """Objective vector of one policy, minimization convention (PPW negated)."""
    check_objectives(objectives)
    return simulate(policy, apps, cal, keep_trace=False, arch=arch).objectives(objectives)


def check_objectives(objectives: Sequence[str]) -> tuple:
    objs = tuple(objectives)
    if len(objs) < 2:
        raise InputError("need at least two objectives")
    if len(set(objs)) != len(objs):
        raise InputError(f"duplicate objectives in {objs}")
    for o in objs:
        if o not in OBJECTIVES:
            raise InputError(f"unknown objective {o!r}; choose from {OBJECTIVES}")
    return objs


def decision_table() -> np.ndarray:
    """(4940, 4) integer array of every decision, in enumeration order."""
    from .policy import all_decisions

    return np.array(list(all_decisions()), dtype=int)


def fixed_decision_objectives(
    apps: Sequence[WorkloadSpec], cal: Calibration = DEFAULT_CALIBRATION, table: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Total time and energy of every fixed decision over ``apps``, vectorized."""
    t = decision_table() if table is None else table
    time = np.zeros(len(t))
    energy = np.zeros(len(t))
    for app in apps:
        for epoch in app.epochs:
            et, pw, _ = _physics(t[:, 0], t[:, 1], t[:, 2], t[:, 3], epoch, cal)
            time += et
            energy += et * pw
    return time, energy


def synthesize_workload(name: str, n_epochs: int, p_range, mu_range, beta_range, seed: int,
                        work_range=(5e7, 5e8)) -> WorkloadSpec:
    """Draw a phase-structured workload; used to build the shipped fixtures."""
    rng = np.random.default_rng(seed)
    epochs = []
    for _ in range(n_epochs):
        epochs.append(
            EpochSpec(
                work=float(np.round(rng.uniform(*work_range), -4)),
                parallel_fraction=float(np.round(rng.uniform(*p_range), 3)),
                memory_intensity=float(np.round(rng.uniform(*mu_range), 3)),
                big_affinity=float(np.round(rng.uniform(*beta_range), 3)),
            )
        )
    return WorkloadSpec(name, epochs, seed)


# (parallel fraction, memory intensity, big affinity) ranges per shipped workload
SUITE_RECIPE = {
    "basicmath": ((0.0, 0.0), (0.0, 0.15), (0.6, 0.9)),
    "bitcount": ((0.0, 0.0), (0.0, 0.1), (0.3, 0.6)),
    "blowfish": ((0.0, 0.0), (0.1, 0.3), (0.4, 0.8)),
    "dijkstra": ((0.0, 0.3), (0.4, 0.8), (0.2, 0.5)),
    "fft": ((0.4, 0.8), (0.2, 0.4), (0.5, 0.9)),
    "qsort": ((0.0, 0.0), (0.3, 0.6), (0.2, 0.6)),
    "sha": ((0.0, 0.0), (0.0, 0.2), (0.7, 1.0)),
    "stringsearch": ((0.0, 0.2), (0.2, 0.5), (0.0, 0.3)),
    "kmeans": ((0.6, 0.95), (0.3, 0.6), (0.4, 0.7)),
    "motion": ((0.7, 1.0), (0.5, 0.9), (0.1, 0.4)),
    "pca": ((0.0, 0.0), (0.4, 0.9), (0.3, 0.7)),
    "spectral": ((0.0, 0.0), (0.1, 0.5), (0.5, 1.0)),
}
