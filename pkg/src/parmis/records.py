"""On-disk layout of optimization runs.

One run directory holds::

    evals.jsonl      one record per evaluation (theta, objectives, PHV so far)
    summary.json     run-level summary and the config snapshot
    summary.csv      the one-row summary table
    front.csv        Pareto front: policy id plus one column per objective
    policies/        one policy file per front member, plus manifest.json

Every file carries the format version, the config hash and the seed. Floats
are written with ``repr`` so they read back bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import policy as pol
from .errors import InputError

FORMAT_VERSION = 1
FRONT_MAGIC = "# parmis-front"
SUMMARY_FIELDS = ("strategy", "seed", "config_hash", "phv", "evals", "failed", "wall_time_s")


def config_hash(config: dict) -> str:
    """Short stable digest of a JSON-serializable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _num(x):
    x = float(x)
    return None if not np.isfinite(x) else x


@dataclass
class FrontFile:
    """Contents of a ``front.csv``."""

    objectives: tuple
    ids: list
    values: np.ndarray
    meta: dict
    path: Path | None = None

    def __len__(self):
        return len(self.ids)

    def policy_path(self, policy_id) -> Path | None:
        if self.path is None:
            return None
        p = self.path.parent / "policies" / f"{policy_id}.prms"
        return p if p.is_file() else None


def format_front(objectives: Sequence[str], ids: Sequence, values, meta: dict) -> str:
    values = np.asarray(values, dtype=float).reshape(len(ids), len(objectives))
    buf = io.StringIO()
    head = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    buf.write(f"{FRONT_MAGIC} v{FORMAT_VERSION} {head}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy_id", *objectives])
    for pid, row in zip(ids, values):
        w.writerow([pid, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def read_front(path) -> FrontFile:
    """Parse a front file. Raises InputError on anything malformed."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read front file {path}: {exc}") from None
    if not lines or not lines[0].startswith(FRONT_MAGIC):
        raise InputError(f"{path} is not a front file")
    meta = {}
    for tok in lines[0][len(FRONT_MAGIC):].split()[1:]:
        key, _, val = tok.partition("=")
        meta[key] = val
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0][:1] != ["policy_id"] or len(rows[0]) < 2:
        raise InputError(f"{path}: missing header row")
    objectives = tuple(rows[0][1:])
    ids, vals = [], []
    for n, row in enumerate(rows[1:], start=3):
        if len(row) != len(objectives) + 1:
            raise InputError(f"{path}:{n}: expected {len(objectives) + 1} fields")
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError:
            raise InputError(f"{path}:{n}: non-numeric objective value") from None
        ids.append(row[0])
    values = np.array(vals, dtype=float).reshape(len(ids), len(objectives))
    return FrontFile(objectives, ids, values, meta, path)


def write_csv(path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def summary_row(summary: dict) -> list:
    return [summary["strategy"], summary["seed"], summary["config_hash"], repr(summary["phv"]),
            summary["evals"], summary["failed"], f"{summary['wall_time_s']:.3f}"]


def write_run(record, out_dir, *, objectives: Sequence[str], cfg_hash: str, extra: dict | None = None,
              arch: pol.PolicyArchitecture | None = None, wall_time: float = 0.0) -> dict:
    """Serialize a RunRecord. Returns the summary document."""
    out = Path(out_dir)
    (out / "policies").mkdir(parents=True, exist_ok=True)
    objectives = list(objectives)
    stamp = {"format_version": FORMAT_VERSION, "config_hash": cfg_hash, "seed": record.seed}

    with open(out / "evals.jsonl", "w") as fh:
        for i in range(record.n_evals):
            rec = {
                **stamp,
                "eval": i,
                "phase": record.phases[i],
                "failed": bool(record.failed[i]),
                "objectives": None if record.failed[i] else [float(v) for v in record.values[i]],
                "phv": float(record.phv[i]),
                "theta": [float(t) for t in record.thetas[i]],
            }
            fh.write(json.dumps(rec) + "\n")

    ids = list(record.front.member_ids)
    meta = {"config_hash": cfg_hash, "seed": record.seed, "strategy": record.strategy}
    (out / "front.csv").write_text(format_front(objectives, ids, record.front.points, meta))

    arch = arch or pol.PolicyArchitecture()
    saved = []
    if record.thetas.shape[1] == pol.param_count(arch):
        for pid in ids:
            pol.save(pol.Policy(record.thetas[pid], arch), out / "policies" / f"{pid}.prms")
            saved.append(pid)
    (out / "policies" / "manifest.json").write_text(
        json.dumps({**stamp, "policies": [f"{p}.prms" for p in saved]}, indent=1) + "\n")

    summary = {
        **stamp,
        "strategy": record.strategy,
        "objectives": objectives,
        "phv": float(record.phv[-1]),
        "reference": [float(r) for r in record.reference],
        "evals": int(record.n_evals),
        "failed": int(record.failed.sum()),
        "stop_reason": record.stop_reason,
        "converged_at": record.converged_at,
        "front": {"ids": ids, "values": record.front.points.tolist()},
        "timings": {k: float(v) for k, v in record.timings.items()},
        "wall_time_s": float(wall_time),
        "run_config": record.config,
        **(extra or {}),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    write_csv(out / "summary.csv", SUMMARY_FIELDS, [summary_row(summary)])
    return summary


def write_points(names: Sequence[str], values, out_dir, *, objectives: Sequence[str], cfg_hash: str,
                 seed: int, strategy: str, reference, phv: float, extra: dict | None = None,
                 wall_time: float = 0.0) -> dict:
    """Serialize named fixed policies (the governors) in the same layout as a run."""
    from .pareto import pareto_front

    out = Path(out_dir)
    (out / "policies").mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=float)
    stamp = {"format_version": FORMAT_VERSION, "config_hash": cfg_hash, "seed": seed}
    with open(out / "evals.jsonl", "w") as fh:
        for i, (name, v) in enumerate(zip(names, values)):
            fh.write(json.dumps({**stamp, "eval": i, "policy": name, "failed": False,
                                 "objectives": [float(x) for x in v]}) + "\n")
    front = pareto_front(values, ids=list(names))
    meta = {"config_hash": cfg_hash, "seed": seed, "strategy": strategy}
    (out / "front.csv").write_text(format_front(objectives, front.member_ids, front.points, meta))
    (out / "policies" / "manifest.json").write_text(json.dumps({**stamp, "policies": []}, indent=1) + "\n")
    summary = {
        **stamp,
        "strategy": strategy,
        "objectives": list(objectives),
        "phv": float(phv),
        "reference": [float(r) for r in reference],
        "evals": len(names),
        "failed": 0,
        "points": {n: [float(x) for x in v] for n, v in zip(names, values)},
        "front": {"ids": list(front.member_ids), "values": front.points.tolist()},
        "wall_time_s": float(wall_time),
        **(extra or {}),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    write_csv(out / "summary.csv", SUMMARY_FIELDS, [summary_row(summary)])
    return summary


def read_evals(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
