"""Command-line front end: run experiments, compare fronts, select and evaluate policies.

Exit codes: 0 success, 2 bad input (config, files, arguments), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import governors, records, socsim
from . import optimizer as opt
from . import policy as pol
from .errors import InputError, ParmisError
from .pareto import dominated_hypervolume, pareto_front, reference_point

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
STRATEGIES = ("parmis", "random", "scalarized", "nsga2", "governors")
CONFIG_KEYS = {
    "strategy", "apps", "objectives", "seeds", "budget", "theta_bound", "output_dir",
    "parmis", "scalarized", "nsga2", "policy", "calibration",
}
# ParmisConfig fields owned by the top level of the experiment config
_TOP_LEVEL_PARMIS = {"seed", "max_iters", "theta_bound"}


class Experiment:
    """Validated experiment config. Construction rejects anything malformed."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise InputError("config must be a JSON object")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        self.raw = raw
        self.strategy = raw.get("strategy")
        if self.strategy not in STRATEGIES:
            raise InputError(f"strategy must be one of {list(STRATEGIES)}, got {self.strategy!r}")
        self.app_names = list(raw.get("apps", socsim.DEFAULT_SUITE))
        if not self.app_names:
            raise InputError("apps must not be empty")
        self.apps = [socsim.load_workload(a) for a in self.app_names]
        self.objectives = socsim.check_objectives(raw.get("objectives", ["time", "energy"]))
        seeds = raw.get("seeds", [0])
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise InputError("seeds must be a non-empty list of non-negative integers")
        self.seeds = list(seeds)
        self.budget = raw.get("budget", 300)
        if not isinstance(self.budget, int) or self.budget < 1:
            raise InputError("budget must be a positive integer")
        self.theta_bound = float(raw.get("theta_bound", 1.0))
        self.output_dir = raw.get("output_dir", "runs")
        self.calibration = socsim.Calibration.from_dict(raw.get("calibration"))
        self.arch = self._arch(raw.get("policy", {}))
        self.d = pol.param_count(self.arch)
        self.parmis = self._parmis(raw.get("parmis", {}))
        self.weights = self._weights(raw.get("scalarized", {}))
        self.nsga2 = self._nsga2(raw.get("nsga2", {}))

    @staticmethod
    def _section(data, name: str, allowed) -> dict:
        if not isinstance(data, dict):
            raise InputError(f"'{name}' must be an object")
        unknown = set(data) - set(allowed)
        if unknown:
            raise InputError(f"unknown keys in '{name}': {sorted(unknown)}")
        return data

    def _arch(self, data) -> pol.PolicyArchitecture:
        data = self._section(data, "policy", {"hidden"})
        hidden = tuple(data.get("hidden", (8, 8)))
        if not all(isinstance(h, int) for h in hidden):
            raise InputError("policy.hidden must be a list of integers")
        return pol.PolicyArchitecture(hidden=hidden)

    def _parmis(self, data) -> opt.ParmisConfig:
        allowed = {f.name for f in fields(opt.ParmisConfig)} - _TOP_LEVEL_PARMIS
        data = self._section(data, "parmis", allowed)
        init = data.get("init_samples", opt.ParmisConfig.init_samples)
        if self.strategy == "parmis" and self.budget < init:
            raise InputError(f"budget {self.budget} is smaller than init_samples {init}")
        try:
            return opt.ParmisConfig(**data, theta_bound=self.theta_bound,
                                    max_iters=max(self.budget - init, 0))
        except TypeError as exc:
            raise InputError(f"bad 'parmis' section: {exc}") from None

    def _weights(self, data):
        data = self._section(data, "scalarized", {"weights"})
        spec = data.get("weights", 5)
        if isinstance(spec, int):
            if len(self.objectives) != 2:
                raise InputError("an integer weight count needs exactly two objectives; list the weights")
            weights = opt.simplex_grid(spec)
        else:
            weights = [np.asarray(w, dtype=float) for w in spec]
        if self.strategy == "scalarized" and self.budget % len(weights):
            raise InputError(f"budget {self.budget} is not divisible by {len(weights)} weights")
        return weights

    def _nsga2(self, data) -> int:
        data = self._section(data, "nsga2", {"population_size"})
        pop = data.get("population_size", 20)
        if self.strategy == "nsga2" and (self.budget % pop or self.budget // pop < 2):
            raise InputError(f"nsga2 budget {self.budget} must be a multiple (at least 2x) of the "
                             f"population size {pop}")
        return pop

    @property
    def hash(self) -> str:
        return records.config_hash(self.raw)

    def run_one(self, seed: int, out: Path) -> dict:
        t0 = time.perf_counter()
        extra = {"apps": self.app_names, "calibration": self.calibration.to_dict(), "config": self.raw}
        if self.strategy == "governors":
            pts = opt.governor_points(self.apps, self.objectives, self.calibration)
            names, vals = [n for n, _ in pts], np.array([v for _, v in pts])
            ref = reference_point(vals)
            phv = dominated_hypervolume(pareto_front(vals).points, ref)
            return records.write_points(names, vals, out, objectives=self.objectives, cfg_hash=self.hash,
                                        seed=seed, strategy="governors", reference=ref, phv=phv,
                                        extra=extra, wall_time=time.perf_counter() - t0)
        f = opt.socsim_objective(self.apps, self.objectives, self.calibration, self.arch)
        cfg = self.parmis
        if self.strategy == "parmis":
            rec = opt.run_parmis(f, self.d, replace(cfg, seed=seed))
        elif self.strategy == "random":
            rec = opt.run_random_search(f, self.d, self.budget, seed, theta_bound=self.theta_bound,
                                        round_float32=cfg.round_float32)
        elif self.strategy == "scalarized":
            rec = opt.run_scalarized(f, self.d, self.weights, self.budget // len(self.weights), seed, cfg)
        else:
            rec = opt.run_nsga2_direct(f, self.d, self.nsga2, self.budget // self.nsga2 - 1, seed,
                                       theta_bound=self.theta_bound, round_float32=cfg.round_float32)
        return records.write_run(rec, out, objectives=self.objectives, cfg_hash=self.hash, extra=extra,
                                 arch=self.arch, wall_time=time.perf_counter() - t0)


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    return Experiment(raw)


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _refresh_summary(root: Path) -> None:
    rows = []
    for s in sorted(root.glob("*/summary.json")):
        rows.append(records.summary_row(json.loads(s.read_text())))
    records.write_csv(root / "summary.csv", records.SUMMARY_FIELDS, rows)


def cmd_run(args) -> int:
    exp = load_config(args.config)
    root = Path(args.out or exp.output_dir)
    seeds = [args.seed] if args.seed is not None else exp.seeds
    for seed in seeds:
        out = root / f"{exp.strategy}-seed{seed}"
        try:
            summary = exp.run_one(seed, out)
        except opt.OptimizationAborted as exc:
            if exc.record is not None:
                records.write_run(exc.record, out, objectives=exp.objectives, cfg_hash=exp.hash,
                                  extra={"error": str(exc)}, arch=exp.arch)
            raise
        print(f"{exp.strategy} seed {seed}: {summary['evals']} evals, PHV {summary['phv']:.6g} -> {out}")
    _refresh_summary(root)
    return EXIT_OK


def _front_files(dirs) -> list[records.FrontFile]:
    found = []
    for d in dirs:
        d = Path(d)
        if d.is_file():
            found.append(records.read_front(d))
        elif (d / "front.csv").is_file():
            found.append(records.read_front(d / "front.csv"))
        else:
            subs = sorted(d.glob("*/front.csv"))
            if not subs:
                raise InputError(f"no front.csv under {d}")
            found.extend(records.read_front(s) for s in subs)
    return found


def cmd_compare(args) -> int:
    fronts = _front_files(args.dirs)
    objs = {f.objectives for f in fronts}
    if len(objs) > 1:
        raise InputError(f"refusing to compare runs with different objectives: {sorted(objs)}")
    k = len(fronts[0].objectives)
    if any(len(f) == 0 for f in fronts):
        raise InputError("cannot compare an empty front")
    if args.ref == "auto":
        ref = reference_point(*[f.values for f in fronts])
    else:
        ref = np.array(_floats(args.ref, "--ref"))
        if ref.size != k:
            raise InputError(f"--ref has {ref.size} values for {k} objectives")
    phv = [dominated_hypervolume(f.values, ref) for f in fronts]

    def baseline(i):
        seed = fronts[i].meta.get("seed")
        parmis = [j for j, f in enumerate(fronts) if f.meta.get("strategy") == "parmis"]
        same = [j for j in parmis if fronts[j].meta.get("seed") == seed]
        return (same or parmis or [0])[0]

    rows = []
    for i, f in enumerate(fronts):
        b = phv[baseline(i)]
        norm = phv[i] / b if b > 0 else float("nan")
        rows.append([str(f.path.parent), f.meta.get("strategy", ""), f.meta.get("seed", ""),
                     repr(phv[i]), repr(norm)])
    header = ["run", "strategy", "seed", "phv", "normalized_phv"]
    if args.out:
        records.write_csv(args.out, header, rows)
    print("# reference " + ",".join(repr(float(r)) for r in ref))
    print("\n".join(",".join(map(str, r)) for r in [header, *rows]))
    return EXIT_OK


def select_index(front: records.FrontFile, weights=None, lex=None) -> int:
    """Row of the front minimizing a weighted sum (min-max normalized) or a lexicographic order."""
    if len(front) == 0:
        raise InputError(f"front {front.path} is empty")
    vals = front.values
    if lex is not None:
        try:
            cols = [front.objectives.index(name) for name in lex]
        except ValueError:
            raise InputError(f"lexicographic keys {list(lex)} not all in {list(front.objectives)}") from None
        return min(range(len(front)), key=lambda i: tuple(vals[i, c] for c in cols))
    w = np.asarray(weights, dtype=float)
    if w.size != vals.shape[1]:
        raise InputError(f"{w.size} weights for {vals.shape[1]} objectives")
    if np.any(w < 0) or not w.sum() > 0:
        raise InputError("weights must be non-negative with a positive sum")
    lo, hi = vals.min(0), vals.max(0)
    norm = (vals - lo) / np.where(hi > lo, hi - lo, 1.0)
    return int(np.argmin(norm @ (w / w.sum())))


def cmd_select(args) -> int:
    front = records.read_front(args.front)
    lex = args.lex.split(",") if args.lex else None
    weights = _floats(args.weights, "--weights") if args.weights else None
    if (lex is None) == (weights is None):
        raise InputError("give exactly one of --weights or --lex")
    i = select_index(front, weights, lex)
    pid = front.ids[i]
    result = {"policy_id": pid, "objectives": dict(zip(front.objectives, front.values[i].tolist()))}
    src = front.policy_path(pid)
    if src is not None:
        result["policy_file"] = str(src)
    if args.out:
        if src is None:
            raise InputError(f"front member {pid} has no stored policy file")
        Path(args.out).write_bytes(src.read_bytes())
        result["written"] = args.out
    print(json.dumps(result))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.policy in governors.GOVERNORS:
        controller = governors.make(args.policy)
    else:
        controller = pol.load(args.policy)
    apps = [socsim.load_workload(a) for a in args.apps.split(",")] if args.apps else socsim.load_suite()
    objectives = socsim.check_objectives(args.objectives.split(","))
    cal = socsim.DEFAULT_CALIBRATION
    if args.calibration:
        try:
            cal = socsim.Calibration.from_dict(json.loads(Path(args.calibration).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read calibration {args.calibration}: {exc}") from None
    res = socsim.simulate(controller, apps, cal, keep_trace=bool(args.trace))
    out = {
        "policy": args.policy,
        "exec_time": res.exec_time,
        "energy": res.energy,
        "ppw": res.ppw,
        "objectives": dict(zip(objectives, res.objectives(objectives).tolist())),
    }
    if args.trace:
        with open(args.trace, "w") as fh:
            for r in res.trace_records():
                fh.write(json.dumps(r) + "\n")
    print(json.dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parmis", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the configured strategy for each seed")
    r.add_argument("--config", required=True, help="experiment config (JSON)")
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="PHV table over run directories, normalized to PaRMIS")
    c.add_argument("dirs", nargs="+", help="run directories, output roots or front files")
    c.add_argument("--ref", default="auto", help="'auto' or comma-separated reference point")
    c.add_argument("--out", help="also write the table to this CSV file")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("select", help="pick a front member for a trade-off preference")
    s.add_argument("--front", required=True, help="front.csv of a run")
    s.add_argument("--weights", help="comma-separated non-negative weights, one per objective")
    s.add_argument("--lex", help="comma-separated objective names in priority order")
    s.add_argument("--out", help="copy the selected policy file here")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="simulate a stored policy or a governor")
    e.add_argument("--policy", required=True, help="policy file or governor name")
    e.add_argument("--apps", help="comma-separated workload names or JSON paths (default: suite)")
    e.add_argument("--objectives", default="time,energy,ppw")
    e.add_argument("--calibration", help="JSON file of calibration overrides")
    e.add_argument("--trace", help="write per-epoch records to this JSONL file")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ParmisError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
