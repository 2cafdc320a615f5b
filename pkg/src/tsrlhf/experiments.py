"""Experiment specs, orchestration and on-disk artifacts.

One JSON spec drives every mode.  Artifacts contain no timestamps, so the same
spec always produces byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import instances
from .eluder import InstanceTooLargeError, be_dimension
from .hypotheses import HypothesisClass
from .mdp import ConfigurationError, EpisodicMdp
from .posterior import write_dataset
from .preference import InvalidLinkError, LinkFunction
from .thompson import (RunConfig, RunLog, bayes_draw, confidence_diagnostics,
                       cumulative_regret, pigeonhole_check, run_ts)
from .variational import DivergenceError, ElboConfig, run_elbo_ts, smooth

MODES = ("single_run", "bayes_regret", "eluder_report", "elbo_run", "diagnostics")
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


@dataclass
class ExperimentSpec:
    mode: str
    rounds: int = 100
    seed: int = 0
    delta: float = 0.1
    transition_mode: str = "true_P"
    link: dict = field(default_factory=lambda: {"kind": "sigmoid"})
    mdp: dict | None = None
    hypothesis_class: dict | None = None
    num_seeds: int = 1
    grid: list | None = None
    smoothing: int = 20
    eluder: dict = field(default_factory=dict)
    elbo: dict = field(default_factory=dict)
    run_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_seeds < 1 or self.workers < 1 or self.smoothing < 1:
            raise ConfigurationError("num_seeds, workers and smoothing must be >= 1")
        if self.mode == "diagnostics":
            if not self.run_dir:
                raise ConfigurationError("diagnostics mode needs run_dir")
        elif self.mdp is None:
            raise ConfigurationError(f"{self.mode} needs an mdp spec")
        if self.mode in ("single_run", "bayes_regret", "eluder_report") and self.hypothesis_class is None:
            raise ConfigurationError(f"{self.mode} needs a hypothesis_class spec")
        LinkFunction.from_dict(self.link)
        if self.mode != "diagnostics":
            self.run_config()
        if self.mode == "elbo_run":
            self.elbo_config()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown spec fields: {sorted(unknown)}")
        if "mode" not in d:
            raise ConfigurationError("spec needs a mode")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigurationError(f"cannot parse spec {path}: {e}") from e

    def run_config(self, seed: int | None = None) -> RunConfig:
        return RunConfig(rounds=int(self.rounds), delta=float(self.delta),
                         transition_mode=self.transition_mode,
                         seed=self.seed if seed is None else seed,
                         link=LinkFunction.from_dict(self.link), mdp=self.mdp,
                         hypothesis_class=self.hypothesis_class)

    def elbo_config(self) -> ElboConfig:
        try:
            return ElboConfig(**self.elbo)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"bad elbo config: {e}") from e

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.num_seeds)]


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_regret_csv(path: Path, increments, window: int) -> None:
    inc = np.asarray(increments, dtype=float)
    cum = np.cumsum(inc)
    sm = smooth(inc, window)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "regret", "per_step_regret", "smoothed"])
        for t in range(len(inc)):
            w.writerow([t + 1, repr(float(cum[t])), repr(float(inc[t])), repr(float(sm[t]))])


def read_regret_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}


def _single(spec: ExperimentSpec, seed: int, out: Path) -> dict:
    cfg = spec.run_config(seed)
    mdp, hclass = cfg.resolve()
    log = run_ts(cfg, mdp, hclass, keep_posteriors=False)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mdp.json").write_text(mdp.dumps() + "\n")
    (out / "class.json").write_text(hclass.dumps() + "\n")
    log.write(out / "runlog.jsonl")
    write_dataset(out / "dataset.jsonl", log.dataset)
    write_regret_csv(out / "regret.csv", log.increments, spec.smoothing)
    _dump(out / "diagnostics.json", _diagnostics(log, hclass, mdp, cfg, spec.grid))
    regret = cumulative_regret(log, mdp)
    return {"seed": seed, "v_star": log.v_star, "final_regret": float(regret[-1]), "rounds": len(log)}


def _diagnostics(log: RunLog, hclass: HypothesisClass, mdp: EpisodicMdp, cfg: RunConfig, grid) -> dict:
    rep = confidence_diagnostics(log, hclass, mdp, cfg.delta, cfg.link, grid=grid)
    return rep.to_dict()


def _single_job(args):
    spec, seed, out = args
    return _single(spec, seed, out)


def _run_single(spec: ExperimentSpec, out: Path) -> dict:
    seeds = spec.seeds()
    dirs = [out if len(seeds) == 1 else out / f"seed_{s:04d}" for s in seeds]
    jobs = [(spec, s, d) for s, d in zip(seeds, dirs)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            results = list(ex.map(_single_job, jobs))
    else:
        results = [_single_job(j) for j in jobs]
    return {"runs": sorted(results, key=lambda r: r["seed"])}


def _bayes_job(args):
    return bayes_draw(*args)


def _run_bayes(spec: ExperimentSpec, out: Path) -> dict:
    cfg = spec.run_config()
    template, hclass = cfg.resolve()
    (out / "mdp.json").write_text(template.dumps() + "\n")
    (out / "class.json").write_text(hclass.dumps() + "\n")
    jobs = [(cfg, template, hclass, d) for d in range(spec.num_seeds)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            results = list(ex.map(_bayes_job, jobs))
    else:
        results = [_bayes_job(j) for j in jobs]
    series, draws = [], []
    for d, (k, env, log) in enumerate(results):
        ddir = out / f"draw_{d:04d}"
        ddir.mkdir(parents=True, exist_ok=True)
        (ddir / "mdp.json").write_text(env.dumps() + "\n")
        log.write(ddir / "runlog.jsonl")
        write_regret_csv(ddir / "regret.csv", log.increments, spec.smoothing)
        series.append(cumulative_regret(log, env))
        draws.append({"draw": d, "true_member": k, "final_regret": float(series[-1][-1])})
    series = np.stack(series)
    mean = series.mean(axis=0)
    se = series.std(axis=0, ddof=1) / np.sqrt(len(series)) if len(series) > 1 else np.zeros_like(mean)
    with open(out / "bayes_regret.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_regret", "stderr"])
        for t in range(len(mean)):
            w.writerow([t + 1, repr(float(mean[t])), repr(float(se[t]))])
    return {"draws": draws, "mean_final_regret": float(mean[-1])}


def _run_eluder(spec: ExperimentSpec, out: Path) -> dict:
    mdp, hclass = spec.run_config().resolve()
    opts = dict(spec.eluder)
    family = opts.pop("family", "delta")
    eps = float(opts.pop("eps", 0.1))
    report = be_dimension(hclass, mdp, family, eps, **opts)
    _dump(out / "certificate.json", report.to_dict())
    return {"family": family, "eps": eps, "dimension": report.dimension}


def _run_elbo(spec: ExperimentSpec, out: Path) -> dict:
    cfg = spec.elbo_config()
    mdp = instances.resolve_mdp(spec.mdp, spec.seed)
    res = run_elbo_ts(mdp, LinkFunction.from_dict(spec.link), cfg, spec.seed)
    (out / "mdp.json").write_text(mdp.dumps() + "\n")
    with open(out / "elbo_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "elbo", "smoothed_elbo", "value_of_mean_greedy"])
        for row in res.csv_rows():
            w.writerow([row[0]] + [repr(x) for x in row[1:]])
    write_regret_csv(out / "regret.csv", res.regret, cfg.smoothing)
    return {"v_star": res.v_star, "final_value_of_mean_greedy": float(res.value_of_mean_greedy[-1]),
            "final_regret": float(np.sum(res.regret))}


def _run_diagnostics(spec: ExperimentSpec, out: Path) -> dict:
    src = Path(spec.run_dir)
    try:
        src_spec = ExperimentSpec.load(src / "config.json")
        mdp = EpisodicMdp.loads((src / "mdp.json").read_text())
        hclass = HypothesisClass.loads((src / "class.json").read_text())
        log = RunLog.read(src / "runlog.jsonl", mdp.num_actions)
    except FileNotFoundError as e:
        raise ConfigurationError(f"incomplete run directory: {e}") from e
    cfg = src_spec.run_config()
    grid = spec.grid if spec.grid is not None else src_spec.grid
    _dump(out / "diagnostics.json", _diagnostics(log, hclass, mdp, cfg, grid))
    summary = {"source": str(src), "rounds": len(log)}
    try:
        rows = pigeonhole_check(log, hclass, mdp, cfg.delta, cfg.link, **spec.eluder)
        summary["pigeonhole"] = [dataclasses.asdict(r) for r in rows]
    except InstanceTooLargeError as e:
        summary["pigeonhole"] = {"skipped": str(e)}
    return summary


RUNNERS = {
    "single_run": _run_single,
    "bayes_regret": _run_bayes,
    "eluder_report": _run_eluder,
    "elbo_run": _run_elbo,
    "diagnostics": _run_diagnostics,
}


def run(spec: ExperimentSpec, out) -> int:
    """Execute ``spec`` into directory ``out``; returns the process exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", spec.to_dict())
    try:
        summary = RUNNERS[spec.mode](spec, out)
    except (ConfigurationError, InvalidLinkError, InstanceTooLargeError) as e:
        return write_error(out, e, EXIT_CONFIG)
    except DivergenceError as e:
        return write_error(out, e, EXIT_DIVERGED)
    _dump(out / "summary.json", {"mode": spec.mode, **summary})
    return EXIT_OK


def write_error(out: Path | None, exc: Exception, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if out is not None:
        _dump(Path(out) / "error.json", record)
    return code
