"""Config-driven experiment runner: single runs, method ladders, sweeps.

A config JSON fully determines every number in a report: the synthetic
benchmark, protocols, model sizes, temperatures, batching, schedule,
method (baseline / kd / sskd), and seed list. Reports embed the
resolved config plus its content hash and are written atomically.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .datagen import (Benchmark, BenchmarkSpec, DomainShift, DomainSpec,
                      ProtocolSpec, build_protocol, generate_benchmark)
from .errors import ConfigError
from .evaluation import run_protocol
from .losses import TemperatureConfig
from .models import ExtractorConfig, Model, build_model, param_count
from .optim import ScheduleConfig
from .training import BatchPlan, TrainState, train_stage1, train_stage2_sskd

METHODS = ("baseline", "kd", "sskd")
SWEEP_AXES = ("tau_kd_u", "unlabeled_fraction", "teacher_capacity")
FAST_EPOCHS = 10

# Desk-scale batch plan: the paper-mirroring BatchPlan defaults assume a
# corpus hundreds of times larger; against ~1200 labeled samples a 256
# batch would leave 4 optimizer steps per epoch, far too few to train.
DESK_PLAN = BatchPlan(p_identities=8, k_per_identity=4, unlabeled_per_step=48)


@dataclass(frozen=True)
class ModelSpec:
    hidden_dims: tuple[int, ...]
    embed_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be a non-empty list of positive ints")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be at least 2")


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: BenchmarkSpec
    protocol_mode: str = "leave_one_out"
    held_out: Optional[str] = None
    student: ModelSpec = ModelSpec((64,), 32)
    teacher: ModelSpec = ModelSpec((256,), 32)
    temps: TemperatureConfig = TemperatureConfig()
    plan: BatchPlan = DESK_PLAN
    schedule: ScheduleConfig = ScheduleConfig()
    method: str = "sskd"
    optimizer: str = "adam"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    unlabeled_fraction: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "sskd" and self.benchmark.pool is None:
            raise ConfigError("method 'sskd' requires an unlabeled pool in the benchmark")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not (0.0 <= self.unlabeled_fraction <= 1.0):
            raise ConfigError("unlabeled_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple
    base: ExperimentConfig

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")


# ---------------------------------------------------------------------------
# Config (de)serialization


def _shift_from_dict(d: dict, input_dim: int, where: str) -> DomainShift:
    try:
        if "strength" in d:
            return DomainShift.from_strength(
                input_dim, float(d["strength"]), int(d.get("seed", 0)),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                occlusion_rate=float(d.get("occlusion_rate", 0.0)))
        return DomainShift(rotation_seed=int(d["rotation_seed"]),
                           scale=tuple(d["scale"]), bias=tuple(d["bias"]),
                           noise_sigma=float(d.get("noise_sigma", 0.0)),
                           occlusion_rate=float(d.get("occlusion_rate", 0.0)),
                           rotation_strength=float(d.get("rotation_strength", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.shift: {exc}") from exc


def _shift_to_dict(s: DomainShift) -> dict:
    return {"rotation_seed": s.rotation_seed, "rotation_strength": s.rotation_strength,
            "scale": list(s.scale), "bias": list(s.bias),
            "noise_sigma": s.noise_sigma, "occlusion_rate": s.occlusion_rate}


def _domain_from_dict(d: dict, input_dim: int, where: str) -> DomainSpec:
    for key in ("domain_id", "n_identities", "images_per_identity", "n_cameras", "shift"):
        if key not in d:
            raise ConfigError(f"{where}: missing field {key!r}")
    return DomainSpec(domain_id=str(d["domain_id"]),
                      n_identities=int(d["n_identities"]),
                      images_per_identity=int(d["images_per_identity"]),
                      n_cameras=int(d["n_cameras"]),
                      shift=_shift_from_dict(d["shift"], input_dim, where))


def _domain_to_dict(d: DomainSpec) -> dict:
    return {"domain_id": d.domain_id, "n_identities": d.n_identities,
            "images_per_identity": d.images_per_identity, "n_cameras": d.n_cameras,
            "shift": _shift_to_dict(d.shift)}


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Resolve a parsed config document; raises ConfigError naming the field."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    b = doc.get("benchmark")
    if not isinstance(b, dict) or "domains" not in b:
        raise ConfigError("benchmark: required object with a 'domains' list")
    input_dim = int(b.get("input_dim", 32))
    domains = tuple(_domain_from_dict(d, input_dim, f"benchmark.domains[{i}]")
                    for i, d in enumerate(b["domains"]))
    pool = (_domain_from_dict(b["pool"], input_dim, "benchmark.pool")
            if b.get("pool") else None)
    benchmark = BenchmarkSpec(input_dim=input_dim, domains=domains, pool=pool,
                              seed=int(b.get("seed", 0)))

    proto = doc.get("protocol", {})
    student = doc.get("student", {})
    teacher = doc.get("teacher", {})
    try:
        temps = TemperatureConfig(**doc.get("temperatures", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"temperatures: {exc}") from exc
    try:
        plan = BatchPlan(**doc["batch"]) if "batch" in doc else DESK_PLAN
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"batch: {exc}") from exc
    try:
        schedule = ScheduleConfig(**doc.get("schedule", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    try:
        return ExperimentConfig(
            benchmark=benchmark,
            protocol_mode=str(proto.get("mode", "leave_one_out")),
            held_out=proto.get("held_out"),
            student=ModelSpec(tuple(student.get("hidden_dims", (64,))),
                              int(student.get("embed_dim", 32))),
            teacher=ModelSpec(tuple(teacher.get("hidden_dims", (256,))),
                              int(teacher.get("embed_dim", 32))),
            temps=temps, plan=plan, schedule=schedule,
            method=str(doc.get("method", "sskd")),
            optimizer=str(doc.get("optimizer", "adam")),
            seeds=tuple(int(s) for s in doc.get("seeds", (0, 1, 2, 3, 4))),
            unlabeled_fraction=float(doc.get("unlabeled_fraction", 1.0)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "benchmark": {
            "input_dim": cfg.benchmark.input_dim,
            "seed": cfg.benchmark.seed,
            "domains": [_domain_to_dict(d) for d in cfg.benchmark.domains],
            "pool": _domain_to_dict(cfg.benchmark.pool) if cfg.benchmark.pool else None,
        },
        "protocol": {"mode": cfg.protocol_mode, "held_out": cfg.held_out},
        "student": {"hidden_dims": list(cfg.student.hidden_dims),
                    "embed_dim": cfg.student.embed_dim},
        "teacher": {"hidden_dims": list(cfg.teacher.hidden_dims),
                    "embed_dim": cfg.teacher.embed_dim},
        "temperatures": {"tau_c": cfg.temps.tau_c, "tau_kd": cfg.temps.tau_kd,
                         "tau_kd_u": cfg.temps.tau_kd_u,
                         "stage2_ce_tau": cfg.temps.stage2_ce_tau},
        "batch": {"p_identities": cfg.plan.p_identities,
                  "k_per_identity": cfg.plan.k_per_identity,
                  "unlabeled_per_step": cfg.plan.unlabeled_per_step},
        "schedule": {"base_lr": cfg.schedule.base_lr, "final_lr": cfg.schedule.final_lr,
                     "warmup_factor": cfg.schedule.warmup_factor,
                     "warmup_epochs": cfg.schedule.warmup_epochs,
                     "total_epochs": cfg.schedule.total_epochs},
        "method": cfg.method,
        "optimizer": cfg.optimizer,
        "seeds": list(cfg.seeds),
        "unlabeled_fraction": cfg.unlabeled_fraction,
    }


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def validate_config_dict(doc: dict) -> list[str]:
    """Schema and invariant checks without executing; empty list means ok."""
    try:
        cfg = config_from_dict(doc)
    except ConfigError as exc:
        return [str(exc)]
    problems = []
    try:
        build_protocol(list(cfg.benchmark.domains), cfg.protocol_mode, cfg.held_out)
    except Exception as exc:
        problems.append(f"protocol: {exc}")
    return problems


def validate_config(path: str) -> list[str]:
    """Diagnostics for a config file; parse errors carry line/column."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        return [f"cannot read config: {exc}"]
    except json.JSONDecodeError as exc:
        return [f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
    return validate_config_dict(doc)


def default_config_dict() -> dict:
    """The shipped desk-scale configuration."""
    from .datagen import default_benchmark_spec
    cfg = ExperimentConfig(benchmark=default_benchmark_spec())
    return config_to_dict(cfg)


# ---------------------------------------------------------------------------
# Execution


def _subsample_pool(pool: list, fraction: float, seed: int) -> list:
    """Deterministic prefix of a seeded permutation; fractions nest."""
    if fraction >= 1.0:
        return pool
    n = int(round(fraction * len(pool)))
    if n == 0:
        return []
    order = np.random.default_rng([seed, 0xF0]).permutation(len(pool))
    return [pool[i] for i in order[:n]]


def _train_one(cfg: ExperimentConfig, benchmark: Benchmark, protocol: ProtocolSpec,
               seed: int, pool: Optional[list]) -> TrainState:
    labeled = benchmark.labeled_subset(protocol.train_domains)
    k_classes = len({r.identity for r in labeled})
    student_cfg = ExtractorConfig(input_dim=cfg.benchmark.input_dim,
                                  hidden_dims=cfg.student.hidden_dims,
                                  embed_dim=cfg.student.embed_dim)
    teacher_cfg = ExtractorConfig(input_dim=cfg.benchmark.input_dim,
                                  hidden_dims=cfg.teacher.hidden_dims,
                                  embed_dim=cfg.teacher.embed_dim)
    k_aux = k_classes if cfg.method == "sskd" else None
    student = build_model(student_cfg, k_main=k_classes, k_aux=k_aux,
                          seed=seed * 1000 + 1)
    teacher = None
    if cfg.method != "baseline":
        teacher = build_model(teacher_cfg, k_main=k_classes, seed=seed * 1000 + 2)
    state = train_stage1(student, teacher, labeled, cfg.schedule, cfg.temps,
                         seed=seed, plan=cfg.plan, optimizer=cfg.optimizer)
    if cfg.method == "kd":
        plan2 = replace(cfg.plan, unlabeled_per_step=0)
        state = train_stage2_sskd(state, labeled, None, cfg.schedule, cfg.temps,
                                  seed=seed, plan=plan2, optimizer=cfg.optimizer)
    elif cfg.method == "sskd":
        state = train_stage2_sskd(state, labeled, pool, cfg.schedule, cfg.temps,
                                  seed=seed, plan=cfg.plan, optimizer=cfg.optimizer)
    return state


def _atomic_write_json(doc: dict, path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def apply_fast(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.schedule.total_epochs <= FAST_EPOCHS:
        return cfg
    sched = replace(cfg.schedule, total_epochs=FAST_EPOCHS,
                    warmup_epochs=min(cfg.schedule.warmup_epochs, FAST_EPOCHS))
    return replace(cfg, schedule=sched)


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None,
        fast: bool = False, save_models: bool = False) -> dict:
    """Train and evaluate over all seeds and protocol folds.

    Returns the report document; writes ``report.json`` (and optional
    student checkpoints) under ``out_dir`` when given.
    """
    if fast:
        cfg = apply_fast(cfg)
    benchmark = generate_benchmark(cfg.benchmark)
    pool = None
    if cfg.method == "sskd":
        pool = _subsample_pool(benchmark.pool, cfg.unlabeled_fraction,
                               cfg.benchmark.seed)
    protocols = build_protocol(list(cfg.benchmark.domains), cfg.protocol_mode,
                               cfg.held_out,
                               unlabeled=("pool" if pool is not None else None))
    runs = []
    rank1_all, map_all = [], []
    for seed in cfg.seeds:
        for protocol in protocols:
            state = _train_one(cfg, benchmark, protocol, seed, pool)
            results = run_protocol(protocol, state.student, benchmark)
            for domain_id, res in results.items():
                rank1_all.append(res.rank_k[1])
                map_all.append(res.mean_ap)
                entry = {"seed": seed, "protocol": protocol.name,
                         "test_domain": domain_id, "metrics": res.to_dict(),
                         "losses": state.last_losses,
                         "student_params": param_count(state.student)}
                if state.teacher is not None:
                    teacher_res = run_protocol(protocol, state.teacher, benchmark)
                    entry["teacher_metrics"] = teacher_res[domain_id].to_dict()
                    entry["teacher_params"] = param_count(state.teacher)
                runs.append(entry)
            if save_models and out_dir:
                from .models import save_checkpoint
                os.makedirs(out_dir, exist_ok=True)
                name = f"student_seed{seed}_{protocol.name.replace(':', '_')}.json"
                save_checkpoint(state.student, os.path.join(out_dir, name))
    mean_r1, std_r1 = _mean_std(rank1_all)
    mean_map, std_map = _mean_std(map_all)
    report = {
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "fast": fast,
        "runs": runs,
        "summary": {"mean_rank1": mean_r1, "std_rank1": std_r1,
                    "mean_mAP": mean_map, "std_mAP": std_map,
                    "n_runs": len(runs)},
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write_json(report, os.path.join(out_dir, "report.json"))
    return report


def apply_sweep_value(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "tau_kd_u":
        return replace(base, temps=replace(base.temps, tau_kd_u=float(value)))
    if axis == "unlabeled_fraction":
        return replace(base, unlabeled_fraction=float(value))
    if axis == "teacher_capacity":
        dims = tuple(int(h) for h in value)
        return replace(base, teacher=replace(base.teacher, hidden_dims=dims))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def sweep(sweep_cfg: SweepConfig, out_dir: Optional[str] = None,
          fast: bool = False) -> dict:
    """Run the base config once per axis value and aggregate one row each."""
    rows = []
    for value in sweep_cfg.values:
        cfg = apply_sweep_value(sweep_cfg.base, sweep_cfg.axis, value)
        report = run(cfg, out_dir=None, fast=fast)
        rows.append({"value": value, **report["summary"]})
    doc = {"axis": sweep_cfg.axis,
           "base_config": config_to_dict(sweep_cfg.base),
           "base_config_hash": config_hash(sweep_cfg.base),
           "fast": fast,
           "rows": rows}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write_json(doc, os.path.join(out_dir, "sweep_report.json"))
        csv_path = os.path.join(out_dir, "sweep.csv")
        tmp = f"{csv_path}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "value", "mean_rank1", "std_rank1",
                             "mean_mAP", "std_mAP"])
            for row in rows:
                writer.writerow([sweep_cfg.axis, json.dumps(row["value"]),
                                 row["mean_rank1"], row["std_rank1"],
                                 row["mean_mAP"], row["std_mAP"]])
        os.replace(tmp, csv_path)
    return doc


def sweep_config_from_dict(doc: dict) -> SweepConfig:
    if not isinstance(doc, dict) or "axis" not in doc or "base" not in doc:
        raise ConfigError("sweep config requires 'axis', 'values' and 'base'")
    values = doc.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep 'values' must be a non-empty list")
    base = config_from_dict(doc["base"])
    sc = SweepConfig(axis=str(doc["axis"]),
                     values=tuple(tuple(v) if isinstance(v, list) else v
                                  for v in values),
                     base=base)
    for v in sc.values:  # fail fast on unusable values
        apply_sweep_value(base, sc.axis, v)
    return sc
