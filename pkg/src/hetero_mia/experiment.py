"""Config-driven experiment runner and result tables.

One repeat ``r`` runs: split -> heterogeneity(attacker, target) -> federated
training of the target -> shadow attack -> one challenge per ``rho``.  All of
its randomness hangs off ``derive_seed(master_seed, r)``, so a repeat's
result does not depend on how many repeats are requested or on the worker
count.

Outputs (under ``output_dir``): ``report.json`` (bit-reproducible, so it
carries no wall-clock data), ``timings.json``, ``table.csv``, ``table.md``,
and ``runs/<index>/`` with the split, per-round target snapshots, a run
manifest and per-point attack scores.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .attack import FEATURES, AttackConfig, run_attack, train_shadow_attack
from .dataset import TabularDataset, gen_synthetic, load_csv, load_schema, load_synthetic_spec, preprocess
from .errors import ConfigError, DataError, HeteroMIAError
from .fedavg import FLConfig, RoundSnapshot, run_rounds
from .metric import HeterogeneityReport, heterogeneity
from .model import Architecture, TrainConfig, accuracy, init_model
from .seeding import derive_seed
from .splitting import SplitOutput, SplitPlan, build_challenge, split, third_count

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "RunRecord",
    "load_config",
    "config_from_dict",
    "load_data",
    "run_repeat",
    "repeat_split",
    "repeat_heterogeneity",
    "run_experiment",
    "emit_table",
    "table_rows",
    "write_outputs",
]

logger = logging.getLogger(__name__)

# child-seed coordinates inside one repeat
_SPLIT, _FL, _INIT, _ATTACK, _CHALLENGE = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    split: SplitPlan
    fl: FLConfig
    attack: AttackConfig
    rhos: tuple[float, ...] = (0.0,)
    per_side: int | None = None
    hidden: tuple[int, ...] = (32,)
    data_path: Path | None = None
    schema_path: Path | None = None
    synthetic_path: Path | None = None
    synthetic_seed: int = 0
    metric_standardize: bool = False
    model_standardize: bool = True
    train_target: bool = True
    repeats: int = 10
    seed: int = 0
    output_dir: Path | None = None
    workers: int = 1
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.rhos or any(not 0 <= r <= 1 for r in self.rhos):
            raise ConfigError(f"rho values must lie in [0, 1], got {list(self.rhos)}")
        if self.per_side is not None and self.per_side < 1:
            raise ConfigError("challenge per_side must be >= 1")
        if (self.data_path is None) == (self.synthetic_path is None):
            raise ConfigError("dataset needs exactly one of 'path' (with 'schema') or 'synthetic'")
        if self.data_path is not None and self.schema_path is None:
            raise ConfigError("dataset 'path' needs a 'schema'")
        if self.split.strategy == "uniform" and any(r > 0 for r in self.rhos):
            raise ConfigError("rho > 0 needs a third distribution; only the natural split provides one")
        if self.split.strategy == "natural" and any(r > 0 for r in self.rhos) and not self.split.roles.get("third"):
            raise ConfigError("rho > 0 needs a 'third' role in the split")
        for p in (self.data_path, self.schema_path, self.synthetic_path):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"referenced file does not exist: {p}")

    @property
    def dataset_name(self) -> str:
        return str(self.raw.get("dataset", {}).get("name") or self.name)


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p).resolve()


def _train_config(raw: Mapping[str, Any], defaults: TrainConfig) -> TrainConfig:
    keys = ("lr", "epochs", "batch_size", "seed", "l2")
    return replace(defaults, **{k: type(getattr(defaults, k))(raw[k]) for k in keys if k in raw})


def config_from_dict(raw: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig`; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    raw = copy.deepcopy(dict(raw))
    try:
        data = raw.get("dataset", {})
        pre = raw.get("preprocess", {})
        sp = raw.get("split", {})
        ch = raw.get("challenge", {})
        fl = raw.get("fl", {})
        at = raw.get("attack", {})
        sizes = sp.get("sizes")
        if isinstance(sizes, Mapping):
            sizes = (sizes["attacker"], sizes["target"], sizes["nonmember"])
        plan = SplitPlan(
            strategy=sp.get("strategy", "uniform"),
            sizes=None if sizes is None else tuple(float(s) for s in sizes),
            roles=sp.get("roles", {}),
            holdout_fraction=float(sp.get("holdout_fraction", 0.2)),
        )
        local = _train_config(fl, TrainConfig())
        flc = FLConfig(
            clients=int(fl.get("clients", 4)),
            rounds=int(fl.get("rounds", 10)),
            local_epochs=int(fl.get("local_epochs", 2)),
            partition=fl.get("partition", "uniform"),
            train=local,
        )
        clf = at.get("classifier", {})
        shadow = at.get("shadow")
        atc = AttackConfig(
            features=tuple(at.get("features", FEATURES)),
            rounds=at.get("rounds"),
            shadow_train=None if shadow is None else _train_config(shadow, local),
            classifier_train=_train_config(clf, AttackConfig().classifier_train),
            classifier_hidden=tuple(clf.get("hidden", (16,))),
            shadow_member_fraction=float(at.get("shadow_member_fraction", 0.5)),
            shadow_federated=bool(at.get("shadow_federated", False)),
        )
        rhos = ch.get("rho", raw.get("rho", [0.0]))
        if not isinstance(rhos, (list, tuple)):
            rhos = [rhos]
        out = raw.get("output_dir")
        kwargs = dict(
            name=str(raw.get("name", "experiment")),
            split=plan,
            fl=flc,
            attack=atc,
            rhos=tuple(float(r) for r in rhos),
            per_side=None if ch.get("per_side") is None else int(ch["per_side"]),
            hidden=tuple(int(h) for h in raw.get("model", {}).get("hidden", (32,))),
            data_path=_resolve(base, data.get("path")),
            schema_path=_resolve(base, data.get("schema")),
            synthetic_path=_resolve(base, data.get("synthetic")),
            synthetic_seed=int(data.get("synthetic_seed", 0)),
            metric_standardize=bool(pre.get("metric_standardize", False)),
            model_standardize=bool(pre.get("model_standardize", True)),
            train_target=bool(raw.get("train_target", True)),
            repeats=int(raw.get("repeats", 10)),
            seed=int(raw.get("seed", 0)),
            output_dir=_resolve(base, out),
            workers=int(raw.get("workers", 1)),
            raw=raw,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed experiment config: {exc!r}") from exc
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path, seed: int | None = None, output_dir: str | Path | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} is not a mapping")
    if seed is not None:
        raw["seed"] = int(seed)
    if output_dir is not None:
        raw["output_dir"] = str(Path(output_dir).resolve())
    return config_from_dict(raw, path.parent)


# --------------------------------------------------------------------------- data


def load_data(cfg: ExperimentConfig) -> tuple[TabularDataset, TabularDataset]:
    """Return (metric view, model view) of the configured dataset.

    Both views share rows, labels and groups; they differ only in whether
    numeric columns are standardized (statistics over the whole file).
    """
    if cfg.synthetic_path is not None:
        base = gen_synthetic(load_synthetic_spec(cfg.synthetic_path), cfg.synthetic_seed)
        return (
            preprocess(base, standardize=cfg.metric_standardize),
            preprocess(base, standardize=cfg.model_standardize),
        )
    raw = load_csv(cfg.data_path, load_schema(cfg.schema_path))
    return (
        preprocess(raw, standardize=cfg.metric_standardize),
        preprocess(raw, standardize=cfg.model_standardize),
    )


# --------------------------------------------------------------------------- runs


@dataclass
class RunRecord:
    repeat: int
    seed: int
    status: str = "ok"
    error: str | None = None
    heterogeneity: dict | None = None
    results: dict[float, dict] = field(default_factory=dict)
    per_side: int | None = None
    target_train_accuracy: float | None = None
    target_holdout_accuracy: float | None = None
    attack_train_accuracy: float | None = None
    split: dict | None = None
    snapshots: list[dict] | None = None
    client_sizes: list[int] | None = None
    scores: dict[float, dict] | None = None

    def to_dict(self) -> dict:
        return {
            "repeat": self.repeat,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "heterogeneity": self.heterogeneity,
            "per_side": self.per_side,
            "target_train_accuracy": self.target_train_accuracy,
            "target_holdout_accuracy": self.target_holdout_accuracy,
            "attack_train_accuracy": self.attack_train_accuracy,
            "results": {_rho_key(r): v for r, v in self.results.items()},
        }


def _rho_key(rho: float) -> str:
    return f"{rho:g}"


def _max_per_side(sp: SplitOutput, rhos: Sequence[float]) -> int:
    n_tgt, n_same, n_third = len(sp.target_idx), len(sp.nonmember_pool_same_idx), len(sp.nonmember_pool_third_idx)
    for p in range(min(n_tgt, n_same + n_third), 0, -1):
        if all(third_count(p, r) <= n_third and p - third_count(p, r) <= n_same for r in rhos):
            return p
    raise DataError("no challenge size satisfies every rho with the available pools")


def repeat_split(cfg: ExperimentConfig, repeat: int, ds: TabularDataset) -> SplitOutput:
    """The split repeat ``repeat`` uses (same seed derivation as :func:`run_repeat`)."""
    return split(ds, replace(cfg.split, seed=derive_seed(derive_seed(cfg.seed, repeat), _SPLIT)))


def repeat_heterogeneity(
    cfg: ExperimentConfig, repeat: int, data: tuple[TabularDataset, TabularDataset] | None = None
) -> HeterogeneityReport:
    """Heterogeneity between attacker and target sets of one repeat, without any training."""
    metric_ds, model_ds = data if data is not None else load_data(cfg)
    sp = repeat_split(cfg, repeat, model_ds)
    return heterogeneity(metric_ds.subset(sp.attacker_idx), metric_ds.subset(sp.target_idx))


def run_repeat(
    cfg: ExperimentConfig,
    repeat: int,
    data: tuple[TabularDataset, TabularDataset] | None = None,
    keep_artifacts: bool = False,
) -> RunRecord:
    """One full pipeline pass; stage errors are recorded, not raised."""
    seed = derive_seed(cfg.seed, repeat)
    record = RunRecord(repeat=repeat, seed=seed)
    try:
        metric_ds, model_ds = data if data is not None else load_data(cfg)
        sp = repeat_split(cfg, repeat, model_ds)
        record.heterogeneity = heterogeneity(metric_ds.subset(sp.attacker_idx), metric_ds.subset(sp.target_idx)).to_dict()

        target = model_ds.subset(sp.target_idx)
        fl = replace(cfg.fl, seed=derive_seed(seed, _FL))
        if cfg.train_target:
            snaps = run_rounds(target, fl, derive_seed(seed, _INIT), cfg.hidden)
        else:
            arch = Architecture.mlp(model_ds.d, model_ds.n_classes, cfg.hidden)
            snaps = [RoundSnapshot(r, init_model(arch, derive_seed(seed, _INIT)), ()) for r in range(1, fl.rounds + 1)]
        final = snaps[-1].params
        record.target_train_accuracy = accuracy(final, target.features, target.labels)
        held = model_ds.subset(sp.nonmember_pool_same_idx)
        record.target_holdout_accuracy = accuracy(final, held.features, held.labels) if held.n else None

        atk_cfg = replace(cfg.attack, seed=derive_seed(seed, _ATTACK))
        atk_model = train_shadow_attack(model_ds.subset(sp.attacker_idx), fl, atk_cfg, cfg.hidden)
        record.attack_train_accuracy = atk_model.train_accuracy

        per_side = cfg.per_side or _max_per_side(sp, cfg.rhos)
        record.per_side = per_side
        scores = {}
        for rho in cfg.rhos:
            challenge = build_challenge(sp, model_ds, per_side, rho, derive_seed(seed, _CHALLENGE))
            result = run_attack(atk_model, snaps, challenge, atk_cfg)
            record.results[rho] = {k: v for k, v in result.to_dict().items() if k != "config"}
            scores[rho] = result.to_dict(with_scores=True)
        if keep_artifacts:
            record.split = sp.to_dict()
            record.snapshots = [s.params.to_dict() for s in snaps]
            record.client_sizes = list(snaps[0].client_sizes)
            record.scores = scores
    except (HeteroMIAError, ValueError, KeyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        logger.warning("repeat %d failed: %s", repeat, record.error)
    return record


def _run_repeat_worker(args) -> tuple[RunRecord, float]:
    cfg, repeat, keep = args
    start = time.perf_counter()
    record = run_repeat(cfg, repeat, keep_artifacts=keep)
    return record, time.perf_counter() - start


@dataclass
class ExperimentReport:
    name: str
    dataset: str
    splitting: str
    rhos: tuple[float, ...]
    runs: list[RunRecord]
    config: dict
    timings: dict = field(default_factory=dict)

    @property
    def successful(self) -> list[RunRecord]:
        return [r for r in self.runs if r.status == "ok"]

    def accuracies(self, rho: float) -> list[float]:
        return [r.results[rho]["accuracy"] for r in self.successful]

    def heterogeneities(self) -> list[float]:
        return [r.heterogeneity["average"] for r in self.successful]

    def aggregates(self) -> dict[str, dict]:
        """Mean and population std (ddof=0) over successful runs, per rho."""
        het = np.array(self.heterogeneities())
        out = {}
        for rho in self.rhos:
            acc = np.array(self.accuracies(rho))
            out[_rho_key(rho)] = {
                "rho": rho,
                "accuracy_mean": float(acc.mean()),
                "accuracy_std": float(acc.std()),
                "heterogeneity_mean": float(het.mean()),
                "heterogeneity_std": float(het.std()),
                "n_runs": int(len(acc)),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "splitting": self.splitting,
            "rhos": list(self.rhos),
            "n_runs": len(self.runs),
            "n_failed": len(self.runs) - len(self.successful),
            "aggregates": self.aggregates(),
            "runs": [r.to_dict() for r in self.runs],
            "config": self.config,
        }


def _config_echo(cfg: ExperimentConfig) -> dict:
    return {
        # output location and worker count do not change results; keep them out so reports compare equal
        "raw": json.loads(json.dumps({k: v for k, v in cfg.raw.items() if k not in ("output_dir", "workers")}, default=str)),
        "resolved": {
            "name": cfg.name,
            "split": cfg.split.to_dict(),
            "fl": {
                "clients": cfg.fl.clients,
                "rounds": cfg.fl.rounds,
                "local_epochs": cfg.fl.local_epochs,
                "partition": cfg.fl.partition,
                "train": vars(cfg.fl.train).copy(),
            },
            "attack": cfg.attack.to_dict(),
            "rhos": list(cfg.rhos),
            "per_side": cfg.per_side,
            "hidden": list(cfg.hidden),
            "metric_standardize": cfg.metric_standardize,
            "model_standardize": cfg.model_standardize,
            "train_target": cfg.train_target,
            "repeats": cfg.repeats,
            "seed": cfg.seed,
        },
    }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Run every repeat, aggregate, and (if ``output_dir`` is set and ``write``) persist."""
    t0 = time.perf_counter()
    keep = write and cfg.output_dir is not None
    per_run: list[float] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_repeat_worker, [(cfg, r, keep) for r in range(cfg.repeats)]))
        runs = [rec for rec, _ in outcomes]
        per_run = [dt for _, dt in outcomes]
    else:
        data = load_data(cfg)
        runs = []
        for r in range(cfg.repeats):
            start = time.perf_counter()
            runs.append(run_repeat(cfg, r, data, keep_artifacts=keep))
            per_run.append(time.perf_counter() - start)
    report = ExperimentReport(
        name=cfg.name,
        dataset=cfg.dataset_name,
        splitting=cfg.split.strategy,
        rhos=cfg.rhos,
        runs=runs,
        config=_config_echo(cfg),
        timings={"total_seconds": time.perf_counter() - t0, "per_repeat_seconds": per_run},
    )
    if not report.successful:
        errors = "; ".join(sorted({r.error for r in runs if r.error}))
        raise RuntimeError(f"all {len(runs)} runs failed: {errors}")
    if keep:
        write_outputs(report, cfg.output_dir)
    return report


# --------------------------------------------------------------------------- tables

TABLE_COLUMNS = ("dataset", "splitting", "rho", "heterogeneity", "accuracy_mean", "accuracy_std", "n_runs")


def table_rows(reports: ExperimentReport | Sequence[ExperimentReport]) -> list[dict[str, str]]:
    """Rendered rows, one per (dataset, splitting, rho).

    Heterogeneity is the mean metric over runs in scientific notation with
    three significant digits; accuracy mean/std are percentages with two
    decimals.
    """
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    rows = []
    for rep in reports:
        for agg in rep.aggregates().values():
            rows.append(
                {
                    "dataset": rep.dataset,
                    "splitting": rep.splitting,
                    "rho": f"{agg['rho']:g}",
                    "heterogeneity": f"{agg['heterogeneity_mean']:.2e}",
                    "accuracy_mean": f"{100 * agg['accuracy_mean']:.2f}",
                    "accuracy_std": f"{100 * agg['accuracy_std']:.2f}",
                    "n_runs": str(agg["n_runs"]),
                }
            )
    return rows


def emit_table(
    reports: ExperimentReport | Sequence[ExperimentReport],
    fmt: str,
    path: str | Path | None = None,
) -> str:
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    if not reports:
        raise ValueError("no reports to tabulate")
    rows = table_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    elif fmt == "markdown":
        header = ["Dataset", "Splitting", "rho", "Heterogeneity", "Accuracy (%)", "Std (%)", "Runs"]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r[c] for c in TABLE_COLUMNS) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = {
            "columns": list(TABLE_COLUMNS),
            "rows": rows,
            "configs": [{"name": rep.name, "config": rep.config} for rep in reports],
        }
        text = json.dumps(payload, indent=2) + "\n"
    else:
        raise ValueError(f"unknown table format {fmt!r}; use csv, markdown or json")
    if path is not None:
        Path(path).write_text(text)
    return text


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_outputs(report: ExperimentReport, out_dir: str | Path) -> None:
    """Persist the report, tables, timings and per-run artifacts in run-index order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "report.json", report.to_dict())
    _dump(out / "timings.json", report.timings)
    emit_table(report, "csv", out / "table.csv")
    emit_table(report, "markdown", out / "table.md")
    for rec in report.runs:
        run_dir = out / "runs" / f"{rec.repeat:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "repeat": rec.repeat,
            "seed": rec.seed,
            "status": rec.status,
            "error": rec.error,
            "client_sizes_per_round": (
                [rec.client_sizes] * len(rec.snapshots) if rec.snapshots and rec.client_sizes is not None else None
            ),
            "fl": report.config["resolved"]["fl"],
        }
        _dump(run_dir / "manifest.json", manifest)
        if rec.split is not None:
            _dump(run_dir / "split.json", rec.split)
        if rec.snapshots is not None:
            snap_dir = run_dir / "snapshots"
            snap_dir.mkdir(exist_ok=True)
            for i, snap in enumerate(rec.snapshots, start=1):
                (snap_dir / f"round_{i:03d}.json").write_text(json.dumps(snap))
        if rec.scores is not None:
            _dump(run_dir / "attack.json", {_rho_key(r): {k: v for k, v in s.items() if k not in ("scores", "membership", "indices")} for r, s in rec.scores.items()})
            with (run_dir / "scores.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["rho", "index", "membership", "score"])
                for rho, s in rec.scores.items():
                    for idx, bit, score in zip(s["indices"], s["membership"], s["scores"]):
                        writer.writerow([_rho_key(rho), idx, bit, repr(score)])
