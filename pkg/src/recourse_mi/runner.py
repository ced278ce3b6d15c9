"""Config-driven experiment pipeline for the recourse membership game.

One experiment: build data, split it into owner / adversary-shadow /
held-out pools, train the owner model, sample negatively-classified
member and non-member points, issue one recourse per point, score every
configured attack in both threshold directions, and persist a report
plus ROC tables. Every stage seed derives from the master seed, so a
report is reproducible byte-for-byte (timing aside) at any worker count.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import attack as attack_mod
from . import metrics as metrics_mod
from . import nn
from .attack import AttackScore, Guess, RecourseConfig, ShadowEnsemble
from .data import Dataset, SplitBundle, SyntheticSpec, generate_synthetic, load_tabular, split, standardize
from .nn import Model, TrainConfig, VaeModel
from .recourse import CostFn, RecourseResult, ScfeParams, SearchParams
from .seeds import derive_seed, rng_for

SCHEMA_VERSION = 1
KNOWN_ATTACKS = ("cfd", "cfd_lrt", "loss", "loss_lrt")


class ConfigError(ValueError):
    """Bad experiment configuration (unknown keys, missing fields, ...)."""


class GameSetupError(RuntimeError):
    """The game cannot be played as configured (e.g. too few negatives)."""


@dataclass(frozen=True)
class GameSample:
    """One game round: a negatively classified point, its ground-truth
    membership, and the single recourse issued for it."""

    point_id: str
    point: np.ndarray
    label: int
    membership: Guess
    recourse: RecourseResult


@dataclass
class ExperimentConfig:
    data: dict
    model_architecture: list[int]
    train: TrainConfig
    recourse: RecourseConfig
    attacks: list[str]
    n_shadow_models: int
    alpha_grid: list[float]
    owner_n: int
    shadow_n: int
    eval_out_n: int
    eval_points: int
    seed: int
    out_dir: str | None = None
    workers: int = 1
    experiment_id: str = "experiment"
    vae_train: TrainConfig | None = None
    snapshot: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    master_seed: int
    experiment_id: str
    model_meta: dict
    game_meta: dict
    attack_metrics: dict[str, dict[str, metrics_mod.MetricsReport]]
    best_direction: dict[str, str]
    scores: dict[str, list[AttackScore]]
    membership: dict[str, str]
    timing: dict[str, float]
    data_provenance: dict = field(default_factory=dict)
    version: str = "0.1.0"

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "experiment_id": self.experiment_id,
            "config": self.config,
            "master_seed": self.master_seed,
            "data_provenance": self.data_provenance,
            "model": self.model_meta,
            "game": self.game_meta,
            "attacks": {
                name: {
                    "directions": {
                        direction: rep.to_json()
                        for direction, rep in dirs.items()
                    },
                    "best_direction": self.best_direction[name],
                }
                for name, dirs in self.attack_metrics.items()
            },
            "scores": {
                name: [
                    dict(sc.to_json(), membership=self.membership[sc.point_id])
                    for sc in score_list
                ]
                for name, score_list in self.scores.items()
            },
            "timing": self.timing,
        }

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "report.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name, score_list in self.scores.items():
            with open(out_dir / f"scores_{name}.jsonl", "w", encoding="utf-8") as fh:
                for sc in score_list:
                    rec = dict(sc.to_json(), membership=self.membership[sc.point_id])
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for name, dirs in self.attack_metrics.items():
            for direction in dirs:
                curve = self._curves[name][direction]
                metrics_mod.export_log_roc(curve, out_dir / f"roc_{name}_{direction}.csv")
        return report_path

    # curves kept out of the JSON report but persisted as CSV
    _curves: dict = field(default_factory=dict)


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; results are independent of worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- configuration ---------------------------------------------------------

_DEFAULT_CONFIG: dict[str, Any] = {
    "experiment_id": "experiment",
    "data": {
        "kind": "synthetic",
        "d": 20,
        "n_per_class": 2000,
        "class_separation": 1.0,
        "path": None,
        "label_column": None,
        "label_rule": "median-threshold",
        "standardize": True,
    },
    "model": {"architecture": []},
    "train": {"learning_rate": 1e-4, "epochs": 250, "batch_size": None},
    "recourse": {
        "algorithm": "scfe",
        "cost_norm": "l1",
        "immutable": [],
        "scfe": {"lam": 0.1, "lam_decay": 0.5, "max_iters": 1000,
                 "step_size": 0.05, "max_retries": 5},
        "search": {"initial_radius": 0.1, "radius_step": 0.1,
                   "samples_per_radius": 500, "max_radius": 10.0},
        "vae": {"learning_rate": 1e-3, "epochs": 200},
    },
    "attacks": {
        "which": ["cfd"],
        "n_shadow_models": 16,
        "alpha_grid": [0.01, 0.05, 0.1],
    },
    "eval": {"owner_n": 1000, "shadow_n": 2000, "eval_out_n": 1000,
             "eval_points": 200},
    "seed": 0,
    "out_dir": None,
    "workers": 1,
}


def _merge_strict(defaults: dict, given: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict) and isinstance(given.get(key), dict):
            out[key] = _merge_strict(default, given[key], f"{path}{key}.")
        elif key in given:
            out[key] = given[key]
        else:
            out[key] = default
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(path + k for k in unknown)}")
    return out


def normalize_config(raw: dict) -> dict:
    """Apply defaults and reject unknown keys; returns the full snapshot."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    raw.pop("sweep", None)  # handled by run_sweep
    snap = _merge_strict(_DEFAULT_CONFIG, raw)
    kind = snap["data"]["kind"]
    if kind not in ("synthetic", "file"):
        raise ConfigError(f"data.kind must be 'synthetic' or 'file', got {kind!r}")
    if kind == "file" and not snap["data"]["path"]:
        raise ConfigError("data.kind='file' requires data.path")
    if kind == "file" and not snap["data"]["label_column"]:
        raise ConfigError("data.kind='file' requires data.label_column")
    for a in snap["attacks"]["which"]:
        if a not in KNOWN_ATTACKS:
            raise ConfigError(f"unknown attack {a!r}; known: {KNOWN_ATTACKS}")
    ev = snap["eval"]
    if ev["eval_points"] < 2:
        raise ConfigError("eval.eval_points must be >= 2")
    return snap


def config_from_dict(raw: dict) -> ExperimentConfig:
    snap = normalize_config(raw)
    try:
        train_cfg = TrainConfig(
            learning_rate=snap["train"]["learning_rate"],
            epochs=snap["train"]["epochs"],
            batch_size=snap["train"]["batch_size"],
            seed=0,  # replaced by derived seeds per stage
        )
        rc = snap["recourse"]
        frozen = tuple(int(i) for i in rc["immutable"])
        recourse_cfg = RecourseConfig(
            algorithm=rc["algorithm"],
            cost_fn=CostFn(rc["cost_norm"]),
            scfe_params=ScfeParams(**rc["scfe"], immutable=frozen),
            search_params=SearchParams(**rc["search"], immutable=frozen),
        )
        vae_cfg = TrainConfig(
            learning_rate=rc["vae"]["learning_rate"],
            epochs=rc["vae"]["epochs"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        data=snap["data"],
        model_architecture=[int(w) for w in snap["model"]["architecture"]],
        train=train_cfg,
        recourse=recourse_cfg,
        attacks=list(snap["attacks"]["which"]),
        n_shadow_models=int(snap["attacks"]["n_shadow_models"]),
        alpha_grid=[float(a) for a in snap["attacks"]["alpha_grid"]],
        owner_n=int(snap["eval"]["owner_n"]),
        shadow_n=int(snap["eval"]["shadow_n"]),
        eval_out_n=int(snap["eval"]["eval_out_n"]),
        eval_points=int(snap["eval"]["eval_points"]),
        seed=int(snap["seed"]),
        out_dir=snap["out_dir"],
        workers=int(snap["workers"]),
        experiment_id=str(snap["experiment_id"]),
        vae_train=vae_cfg,
        snapshot=snap,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


# --- pipeline stages -------------------------------------------------------

def build_dataset(config: ExperimentConfig) -> Dataset:
    dc = config.data
    if dc["kind"] == "synthetic":
        spec = SyntheticSpec(
            d=int(dc["d"]),
            n_per_class=int(dc["n_per_class"]),
            seed=derive_seed(config.seed, "synthetic-data"),
            class_separation=float(dc["class_separation"]),
        )
        data = generate_synthetic(spec)
    else:
        data = load_tabular(dc["path"], dc["label_column"], dc["label_rule"])
    if dc["standardize"]:
        data, _ = standardize(data)
    return data


@dataclass
class PreparedExperiment:
    dataset: Dataset
    bundle: SplitBundle
    owner_model: Model
    owner_vae: VaeModel | None
    test_accuracy: float


def prepare(config: ExperimentConfig) -> PreparedExperiment:
    """Data, splits and the trained owner model (plus VAE for cchvae)."""
    data = build_dataset(config)
    bundle = split(data, config.owner_n, config.shadow_n, config.eval_out_n,
                   seed=derive_seed(config.seed, "split"))
    owner_rows = set(bundle.owner_train.provenance.get("rows", []))
    shadow_rows = set(bundle.shadow_pool.provenance.get("rows", []))
    out_rows = set(bundle.eval_out.provenance.get("rows", []))
    if owner_rows & shadow_rows or owner_rows & out_rows or shadow_rows & out_rows:
        raise GameSetupError("partition overlap detected; split is broken")

    train_cfg = TrainConfig(
        learning_rate=config.train.learning_rate,
        epochs=config.train.epochs,
        batch_size=config.train.batch_size,
        seed=derive_seed(config.seed, "owner-train"),
    )
    owner = nn.train_classifier(bundle.owner_train, config.model_architecture, train_cfg)
    owner_vae = None
    if config.recourse.algorithm == "cchvae":
        assert config.vae_train is not None
        owner_vae = nn.train_vae(bundle.owner_train, TrainConfig(
            learning_rate=config.vae_train.learning_rate,
            epochs=config.vae_train.epochs,
            seed=derive_seed(config.seed, "owner-vae"),
        ))
    return PreparedExperiment(
        dataset=data,
        bundle=bundle,
        owner_model=owner,
        owner_vae=owner_vae,
        test_accuracy=nn.accuracy(owner, bundle.eval_out),
    )


def _sample_game(config: ExperimentConfig, prep: PreparedExperiment) -> tuple[list[GameSample], dict]:
    """Draw balanced negatively-classified member/non-member points and
    issue one recourse each. Failed recourses are dropped with counts."""
    owner = prep.owner_model
    train_ds = prep.bundle.owner_train
    out_ds = prep.bundle.eval_out

    p_train = nn.predict_proba_batch(owner, train_ds.features)
    p_out = nn.predict_proba_batch(owner, out_ds.features)
    eligible = np.zeros(train_ds.n, dtype=bool)
    eligible[prep.bundle.eval_in] = True
    neg_train = np.flatnonzero((p_train < 0.5) & eligible)
    neg_out = np.flatnonzero(p_out < 0.5)
    k = config.eval_points // 2
    if neg_train.size < k or neg_out.size < k:
        raise GameSetupError(
            f"need {k} negatively-classified points per side, got "
            f"{neg_train.size} member candidates and {neg_out.size} non-member candidates"
        )
    rng = rng_for(config.seed, "game-sample")
    member_rows = np.sort(rng.choice(neg_train, size=k, replace=False))
    non_member_rows = np.sort(rng.choice(neg_out, size=k, replace=False))

    queries: list[tuple[str, np.ndarray, int, Guess]] = []
    for r in member_rows:
        queries.append((f"m{int(r):05d}", train_ds.features[r], int(train_ds.labels[r]),
                        Guess.MEMBER))
    for r in non_member_rows:
        queries.append((f"n{int(r):05d}", out_ds.features[r], int(out_ds.labels[r]),
                        Guess.NON_MEMBER))

    def issue(item: tuple[int, tuple]) -> GameSample:
        idx, (pid, x, y, membership) = item
        seed = derive_seed(config.seed, "game-recourse", idx)
        res = config.recourse.generate(owner, x, seed, vae=prep.owner_vae)
        return GameSample(point_id=pid, point=x, label=y, membership=membership,
                          recourse=res)

    raw_samples = parallel_map(issue, list(enumerate(queries)), config.workers)
    kept = [s for s in raw_samples if s.recourse.valid]
    failures = {
        "member": sum(1 for s in raw_samples
                      if s.membership is Guess.MEMBER and not s.recourse.valid),
        "non_member": sum(1 for s in raw_samples
                          if s.membership is Guess.NON_MEMBER and not s.recourse.valid),
    }
    n_m = sum(1 for s in kept if s.membership is Guess.MEMBER)
    n_n = len(kept) - n_m
    if min(n_m, n_n) == 0:
        raise GameSetupError(
            f"all recourses failed on one side (members kept {n_m}, non-members kept {n_n})"
        )
    unbalanced = abs(n_m - n_n) / max(n_m, n_n) > 0.10
    meta = {
        "n_member": n_m,
        "n_non_member": n_n,
        "requested_per_side": k,
        "recourse_failures": failures,
        "unbalanced_flag": bool(unbalanced),
    }
    return kept, meta


def play_game(config: ExperimentConfig) -> list[GameSample]:
    """Run the game protocol end to end and return its samples."""
    prep = prepare(config)
    samples, _ = _sample_game(config, prep)
    return samples


def _attack_scores(
    config: ExperimentConfig,
    prep: PreparedExperiment,
    samples: list[GameSample],
    ensemble: ShadowEnsemble | None,
) -> dict[str, list[AttackScore]]:
    # Distance attacks receive only the game transcript (and the shadow
    # ensemble); the owner model is deliberately out of reach here.
    out: dict[str, list[AttackScore]] = {}
    map_fn = lambda fn, items: parallel_map(fn, items, config.workers)
    for name in config.attacks:
        if name == "cfd":
            out[name] = attack_mod.cfd_attack_scores(samples)
        elif name == "cfd_lrt":
            assert ensemble is not None
            out[name] = attack_mod.cfd_lrt_attack_scores(
                samples, ensemble, alphas=config.alpha_grid, map_fn=map_fn,
                on_starved="skip")
        elif name == "loss":
            out[name] = attack_mod.loss_attack_scores(samples, prep.owner_model)
        elif name == "loss_lrt":
            assert ensemble is not None
            out[name] = attack_mod.loss_lrt_attack_scores(
                samples, prep.owner_model, ensemble, alphas=config.alpha_grid)
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Full pipeline; persists report.json and ROC CSVs when out_dir is set."""
    timing: dict[str, float] = {}
    t0 = time.perf_counter()
    prep = prepare(config)
    timing["prepare_s"] = time.perf_counter() - t0

    needs_shadows = any(a in ("cfd_lrt", "loss_lrt") for a in config.attacks)
    ensemble = None
    if needs_shadows:
        t1 = time.perf_counter()
        ensemble = attack_mod.train_shadow_ensemble(
            prep.bundle.shadow_pool,
            n_models=config.n_shadow_models,
            architecture=config.model_architecture,
            trainer_config=config.train,
            recourse_config=config.recourse,
            seed=derive_seed(config.seed, "shadow-ensemble"),
            map_fn=lambda fn, items: parallel_map(fn, items, config.workers),
        )
        timing["shadow_training_s"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    samples, game_meta = _sample_game(config, prep)
    timing["game_s"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    scores = _attack_scores(config, prep, samples, ensemble)
    timing["attacks_s"] = time.perf_counter() - t3

    membership = {s.point_id: s.membership.value for s in samples}
    attack_metrics: dict[str, dict[str, metrics_mod.MetricsReport]] = {}
    best_direction: dict[str, str] = {}
    curves: dict[str, dict[str, metrics_mod.RocCurve]] = {}
    for name, score_list in scores.items():
        if not score_list:
            raise GameSetupError(f"attack {name!r} produced no scores")
        values = [sc.score for sc in score_list]
        truth = [membership[sc.point_id] for sc in score_list]
        game_meta.setdefault("scored_points", {})[name] = {
            "n_scored": len(score_list),
            "n_skipped": len(samples) - len(score_list),
        }
        native_higher = score_list[0].higher_means_member
        dirs: dict[str, metrics_mod.MetricsReport] = {}
        curves[name] = {}
        for direction, higher in (("standard", native_higher),
                                  ("reversed", not native_higher)):
            curve = metrics_mod.roc(values, truth, higher_means_member=higher)
            curves[name][direction] = curve
            dirs[direction] = metrics_mod.report(curve, alphas=(0.1, 0.01))
        attack_metrics[name] = dirs
        best_direction[name] = max(dirs, key=lambda d: dirs[d].auc)

    report = ExperimentReport(
        config=config.snapshot,
        master_seed=config.seed,
        experiment_id=config.experiment_id,
        model_meta={
            "architecture": config.model_architecture,
            "train_accuracy": prep.owner_model.training_meta.get("train_accuracy"),
            "test_accuracy": prep.test_accuracy,
            "final_train_loss": prep.owner_model.training_meta.get("final_train_loss"),
        },
        game_meta=game_meta,
        attack_metrics=attack_metrics,
        best_direction=best_direction,
        scores=scores,
        membership=membership,
        timing=timing,
        data_provenance=prep.dataset.provenance,
    )
    report._curves = curves
    if config.out_dir:
        report.save(config.out_dir)
    return report


def emit_summary(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    """One CSV row per (experiment, attack, direction)."""
    if not reports:
        raise ValueError("emit_summary needs at least one report")
    lines = ["experiment_id,attack,direction,auc,ba,tpr_at_0.1,tpr_at_0.01"]
    for rep in reports:
        for name in sorted(rep.attack_metrics):
            for direction in ("standard", "reversed"):
                m = rep.attack_metrics[name][direction]
                lines.append(
                    f"{rep.experiment_id},{name},{direction},{m.auc!r},"
                    f"{m.balanced_accuracy!r},{m.tpr_at_fpr[0.1]!r},{m.tpr_at_fpr[0.01]!r}"
                )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_sweep(raw_config: dict, out_dir: str | Path | None = None) -> list[ExperimentReport]:
    """Cross-product sweep over data.d and/or master seeds.

    The config's optional "sweep" section holds {"d": [...], "seed": [...]};
    each combination runs as its own experiment and a combined summary.csv
    is written next to the per-run reports.
    """
    raw_config = dict(raw_config)
    sweep_spec = raw_config.pop("sweep", None) or {}
    unknown = set(sweep_spec) - {"d", "seed"}
    if unknown:
        raise ConfigError(f"unknown sweep key(s): {sorted(unknown)}")
    ds = sweep_spec.get("d", [None])
    seeds = sweep_spec.get("seed", [None])
    out_dir = Path(out_dir) if out_dir else None

    reports = []
    for d in ds:
        for seed in seeds:
            variant = json.loads(json.dumps(raw_config))
            parts = []
            if d is not None:
                variant.setdefault("data", {})["d"] = int(d)
                parts.append(f"d{int(d)}")
            if seed is not None:
                variant["seed"] = int(seed)
                parts.append(f"seed{int(seed)}")
            run_id = "_".join(parts) if parts else "run"
            base_id = variant.get("experiment_id", "experiment")
            variant["experiment_id"] = f"{base_id}_{run_id}" if parts else base_id
            if out_dir is not None:
                variant["out_dir"] = str(out_dir / run_id)
            cfg = config_from_dict(variant)
            reports.append(run_experiment(cfg))
    if out_dir is not None:
        emit_summary(reports, out_dir / "summary.csv")
    return reports
