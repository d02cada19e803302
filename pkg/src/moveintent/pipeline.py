"""Config-driven experiment stages shared by the command line and the tests.

Directory layout under ``out_dir``::

    sessions/<session_id>/          generated sessions (synth stage)
    events/<session_id>.jsonl       extracted events, plus agreement.json
    datasets/<condition>_{train,test}.{json,bin}
    models/<variant>/<condition>/   checkpoint, metrics.json, evaluation.json
    ablation/<variant>/<condition>/ ablation.csv + ablation.meta.json
    viz/<variant>/<condition>/      viz_<layer>_<unit>.f32 + .json
    report/                         report.csv, report.txt, report.meta.json

All seeds come from ``derive_seed(config.seed, ...)`` with the labels noted
at each call site.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import analysis
from .dataset import (
    SampleSet,
    build_dataset,
    concatenate,
    holdout,
    load_sampleset,
    save_sampleset,
    select_events,
    split_and_balance,
)
from .errors import ConfigError, DataError
from .events import agreement, extract_events, get_condition, read_events_jsonl, write_events_jsonl
from .models.checkpoint import load_checkpoint, save_checkpoint
from .models.config import VARIANTS, TrainConfig
from .models.svm import SvmConfig, select_lambda, spectral_features, svm_predict
from .models.train import evaluate, train
from .models.zoo import build_model, config_for
from .seeds import derive_seed
from .session import load_session
from .synth import SynthSpec, generate_session

log = logging.getLogger(__name__)


class SessionPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    day: int
    count: int = Field(1, ge=1)


def _default_plan() -> list[SessionPlan]:
    return [SessionPlan(day=d) for d in (2, 3, 4, 5)] + [SessionPlan(day=6, count=2)]


class SynthPlan(BaseModel):
    """Sessions to generate: one SynthSpec template, varied by day and seed."""

    model_config = ConfigDict(extra="forbid")

    spec: dict = Field(default_factory=dict)
    sessions: list[SessionPlan] = Field(default_factory=_default_plan)

    @field_validator("spec")
    @classmethod
    def _valid_spec(cls, v):
        for key in ("day", "session_id", "seed"):
            if key in v:
                raise ValueError(f"synth.spec.{key} is assigned per session; remove it")
        SynthSpec(**v)
        return v


class AblationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stage: Literal["pre", "post"] = "pre"
    electrodes: list[int] | None = None


class VizSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layer: str = "ecog_conv1"
    unit: int = 0
    steps: int = Field(256, ge=0)
    step_size: float | None = None
    norm_bound: float | None = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    out_dir: Path = Path("run")
    sessions: list[Path] = Field(default_factory=list)
    synth: SynthPlan | None = None
    train_days: list[int] = Field(default_factory=lambda: [2, 3, 4, 5])
    test_day: int = 6
    joint: str = "r_wrist"
    rest_ratio: float = Field(1.25, gt=0)
    variants: list[str] = Field(default_factory=lambda: ["late_fusion"])
    conditions: list[str] = Field(default_factory=lambda: ["det"])
    shuffle_labels: bool = False
    train: TrainConfig = Field(default_factory=TrainConfig)
    model: dict = Field(default_factory=dict)
    svm: SvmConfig = Field(default_factory=SvmConfig)
    ablation: AblationSettings = Field(default_factory=AblationSettings)
    viz: VizSettings = Field(default_factory=VizSettings)

    @field_validator("variants")
    @classmethod
    def _variants(cls, v):
        bad = [x for x in v if x not in VARIANTS]
        if bad:
            raise ValueError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
        return v

    @field_validator("conditions")
    @classmethod
    def _conditions(cls, v):
        return [get_condition(c).name for c in v]

    def config_hash(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        body = self.model_dump(mode="json", exclude={"out_dir"})
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def dataset_id(self) -> str:
        """Hash of the inputs that define the samples, shared by every condition."""
        body = self.model_dump(mode="json", include={"seed", "sessions", "synth", "train_days",
                                                     "test_day", "joint", "rest_ratio"})
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed}


def load_config(path: Path | None, **overrides) -> ExperimentConfig:
    """Read YAML or JSON, apply non-None overrides, validate."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a mapping at top level")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    tmp.replace(path)


# -- stages --------------------------------------------------------------------

def session_dirs(cfg: ExperimentConfig) -> list[Path]:
    dirs = [Path(p) for p in cfg.sessions]
    if cfg.synth is not None:
        dirs += [cfg.out_dir / "sessions" / sid for sid, _, _ in _synth_entries(cfg)]
    if not dirs:
        raise ConfigError("config lists no sessions and no synth plan")
    return dirs


def _synth_entries(cfg: ExperimentConfig):
    k = 0
    for plan in cfg.synth.sessions:
        for _ in range(plan.count):
            yield f"day{plan.day}_s{k}", plan.day, derive_seed(cfg.seed, "synth", k)
            k += 1


def run_synth(cfg: ExperimentConfig) -> list[Path]:
    if cfg.synth is None:
        raise ConfigError("the synth stage needs a 'synth' section in the config")
    out = []
    for sid, day, seed in _synth_entries(cfg):
        spec = SynthSpec(**cfg.synth.spec, session_id=sid, day=day, seed=seed)
        d = cfg.out_dir / "sessions" / sid
        generate_session(spec, d)
        out.append(d)
        log.info("wrote session %s", d)
    return out


def _load(path: Path):
    if not Path(path).exists():
        raise DataError(f"session {path} does not exist; run the synth stage first")
    return load_session(Path(path))


def run_events(cfg: ExperimentConfig, manual: dict[str, Path] | None = None) -> dict:
    """Extract events per session and score them against truth (or a manual file)."""
    report = {}
    (cfg.out_dir / "events").mkdir(parents=True, exist_ok=True)
    for d in session_dirs(cfg):
        s = _load(d)
        events = extract_events(s.pose, cfg.joint, s.alignment)
        write_events_jsonl(cfg.out_dir / "events" / f"{s.session_id}.jsonl", events)
        ref_path = (manual or {}).get(s.session_id)
        ref = read_events_jsonl(ref_path) if ref_path else s.truth
        auto_init = [e for e in events if e.kind == "initiation"]
        ref_init = [e for e in ref if e.kind == "initiation"]
        report[s.session_id] = agreement(auto_init, ref_init)
    _write_json(cfg.out_dir / "events" / "agreement.json", {**cfg.stamp(), "sessions": report})
    return report


def dataset_path(cfg: ExperimentConfig, condition: str, split: str) -> Path:
    return cfg.out_dir / "datasets" / f"{condition}_{split}"


def run_dataset(cfg: ExperimentConfig) -> dict[str, tuple[SampleSet, SampleSet]]:
    """Build balanced, day-split train/test sets for every condition and cache them."""
    per_cond: dict[str, list[SampleSet]] = {c: [] for c in cfg.conditions}
    for d in session_dirs(cfg):
        s = _load(d)
        ev_file = cfg.out_dir / "events" / f"{s.session_id}.jsonl"
        events = read_events_jsonl(ev_file) if ev_file.exists() else \
            extract_events(s.pose, cfg.joint, s.alignment)
        chosen = select_events(events, derive_seed(cfg.seed, "rests", s.session_id), cfg.rest_ratio)
        for c in cfg.conditions:
            per_cond[c].append(build_dataset(s, chosen, c, cfg.joint))
        s.drop_cache()
    out = {}
    meta = {**cfg.stamp(), "dataset_id": cfg.dataset_id()}
    for c, sets in per_cond.items():
        tr, te = split_and_balance(concatenate(sets), cfg.train_days, cfg.test_day,
                                   derive_seed(cfg.seed, "split", c))
        save_sampleset(tr, dataset_path(cfg, c, "train"), meta)
        save_sampleset(te, dataset_path(cfg, c, "test"), meta)
        out[c] = (tr, te)
    return out


def load_split(cfg: ExperimentConfig, condition: str) -> tuple[SampleSet, SampleSet]:
    """Cached train/test sets; a cache built from a different dataset config is rejected."""
    out = []
    for split in ("train", "test"):
        path = dataset_path(cfg, condition, split)
        header = path.with_suffix(".json")
        if header.exists():
            meta = json.loads(header.read_text()).get("meta", {})
            if meta.get("dataset_id") != cfg.dataset_id():
                raise DataError(f"{header} was built from a different dataset config; rerun 'dataset'")
        out.append(load_sampleset(path))
    return out[0], out[1]


def model_dir(cfg: ExperimentConfig, variant: str, condition: str) -> Path:
    return cfg.out_dir / "models" / variant / condition


def train_one(cfg: ExperimentConfig, variant: str, condition: str,
              data: tuple[SampleSet, SampleSet] | None = None) -> dict:
    train_set, test_set = data or load_split(cfg, condition)
    if cfg.shuffle_labels:
        # chance-level control: training labels permuted, test labels intact
        rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle", condition))
        train_set = train_set.with_labels(rng.permutation(train_set.labels))
    fit, valid = holdout(train_set, cfg.train.validation_fraction,
                         derive_seed(cfg.seed, "holdout", condition))
    base = {"variant": variant, "condition": condition, "seed": cfg.seed,
            "config_hash": cfg.config_hash(), "dataset_id": cfg.dataset_id()}
    out = model_dir(cfg, variant, condition)
    if variant == "svm_spectral":
        fx, vx = spectral_features(fit), spectral_features(valid)
        model, scores = select_lambda(fx, fit.labels, vx, valid.labels, cfg.svm)
        train_acc = float(np.mean(svm_predict(model, fx) == fit.labels))
        metrics = {**base, "train_acc": train_acc, "valid_acc": scores[model.lam],
                   "test_acc": analysis.score(model, test_set), "epochs_ran": 0,
                   "run_index_selected": 0, "lambda": model.lam,
                   "lambda_scores": {f"{k:g}": v for k, v in scores.items()}}
    else:
        tcfg = cfg.train.model_copy(update={"seed": derive_seed(cfg.seed, "train", variant, condition)})
        mcfg = config_for(train_set, variant, derive_seed(cfg.seed, "model", variant, condition),
                          **cfg.model)
        res = train(build_model(mcfg), fit, valid, tcfg)
        model = res.model
        metrics = {**base, "train_acc": res.train_acc, "valid_acc": res.valid_acc,
                   "test_acc": evaluate(model, test_set).accuracy, "epochs_ran": res.epochs_ran,
                   "run_index_selected": res.selected,
                   "runs": [{"run_index": r.run_index, "best_valid_acc": r.best_valid_acc,
                             "best_epoch": r.best_epoch, "epochs": len(r.history),
                             "diverged": r.diverged} for r in res.runs]}
    save_checkpoint(model, out, {"config_hash": cfg.config_hash(), "dataset_id": cfg.dataset_id()})
    _write_json(out / "metrics.json", metrics)
    return metrics


def run_train(cfg: ExperimentConfig) -> list[dict]:
    return [train_one(cfg, v, c) for c in cfg.conditions for v in cfg.variants]


def run_evaluate(cfg: ExperimentConfig) -> list[dict]:
    results = []
    for c in cfg.conditions:
        _, test_set = load_split(cfg, c)
        for v in cfg.variants:
            model = load_checkpoint(model_dir(cfg, v, c))
            if v == "svm_spectral":
                x = spectral_features(test_set, model.bands, model.log_power)
                margin = model.decision_function(x)
                pred = svm_predict(model, x)
                body = {"accuracy": float(np.mean(pred == test_set.labels)),
                        "decision": [float(m) for m in margin]}
            else:
                ev = evaluate(model, test_set)
                body = {"accuracy": ev.accuracy, "probabilities": [float(p) for p in ev.probabilities]}
            body.update({"variant": v, "condition": c, "n": len(test_set), **cfg.stamp(),
                         "labels": [int(x) for x in test_set.labels]})
            _write_json(model_dir(cfg, v, c) / "evaluation.json", body)
            results.append(body)
    return results


def run_ablate(cfg: ExperimentConfig, jobs: int = 1) -> list[analysis.AblationMap]:
    maps = []
    for c in cfg.conditions:
        _, test_set = load_split(cfg, c)
        for v in cfg.variants:
            model = load_checkpoint(model_dir(cfg, v, c))
            amap = analysis.ablation_map(model, test_set, cfg.ablation.stage, jobs,
                                         cfg.ablation.electrodes)
            all_acc = analysis.ablate_all(model, test_set, cfg.ablation.stage)
            d = cfg.out_dir / "ablation" / v / c
            _write_text(d / "ablation.csv", amap.to_csv())
            _write_json(d / "ablation.meta.json", {
                **cfg.stamp(), "variant": v, "condition": c, "stage": cfg.ablation.stage,
                "original_acc": amap.original_accuracy, "worst_case_delta": amap.worst_case_delta,
                "all_ablated_acc": all_acc,
            })
            maps.append(amap)
    return maps


def run_viz(cfg: ExperimentConfig) -> list[analysis.VizResult]:
    out = []
    s = cfg.viz
    for c in cfg.conditions:
        for v in cfg.variants:
            if v in ("svm_spectral", "naive_average"):
                log.warning("skipping %s: not a single network", v)
                continue
            model = load_checkpoint(model_dir(cfg, v, c))
            if s.layer not in model.layers:
                log.warning("skipping %s: it has no layer %s", v, s.layer)
                continue
            res = analysis.visualize_unit(model, s.layer, s.unit, s.steps, s.step_size, s.norm_bound,
                                          derive_seed(cfg.seed, "viz", v, c, s.layer, s.unit))
            d = cfg.out_dir / "viz" / v / c
            d.mkdir(parents=True, exist_ok=True)
            stem = f"viz_{s.layer}_{s.unit}"
            tmp = d / (stem + ".f32.partial")
            res.input.astype("<f4").tofile(tmp)
            tmp.replace(d / (stem + ".f32"))
            _write_json(d / (stem + ".json"), {
                **cfg.stamp(), "variant": v, "condition": c, "layer": s.layer, "unit": s.unit,
                "shape": list(res.input.shape), "dtype": "<f4", "trace": res.trace,
                "dead": res.dead, "norm_bound": res.norm_bound,
            })
            out.append(res)
    return out


def collect_metrics(cfg: ExperimentConfig) -> list[dict]:
    results = []
    for v in cfg.variants:
        for c in cfg.conditions:
            p = model_dir(cfg, v, c) / "metrics.json"
            if not p.exists():
                raise DataError(f"{p} missing; run the train stage first")
            results.append(json.loads(p.read_text()))
    return results


def run_report(cfg: ExperimentConfig) -> analysis.Report:
    rep = analysis.make_report(collect_metrics(cfg))
    d = cfg.out_dir / "report"
    _write_text(d / "report.csv", rep.csv)
    _write_text(d / "report.txt", rep.text)
    _write_json(d / "report.meta.json", {**cfg.stamp(), "dataset_id": cfg.dataset_id()})
    return rep


STAGES = ("synth", "events", "dataset", "train", "evaluate", "ablate", "viz", "report")


def run_all(cfg: ExperimentConfig, jobs: int = 1) -> None:
    if cfg.synth is not None:
        run_synth(cfg)
    run_events(cfg)
    run_dataset(cfg)
    run_train(cfg)
    run_evaluate(cfg)
    run_ablate(cfg, jobs)
    run_viz(cfg)
    run_report(cfg)

