"""Two-stage teacher-student training.

Stage 1 (source -> bridge): every source scan is re-simulated under a random
adverse weather, pseudo-labelled by the teacher, and exchanged with the clear
scan by universal mixing in both directions. The student is trained on the sum
of the two Dice losses and the teacher follows it by EMA. The stage-1 student
is the domain-generalization model.

Stage 2 (bridge -> target): the same procedure between bridge scans (ground
truth labels) and unlabelled target scans (teacher pseudo-labels), starting
from the stage-1 student. The stage-2 student is the adaptation model.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cloud import LabelArray
from .config import RunConfig
from .domain import DomainDataset, DomainError
from .metrics import ConfusionMatrix, accumulate, iou, miou
from .mixing import mix_pair
from .model import (
    ModelParams,
    add_gradients,
    ema_update,
    featurize,
    init_params,
    loss_and_gradient,
    predict,
    pseudo_labels,
    sgd_step,
)
from .seeding import derive_rng
from .weather import generate_bridge

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class StageReport:
    stage: str
    epochs: int = 0
    records: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add_batch(self, epoch, batch, loss_a, loss_b=None, kinds=()):
        total = loss_a if loss_b is None else loss_a + loss_b
        if not math.isfinite(total):
            raise TrainingError(
                f"{self.stage}: non-finite loss at epoch {epoch} batch {batch} "
                f"(components {loss_a!r}, {loss_b!r})"
            )
        rec = {"stage": self.stage, "epoch": epoch, "batch": batch, "loss": total, "loss_a": loss_a}
        if loss_b is not None:
            rec["loss_b"] = loss_b
        if kinds:
            rec["kinds"] = list(kinds)
        self.records.append(rec)

    def close_epoch(self, epoch):
        losses = [r["loss"] for r in self.records if r["epoch"] == epoch]
        self.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)

    def to_jsonl(self) -> str:
        """One JSON record per batch, then a summary line. Wall time is left out so
        that reports of identical runs are byte-identical."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        summary = {
            "stage": self.stage,
            "summary": True,
            "epochs": self.epochs,
            "epoch_losses": self.epoch_losses,
            "evals": self.evals,
            "seeds": self.seeds,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"


def _batch_loss(params: ModelParams, pairs):
    """Dice loss and gradient over a batch of ``(cloud, labels)`` pairs taken jointly."""
    feats = np.vstack([featurize(c, params.features) for c, _ in pairs])
    labels = pairs[0][1]
    for _, lab in pairs[1:]:
        labels = LabelArray(np.concatenate([labels.labels, lab.labels]), labels.num_classes, labels.ignore_id)
    return loss_and_gradient(params, feats, labels)


def _new_params(cfg: RunConfig) -> ModelParams:
    m = cfg.model
    return init_params(
        m.num_classes, derive_rng(cfg.train.seed, "init"), hidden=(m.hidden1, m.hidden2), ignore_id=m.ignore_id
    )


def _require_labeled(data: DomainDataset, what: str):
    if len(data) == 0:
        raise TrainingError(f"{what}: empty dataset")
    if data.tag == "target":
        raise DomainError(f"{what} must not see target-domain data")
    if not data.labeled:
        raise TrainingError(f"{what}: dataset has unlabelled samples")


def warmup(source: DomainDataset, cfg: RunConfig, init: Optional[ModelParams] = None, on_epoch=None):
    """Supervised Dice training on the source domain from a fresh initialization.

    ``on_epoch(epoch, params)`` is called after every epoch if given.
    """
    _require_labeled(source, "warm-up")
    t0 = time.perf_counter()
    tc = cfg.train
    params = _new_params(cfg) if init is None else init
    report = StageReport("warmup", tc.warmup_epochs, seeds={"seed": tc.seed, "data": source.seed})
    for epoch in range(tc.warmup_epochs):
        for b, idx in enumerate(source.batches(epoch, tc.batch_size)):
            loss, grad = _batch_loss(params, [source[i] for i in idx])
            report.add_batch(epoch, b, loss)
            params = sgd_step(params, grad, tc.lr)
        report.close_epoch(epoch)
        log.info("warm-up epoch %d loss %.4f", epoch, report.epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, params)
    report.wall_time = time.perf_counter() - t0
    return params, report


def _bridge_of(cloud, labels, cfg: RunConfig, purpose, epoch, index, composition=None):
    ep = epoch if cfg.train.regenerate_bridge else 0
    rng = derive_rng(cfg.train.seed, purpose, ep, index)
    return generate_bridge(cloud, labels, composition or cfg.weather.composition(), rng, cfg.weather)


def _teacher_labels(teacher, cloud, cfg: RunConfig) -> LabelArray:
    return pseudo_labels(teacher, cloud, cfg.train.conf_threshold or None)


def _adapt_step(student, teacher, pairs_st, pairs_ts, cfg):
    loss_a, grad_a = _batch_loss(student, pairs_st)
    loss_b, grad_b = _batch_loss(student, pairs_ts)
    student = sgd_step(student, add_gradients(grad_a, grad_b), cfg.train.lr)
    teacher = ema_update(teacher, student, cfg.train.ema_decay)
    return student, teacher, loss_a, loss_b


def train_stage1(source: DomainDataset, cfg: RunConfig, init: ModelParams, on_epoch=None):
    """Source-to-bridge adaptation. Returns ``(student, teacher, report)``.

    Both networks start from ``init`` (the warm-up parameters).
    ``on_epoch(epoch, student, teacher)`` is called after every epoch if given.
    """
    _require_labeled(source, "stage 1")
    t0 = time.perf_counter()
    tc = cfg.train
    student, teacher = init.copy(), init.copy()
    report = StageReport("stage1", tc.epochs_stage1, seeds={"seed": tc.seed, "data": source.seed})
    for epoch in range(tc.epochs_stage1):
        for b, idx in enumerate(source.batches(epoch, tc.batch_size)):
            pairs_st, pairs_ts, kinds = [], [], []
            for i in idx:
                cloud, labels = source[i]
                bridge = _bridge_of(cloud, labels, cfg, "bridge-stage1", epoch, i)
                if tc.bridge_labels == "teacher":
                    bridge_labels = _teacher_labels(teacher, bridge.cloud, cfg)
                else:
                    bridge_labels = bridge.labels
                st, ts, used = mix_pair(
                    (cloud, labels), (bridge.cloud, bridge_labels), cfg.mixing,
                    derive_rng(tc.seed, "mix-stage1", epoch, i),
                )
                pairs_st.append(st)
                pairs_ts.append(ts)
                kinds.extend(used)
            student, teacher, la, lb = _adapt_step(student, teacher, pairs_st, pairs_ts, cfg)
            report.add_batch(epoch, b, la, lb, kinds)
        report.close_epoch(epoch)
        log.info("stage-1 epoch %d loss %.4f", epoch, report.epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, student, teacher)
    report.wall_time = time.perf_counter() - t0
    return student, teacher, report


def train_stage2(bridge_source: DomainDataset, target: DomainDataset, cfg: RunConfig, init: ModelParams,
                 composition: Optional[dict] = None, on_epoch=None):
    """Bridge-to-target adaptation. Returns ``(student, teacher, report)``.

    ``bridge_source`` is either a source dataset (weather simulated on the fly
    with ``composition``) or an already simulated ``bridge`` dataset. The
    target is consumed through its label-free training view.
    """
    if len(target) == 0:
        raise TrainingError("stage 2: empty target dataset")
    if len(bridge_source) == 0 or not bridge_source.labeled:
        raise TrainingError("stage 2: bridge data must be non-empty and labelled")
    target = target.training_view()
    t0 = time.perf_counter()
    tc = cfg.train
    student, teacher = init.copy(), init.copy()
    simulate = bridge_source.tag == "source"
    report = StageReport(
        "stage2", tc.epochs_stage2,
        seeds={"seed": tc.seed, "bridge": bridge_source.seed, "target": target.seed},
    )
    n_bridge = len(bridge_source)
    for epoch in range(tc.epochs_stage2):
        bridge_order = bridge_source.order(epoch)
        for b, idx in enumerate(target.batches(epoch, tc.batch_size)):
            pairs_bt, pairs_tb, kinds = [], [], []
            for k, j in enumerate(idx):
                i = int(bridge_order[(b * tc.batch_size + k) % n_bridge])
                cloud, labels = bridge_source[i]
                if simulate:
                    cloud, labels = _bridge_of(cloud, labels, cfg, "bridge-stage2", epoch, i, composition)
                tcloud = target[j][0]
                tlabels = _teacher_labels(teacher, tcloud, cfg)
                bt, tb, used = mix_pair(
                    (cloud, labels), (tcloud, tlabels), cfg.mixing,
                    derive_rng(tc.seed, "mix-stage2", epoch, int(j)),
                )
                pairs_bt.append(bt)
                pairs_tb.append(tb)
                kinds.extend(used)
            student, teacher, la, lb = _adapt_step(student, teacher, pairs_bt, pairs_tb, cfg)
            report.add_batch(epoch, b, la, lb, kinds)
        report.close_epoch(epoch)
        log.info("stage-2 epoch %d loss %.4f", epoch, report.epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, student, teacher)
    report.wall_time = time.perf_counter() - t0
    return student, teacher, report


@dataclass
class EvalResult:
    per_class: np.ndarray
    miou: Optional[float]
    confusion: ConfusionMatrix

    def as_dict(self) -> dict:
        return {
            "miou": self.miou,
            "iou": [None if np.isnan(v) else float(v) for v in self.per_class],
        }


def evaluate(model: ModelParams, data: DomainDataset, absent: str = "exclude") -> EvalResult:
    """Argmax predictions over a labelled dataset, accumulated into one confusion matrix."""
    if not data.labeled:
        raise TrainingError("evaluation needs labelled data")
    cm = ConfusionMatrix.zeros(model.num_classes, model.ignore_id)
    for cloud, labels in data.samples:
        if len(cloud) == 0:
            continue
        pred = predict(model, cloud).argmax(axis=1)
        cm = accumulate(cm, pred, labels)
    return EvalResult(iou(cm, absent), miou(cm, absent), cm)


@dataclass
class PipelineResult:
    warmup: ModelParams
    stage1_student: Optional[ModelParams] = None
    stage1_teacher: Optional[ModelParams] = None
    stage2_student: Optional[ModelParams] = None
    reports: dict = field(default_factory=dict)
    evals: dict = field(default_factory=dict)


def run_pipeline(source: DomainDataset, target: DomainDataset, cfg: RunConfig, mode: str = "uda",
                 eval_data: Optional[DomainDataset] = None) -> PipelineResult:
    """Warm-up, stage 1 and (for ``mode="uda"``) stage 2, with evaluations on ``eval_data``.

    With ``cfg.train.use_bridge`` off, stage 1 is skipped and stage 2 mixes clear
    source scans directly with the target.
    """
    if mode not in ("dg", "uda"):
        raise ValueError(f"mode must be 'dg' or 'uda', got {mode!r}")
    cfg.validate()
    params, rep = warmup(source, cfg)
    result = PipelineResult(warmup=params, reports={"warmup": rep})

    def snapshot(name, model, report):
        if eval_data is not None:
            ev = evaluate(model, eval_data)
            result.evals[name] = ev
            report.evals.append({"model": name, **ev.as_dict()})

    snapshot("source_only", params, rep)
    if cfg.train.use_bridge:
        s1, t1, rep1 = train_stage1(source, cfg, params)
        result.stage1_student, result.stage1_teacher = s1, t1
        result.reports["stage1"] = rep1
        snapshot("dg", s1, rep1)
        stage2_init, composition = s1, None
    else:
        stage2_init, composition = params, {"clear": 1.0}
    if mode == "uda":
        s2, _, rep2 = train_stage2(source, target, cfg, stage2_init, composition)
        result.stage2_student = s2
        result.reports["stage2"] = rep2
        snapshot("uda", s2, rep2)
    return result
