import json
import math

import numpy as np
import pytest

from unimix.cloud import LabelArray, PointCloud
from unimix.config import RunConfig
from unimix.domain import DomainDataset, DomainError
from unimix.model import FeatureSpec, ModelParams, pseudo_labels
from unimix.pipeline import (
    StageReport,
    TrainingError,
    evaluate,
    run_pipeline,
    train_stage1,
    train_stage2,
    warmup,
)
from unimix.synth import SceneSpec, generate_domain_pair

SMALL = SceneSpec(points=200)


@pytest.fixture(scope="module")
def pair():
    return generate_domain_pair(SMALL, count=8, seed=3)


def small_cfg(**train):
    cfg = RunConfig.desk(seed=1)
    for k, v in {"warmup_epochs": 2, "epochs_stage1": 2, "epochs_stage2": 2, **train}.items():
        setattr(cfg.train, k, v)
    return cfg


def test_warmup_zero_epochs_is_fresh_init(pair):
    source, _ = pair
    a, rep = warmup(source, small_cfg(warmup_epochs=0))
    b, _ = warmup(source, small_cfg(warmup_epochs=0))
    assert a.equals(b) and rep.records == []


def test_warmup_rejects_target_and_empty(pair):
    _, target = pair
    with pytest.raises(DomainError):
        warmup(target, small_cfg())
    with pytest.raises(TrainingError):
        warmup(DomainDataset([], "source"), small_cfg())


def separable_set(n_scans=8, n=100, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_scans):
        z = rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 2.0, n)
        pts = np.column_stack([rng.uniform(-10, 10, (n, 2)), z, rng.random(n)])
        samples.append((PointCloud(pts), LabelArray(np.where(z > 0, 2, 1), 3)))
    return DomainDataset(samples, "source", seed=seed)


def test_warmup_loss_decreases_on_separable_data():
    cfg = small_cfg(warmup_epochs=5)
    cfg.model.num_classes = 3
    _, rep = warmup(separable_set(), cfg)
    losses = rep.epoch_losses
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_stage1_zero_epochs_returns_init(pair):
    source, _ = pair
    init, _ = warmup(source, small_cfg())
    student, teacher, rep = train_stage1(source, small_cfg(epochs_stage1=0), init)
    assert student.equals(init) and teacher.equals(init)
    assert rep.epochs == 0 and rep.records == []


def test_stage1_report(pair):
    source, _ = pair
    cfg = small_cfg()
    init, _ = warmup(source, cfg)
    _, _, rep = train_stage1(source, cfg, init)
    assert len(rep.epoch_losses) == cfg.train.epochs_stage1
    assert len(rep.records) == cfg.train.epochs_stage1 * math.ceil(len(source) / cfg.train.batch_size)
    for r in rep.records:
        assert 0.0 <= r["loss_a"] <= 1.0 and 0.0 <= r["loss_b"] <= 1.0
        assert abs(r["loss"] - (r["loss_a"] + r["loss_b"])) <= 1e-12
        assert r["kinds"]


def test_stage1_is_reproducible(pair):
    source, _ = pair
    cfg = small_cfg()
    init, _ = warmup(source, cfg)
    a = train_stage1(source, cfg, init)
    b = train_stage1(source, cfg, init)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert a[2].to_jsonl() == b[2].to_jsonl()


def test_dg_student_ignores_target():
    source, target_a = generate_domain_pair(SMALL, count=8, seed=3)
    _, target_b = generate_domain_pair(SMALL, count=8, seed=99)
    cfg = small_cfg()
    ra = run_pipeline(source, target_a, cfg, "dg")
    rb = run_pipeline(source, target_b, cfg, "dg")
    assert ra.stage1_student.equals(rb.stage1_student)
    assert ra.stage2_student is None and "stage2" not in ra.reports


def test_stage2_zero_epochs(pair):
    source, target = pair
    init, _ = warmup(source, small_cfg())
    student, teacher, rep = train_stage2(source, target, small_cfg(epochs_stage2=0), init)
    assert student.equals(init) and teacher.equals(init)


def test_stage2_empty_target(pair):
    source, _ = pair
    init, _ = warmup(source, small_cfg())
    with pytest.raises(TrainingError):
        train_stage2(source, DomainDataset([], "target"), small_cfg(), init)


def oracle_model(spec: FeatureSpec):
    """Class 2 above z = 0, class 1 below, with saturated logits."""
    f = len(spec)
    w1 = np.zeros((f, 2))
    iz = spec.names.index("z")
    w1[iz] = [1.0, -1.0]
    w1 /= spec.scales()[iz]
    w3 = np.zeros((2, 3))
    w3[0, 2] = w3[1, 1] = 200.0
    tensors = (w1, np.zeros(2), np.eye(2), np.zeros(2), w3, np.zeros(3))
    return ModelParams(tensors, spec.scales(), spec)


def test_stage2_self_adaptation_floor():
    data = separable_set()
    bridge = DomainDataset(data.samples, "bridge", seed=1)
    target = DomainDataset(data.samples, "target", seed=2)
    cfg = small_cfg(epochs_stage2=1)
    cfg.model.num_classes = 3
    teacher = oracle_model(FeatureSpec())
    assert evaluate(teacher, DomainDataset(data.samples, "source")).miou == 1.0
    _, _, rep = train_stage2(bridge, target, cfg, teacher)
    assert all(r["loss"] < 0.05 for r in rep.records)


def test_stage2_pseudo_labels_drift(pair):
    source, target = pair
    cfg = small_cfg()
    init, _ = warmup(source, cfg)
    _, t1, _ = train_stage2(source, target, small_cfg(epochs_stage2=1), init)
    _, t3, _ = train_stage2(source, target, small_cfg(epochs_stage2=4), init)
    cloud = target[0][0]
    assert not np.array_equal(pseudo_labels(t1, cloud).labels, pseudo_labels(t3, cloud).labels)


def test_stage2_never_reads_target_labels(pair):
    source, target = pair
    init, _ = warmup(source, small_cfg())
    stripped = DomainDataset([(c, None) for c, _ in target.samples], "target", target.seed)
    a = train_stage2(source, target, small_cfg(), init)
    b = train_stage2(source, stripped, small_cfg(), init)
    assert a[0].equals(b[0])


def test_pipeline_determinism_and_stage_order(pair):
    source, target = pair
    cfg = small_cfg()
    a = run_pipeline(source, target, cfg, "uda", eval_data=target)
    b = run_pipeline(source, target, cfg, "uda", eval_data=target)
    assert list(a.reports) == ["warmup", "stage1", "stage2"]
    assert list(a.evals) == ["source_only", "dg", "uda"]
    for name in a.reports:
        assert a.reports[name].to_jsonl() == b.reports[name].to_jsonl()
    assert a.stage2_student.equals(b.stage2_student)


def test_pipeline_without_bridge(pair):
    source, target = pair
    cfg = small_cfg(use_bridge=False)
    res = run_pipeline(source, target, cfg, "uda")
    assert res.stage1_student is None and list(res.reports) == ["warmup", "stage2"]


def test_bad_mode(pair):
    with pytest.raises(ValueError):
        run_pipeline(*pair, small_cfg(), "both")


def test_report_serialization():
    rep = StageReport("stage1", 1)
    rep.add_batch(0, 0, 0.25, 0.5, ("spatial",))
    rep.close_epoch(0)
    lines = rep.to_jsonl().splitlines()
    assert json.loads(lines[0]) == {
        "stage": "stage1", "epoch": 0, "batch": 0, "loss": 0.75, "loss_a": 0.25, "loss_b": 0.5, "kinds": ["spatial"],
    }
    assert json.loads(lines[-1])["epoch_losses"] == [0.75]


def test_non_finite_loss_aborts():
    with pytest.raises(TrainingError, match="epoch 2 batch 5"):
        StageReport("stage2").add_batch(2, 5, float("nan"), 0.1)
