"""Per-point MLP classifier with hand-written backpropagation through a soft Dice loss.

The network is ``features -> h1 -> h2 -> classes`` with ReLU hidden layers and a
row softmax. It stands in for a sparse-convolution backbone: everything the
training loop needs (``featurize``, ``forward``, ``loss_and_gradient``) is a plain
function of a :class:`ModelParams`, so a heavier model can be swapped in behind
the same calls.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import DEFAULT_IGNORE_ID, LabelArray, PointCloud, normalize_axis, to_cylinder
from .seeding import as_rng

# A per-point model cannot tell a dark object in clear air from a bright one
# behind fog; the scan median intensity gives it that context.
DEFAULT_FEATURES = ("x", "y", "z", "intensity", "rho", "scan_intensity")
# Fixed input conditioning so raw metric features enter the first layer at O(1).
DEFAULT_SCALES = {
    "x": 0.05, "y": 0.05, "z": 0.5, "intensity": 1.0, "rho": 0.05, "rho_norm": 1.0, "z_norm": 1.0,
    "scan_intensity": 1.0,
}

CKPT_MAGIC = b"UNIMIXCK"
CKPT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple = DEFAULT_FEATURES

    def __post_init__(self):
        unknown = [n for n in self.names if n not in _FEATURES]
        if unknown:
            raise ModelError(f"unknown features {unknown}")

    def __len__(self) -> int:
        return len(self.names)

    def scales(self) -> np.ndarray:
        return np.array([DEFAULT_SCALES[n] for n in self.names], dtype=np.float64)


def _rho(cloud):
    return to_cylinder(cloud).rho


_FEATURES = {
    "x": lambda c: c.x,
    "y": lambda c: c.y,
    "z": lambda c: c.z,
    "intensity": lambda c: c.intensity,
    "rho": _rho,
    "rho_norm": lambda c: normalize_axis(_rho(c)).values,
    "z_norm": lambda c: normalize_axis(c.z).values,
    # scan-level context, the same value on every point of the scan
    "scan_intensity": lambda c: np.full(len(c), np.median(c.intensity) if len(c) else 0.0),
}


def featurize(cloud: PointCloud, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    if len(cloud) == 0:
        return np.zeros((0, len(spec)))
    return np.column_stack([_FEATURES[n](cloud) for n in spec.names]).astype(np.float64)


@dataclass(frozen=True)
class ModelParams:
    """Trainable tensors ``(W1, b1, W2, b2, W3, b3)`` plus fixed input scaling."""

    tensors: tuple
    input_scale: np.ndarray
    features: FeatureSpec = field(default_factory=FeatureSpec)
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        t = tuple(np.asarray(a, dtype=np.float64) for a in self.tensors)
        if len(t) != 6:
            raise ModelError("expected six tensors (W1, b1, W2, b2, W3, b3)")
        w1, b1, w2, b2, w3, b3 = t
        f = len(self.features)
        ok = (
            w1.shape == (f, b1.shape[0]) and w2.shape == (b1.shape[0], b2.shape[0])
            and w3.shape == (b2.shape[0], b3.shape[0]) and b1.ndim == b2.ndim == b3.ndim == 1
        )
        if not ok:
            raise ModelError(f"tensor shapes do not chain: {[a.shape for a in t]}")
        if not all(np.isfinite(a).all() for a in t):
            raise ModelError("non-finite parameter")
        object.__setattr__(self, "tensors", t)
        object.__setattr__(self, "input_scale", np.asarray(self.input_scale, dtype=np.float64))

    @property
    def num_classes(self) -> int:
        return self.tensors[5].shape[0]

    def shapes(self) -> list:
        return [a.shape for a in self.tensors]

    def with_tensors(self, tensors) -> "ModelParams":
        return ModelParams(tuple(tensors), self.input_scale, self.features, self.ignore_id)

    def copy(self) -> "ModelParams":
        return self.with_tensors([a.copy() for a in self.tensors])

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.tensors, other.tensors)) and np.array_equal(
            self.input_scale, other.input_scale
        )


def init_params(num_classes: int, rng=None, hidden=(64, 64), features: FeatureSpec = FeatureSpec(),
                ignore_id: int = DEFAULT_IGNORE_ID) -> ModelParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
    rng = as_rng(rng)
    sizes = [len(features), *hidden, num_classes]
    tensors = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        tensors.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        tensors.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(tuple(tensors), features.scales(), features, ignore_id)


def zero_params(num_classes: int, hidden=(64, 64), features: FeatureSpec = FeatureSpec(),
                ignore_id: int = DEFAULT_IGNORE_ID) -> ModelParams:
    sizes = [len(features), *hidden, num_classes]
    tensors = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        tensors += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
    return ModelParams(tuple(tensors), features.scales(), features, ignore_id)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ModelParams, features: np.ndarray):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.tensors[0].shape[0]:
        raise ModelError(f"features of shape {x.shape} do not match a {params.tensors[0].shape[0]}-input model")
    w1, b1, w2, b2, w3, b3 = params.tensors
    h0 = x * params.input_scale
    a1 = h0 @ w1 + b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ w2 + b2
    h2 = np.maximum(a2, 0.0)
    probs = _softmax(h2 @ w3 + b3)
    return probs, (h0, a1, h1, a2, h2)


def forward(params: ModelParams, features) -> np.ndarray:
    """Row-stochastic ``N x C`` class probabilities."""
    return _forward_cache(params, features)[0]


# -- Dice loss ---------------------------------------------------------------------


@dataclass(frozen=True)
class DiceTerms:
    loss: float
    grad_probs: np.ndarray
    active: bool
    classes: tuple


def dice_terms(probs, labels: LabelArray, eps: float = 1.0) -> DiceTerms:
    """Macro soft Dice over the classes present in the labels or predicted by argmax.

    Rows whose label is ``ignore_id`` are excluded from every sum. If no row
    remains the loss is 0 and ``active`` is False.
    """
    probs = np.asarray(probs, dtype=np.float64)
    lab = labels.labels
    if probs.shape[0] != lab.shape[0]:
        raise ModelError(f"{probs.shape[0]} probability rows for {lab.shape[0]} labels")
    n, num_c = probs.shape
    grad = np.zeros_like(probs)
    valid = labels.valid()
    if not valid.any():
        return DiceTerms(0.0, grad, False, ())
    pv = probs[valid]
    lv = lab[valid]
    if lv.max() >= num_c:
        raise ModelError(f"label {lv.max()} has no probability column (C={num_c})")
    g = np.zeros_like(pv)
    g[np.arange(lv.size), lv] = 1.0
    classes = np.union1d(np.unique(lv), np.unique(pv.argmax(axis=1)))
    inter = (pv * g).sum(axis=0)
    psum = pv.sum(axis=0)
    gsum = g.sum(axis=0)
    den = psum + gsum + eps
    dice = (2.0 * inter + eps) / den
    loss = 1.0 - dice[classes].mean()
    # d dice_c / d p_ic = (2 g_ic den_c - (2 I_c + eps)) / den_c^2
    d_dice = (2.0 * g * den - (2.0 * inter + eps)) / den**2
    scale = np.zeros(num_c)
    scale[classes] = -1.0 / classes.size
    grad[valid] = d_dice * scale
    return DiceTerms(float(loss), grad, True, tuple(int(c) for c in classes))


def dice_loss(probs, labels: LabelArray, eps: float = 1.0) -> float:
    return dice_terms(probs, labels, eps).loss


def loss_and_gradient(params: ModelParams, features, labels: LabelArray, eps: float = 1.0):
    """Dice loss of ``forward(params, features)`` and its exact parameter gradient."""
    probs, (h0, a1, h1, a2, h2) = _forward_cache(params, features)
    terms = dice_terms(probs, labels, eps)
    dp = terms.grad_probs
    dz = probs * (dp - (probs * dp).sum(axis=1, keepdims=True))
    w1, b1, w2, b2, w3, b3 = params.tensors
    dw3 = h2.T @ dz
    db3 = dz.sum(axis=0)
    da2 = (dz @ w3.T) * (a2 > 0)
    dw2 = h1.T @ da2
    db2 = da2.sum(axis=0)
    da1 = (da2 @ w2.T) * (a1 > 0)
    dw1 = h0.T @ da1
    db1 = da1.sum(axis=0)
    return terms.loss, params.with_tensors((dw1, db1, dw2, db2, dw3, db3))


def gradient(params: ModelParams, features, labels: LabelArray, eps: float = 1.0) -> ModelParams:
    return loss_and_gradient(params, features, labels, eps)[1]


def add_gradients(a: ModelParams, b: ModelParams) -> ModelParams:
    return a.with_tensors([x + y for x, y in zip(a.tensors, b.tensors)])


def _check_shapes(a: ModelParams, b: ModelParams):
    if a.shapes() != b.shapes():
        raise ModelError(f"shape mismatch: {a.shapes()} vs {b.shapes()}")


def sgd_step(params: ModelParams, grad: ModelParams, lr: float) -> ModelParams:
    _check_shapes(params, grad)
    if not lr > 0:
        raise ModelError("learning rate must be positive")
    if not all(np.isfinite(g).all() for g in grad.tensors):
        raise ModelError("non-finite gradient")
    return params.with_tensors([p - lr * g for p, g in zip(params.tensors, grad.tensors)])


def ema_update(teacher: ModelParams, student: ModelParams, decay: float) -> ModelParams:
    """``teacher <- decay * teacher + (1 - decay) * student``, elementwise."""
    _check_shapes(teacher, student)
    if not 0.0 <= decay <= 1.0:
        raise ModelError("EMA decay must be in [0, 1]")
    return teacher.with_tensors(
        [decay * t + (1.0 - decay) * s for t, s in zip(teacher.tensors, student.tensors)]
    )


def predict(params: ModelParams, cloud: PointCloud) -> np.ndarray:
    return forward(params, featurize(cloud, params.features))


def pseudo_labels(teacher: ModelParams, cloud: PointCloud, conf_threshold=None) -> LabelArray:
    """Argmax of the teacher's probabilities; low-confidence points become ``ignore_id``.

    Ties go to the lowest class id.
    """
    probs = predict(teacher, cloud)
    labels = probs.argmax(axis=1) if len(cloud) else np.zeros(0, dtype=np.int64)
    if conf_threshold:
        labels = np.where(probs.max(axis=1) < conf_threshold, teacher.ignore_id, labels)
    return LabelArray(labels, teacher.num_classes, teacher.ignore_id)


# -- checkpoints ---------------------------------------------------------------------
#
# magic | u32 version | u32 meta length | meta JSON | u32 array count |
# per array: u32 ndim, u32 dims... | float32 payload (W1, b1, W2, b2, W3, b3)
#
# The input scale is not stored: it is fixed by the feature names in the meta.


def save_checkpoint(params: ModelParams, path) -> None:
    meta = json.dumps(
        {"features": list(params.features.names), "ignore_id": params.ignore_id},
        sort_keys=True,
    ).encode("utf-8")
    arrays = list(params.tensors)
    head = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for a in arrays:
        head.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
    payload = b"".join(a.astype("<f4").tobytes() for a in arrays)
    Path(path).write_bytes(b"".join(head) + payload)


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ModelError(f"{path}: not a model checkpoint")
    pos = len(CKPT_MAGIC)
    version, meta_len = struct.unpack_from("<II", data, pos)
    if version != CKPT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, pos)
        shapes.append(struct.unpack_from(f"<{ndim}I", data, pos + 4))
        pos += 4 + 4 * ndim
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64))
        pos += 4 * size
    if pos != len(data):
        raise ModelError(f"{path}: {len(data) - pos} trailing bytes")
    spec = FeatureSpec(tuple(meta["features"]))
    return ModelParams(tuple(arrays), spec.scales(), spec, meta["ignore_id"])
