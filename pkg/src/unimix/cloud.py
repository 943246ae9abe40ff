"""Point-cloud value types and the small set of transforms every other module uses.

Clouds are stored as an ``(N, 4)`` float64 array of ``x, y, z, intensity``.
Labels are stored separately so that mixing and filtering can move the two in
lock-step by plain index selection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_IGNORE_ID = 0


class CloudError(ValueError):
    """Raised when a cloud, label array or mask is malformed or misaligned."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise CloudError(f"points must have shape (N, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise CloudError(f"non-finite value at point {bad}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))

    @classmethod
    def from_xyzi(cls, xyz, intensity) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        intensity = np.asarray(intensity, dtype=np.float64).reshape(-1, 1)
        return cls(np.hstack([xyz, intensity]))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def range(self) -> np.ndarray:
        """Euclidean distance of each point from the sensor origin."""
        return np.linalg.norm(self.xyz, axis=1)

    def take(self, index) -> "PointCloud":
        return PointCloud(self.points[index])

    def with_intensity(self, intensity) -> "PointCloud":
        pts = self.points.copy()
        pts[:, 3] = intensity
        return PointCloud(pts)


@dataclass(frozen=True)
class LabelArray:
    labels: np.ndarray
    num_classes: int
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.size == 0:
            lab = lab.reshape(0)
        if lab.ndim != 1:
            raise CloudError(f"labels must be 1-D, got shape {lab.shape}")
        if lab.size and not np.issubdtype(lab.dtype, np.integer):
            if not np.array_equal(lab, np.round(lab)):
                raise CloudError("labels must be integers")
        lab = lab.astype(np.int64)
        if self.num_classes < 1:
            raise CloudError("num_classes must be positive")
        bad = (lab < 0) | ((lab >= self.num_classes) & (lab != self.ignore_id))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise CloudError(
                f"label {lab[i]} at index {i} outside [0, {self.num_classes}) "
                f"and not ignore_id={self.ignore_id}"
            )
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, index) -> "LabelArray":
        return LabelArray(self.labels[index], self.num_classes, self.ignore_id)

    def replace(self, labels) -> "LabelArray":
        return LabelArray(labels, self.num_classes, self.ignore_id)

    def valid(self) -> np.ndarray:
        """Boolean mask of points that carry a real (non-ignore) class."""
        return self.labels != self.ignore_id


@dataclass(frozen=True)
class CylinderCoords:
    rho: np.ndarray
    theta: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return self.rho.shape[0]

    def to_cartesian(self) -> np.ndarray:
        return np.column_stack(
            [self.rho * np.cos(self.theta), self.rho * np.sin(self.theta), self.z]
        )


@dataclass(frozen=True)
class NormalizedAxis:
    values: np.ndarray
    min_raw: float = 0.0
    max_raw: float = 0.0

    def denormalize(self, values=None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=np.float64)
        return self.min_raw + v * (self.max_raw - self.min_raw)

    def apply(self, raw) -> np.ndarray:
        """Map new raw values through the recorded affine transform."""
        raw = np.asarray(raw, dtype=np.float64)
        span = self.max_raw - self.min_raw
        if span <= 0:
            return np.zeros_like(raw)
        return (raw - self.min_raw) / span


@dataclass(frozen=True)
class LabeledCloud:
    """A cloud paired with its labels; the unit that mixing operates on."""

    cloud: PointCloud
    labels: LabelArray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.cloud) != len(self.labels):
            raise CloudError(
                f"cloud has {len(self.cloud)} points but labels has {len(self.labels)}"
            )

    def __len__(self) -> int:
        return len(self.cloud)

    def __iter__(self):
        yield self.cloud
        yield self.labels

    def take(self, index) -> "LabeledCloud":
        return LabeledCloud(self.cloud.take(index), self.labels.take(index))


def to_cylinder(cloud: PointCloud) -> CylinderCoords:
    x, y = cloud.x, cloud.y
    rho = np.hypot(x, y)
    # arctan2(0, 0) is 0, but arctan2(-0.0, -0.0) is -pi; pin the origin to 0.
    theta = np.where(rho == 0.0, 0.0, np.arctan2(y, x))
    return CylinderCoords(rho=rho, theta=theta, z=cloud.z.copy())


def normalize_axis(values) -> NormalizedAxis:
    """Affinely map ``values`` onto [0, 1], recording the map.

    A degenerate range (all values equal) maps every value to 0. Empty input
    gives an empty result with a ``(0, 0)`` map.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return NormalizedAxis(values=v, min_raw=0.0, max_raw=0.0)
    if not np.isfinite(v).all():
        raise CloudError("normalize_axis requires finite values")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        out = np.zeros_like(v)
    else:
        out = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return NormalizedAxis(values=out, min_raw=lo, max_raw=hi)


def _as_bool_mask(mask, n: int) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits)
    if bits.shape != (n,):
        raise CloudError(f"mask has shape {bits.shape}, expected ({n},)")
    return bits.astype(bool)


def filter_by_mask(cloud: PointCloud, labels: LabelArray, mask, keep: bool = True):
    """Return the points (and labels) where ``mask == keep``, order preserved."""
    if len(cloud) != len(labels):
        raise CloudError(
            f"cloud has {len(cloud)} points but labels has {len(labels)}"
        )
    bits = _as_bool_mask(mask, len(cloud))
    sel = bits if keep else ~bits
    return cloud.take(sel), labels.take(sel)


def concat(a, b):
    """Concatenate two ``(cloud, labels)`` pairs; ``a`` precedes ``b``."""
    cloud_a, labels_a = a
    cloud_b, labels_b = b
    if len(cloud_a) != len(labels_a) or len(cloud_b) != len(labels_b):
        raise CloudError("each (cloud, labels) pair must be aligned")
    if labels_a.num_classes != labels_b.num_classes:
        raise CloudError(
            f"num_classes mismatch: {labels_a.num_classes} vs {labels_b.num_classes}"
        )
    if labels_a.ignore_id != labels_b.ignore_id:
        raise CloudError(
            f"ignore_id mismatch: {labels_a.ignore_id} vs {labels_b.ignore_id}"
        )
    cloud = PointCloud(np.vstack([cloud_a.points, cloud_b.points]))
    labels = LabelArray(
        np.concatenate([labels_a.labels, labels_b.labels]),
        labels_a.num_classes,
        labels_a.ignore_id,
    )
    return cloud, labels
