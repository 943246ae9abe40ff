"""Readers and writers for SemanticKITTI-style scans and labels, plus PLY export.

Scan files are headerless little-endian float32 quadruples ``x y z intensity``.
Label files are little-endian uint32, one per point; the low 16 bits carry the
semantic id and the high 16 bits an instance id, which is discarded on read and
written as zero.
"""
from __future__ import annotations

import configparser
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .cloud import DEFAULT_IGNORE_ID, LabelArray, PointCloud

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
POINT_BYTES = 4 * SCAN_DTYPE.itemsize


class DataFormatError(ValueError):
    """A file on disk does not follow the expected binary layout."""


class UnknownLabelWarning(UserWarning):
    def __init__(self, path, count):
        super().__init__(f"{path}: {count} points had raw ids without a remap entry")
        self.path = path
        self.count = count


@dataclass(frozen=True)
class RemapTable:
    """Raw dataset class id -> common class id, with names and display colours."""

    mapping: dict
    num_classes: int = 20
    ignore_id: int = DEFAULT_IGNORE_ID
    names: dict = field(default_factory=dict)
    colors: dict = field(default_factory=dict)

    def __post_init__(self):
        for raw, common in self.mapping.items():
            if not (0 <= common < self.num_classes or common == self.ignore_id):
                raise ValueError(f"remap {raw} -> {common} outside [0, {self.num_classes})")

    @classmethod
    def identity(cls, num_classes: int, ignore_id: int = DEFAULT_IGNORE_ID) -> "RemapTable":
        return cls({i: i for i in range(num_classes)}, num_classes, ignore_id)

    @classmethod
    def from_ini(cls, text: str, ignore_id: int = DEFAULT_IGNORE_ID) -> "RemapTable":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        mapping = {int(k): int(v) for k, v in parser["remap"].items()}
        names = {int(k): v for k, v in parser["names"].items()} if parser.has_section("names") else {}
        colors = {}
        if parser.has_section("colors"):
            colors = {int(k): tuple(int(c) for c in v.split()) for k, v in parser["colors"].items()}
        num_classes = max([*mapping.values(), *names.keys()]) + 1
        return cls(mapping, num_classes, ignore_id, names, colors)

    @classmethod
    def load(cls, path) -> "RemapTable":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def builtin(cls, name: str) -> "RemapTable":
        text = resources.files("unimix").joinpath("data", f"{name}.ini").read_text(encoding="utf-8")
        return cls.from_ini(text)

    @classmethod
    def resolve(cls, spec: str, num_classes: int = 6) -> "RemapTable":
        """``identity``, a builtin table name, or a path to an INI file."""
        if spec in ("", "identity"):
            return cls.identity(num_classes)
        if spec in ("semantickitti", "synthetic"):
            return cls.builtin(spec)
        return cls.load(spec)

    def apply(self, raw_ids) -> tuple[np.ndarray, int]:
        """Map raw semantic ids; unknown ids fall to ``ignore_id``. Returns (ids, unknown count)."""
        raw_ids = np.asarray(raw_ids, dtype=np.int64)
        if raw_ids.size == 0:
            return np.zeros(0, dtype=np.int64), 0
        keys = np.fromiter(self.mapping.keys(), dtype=np.int64, count=len(self.mapping))
        vals = np.fromiter(self.mapping.values(), dtype=np.int64, count=len(self.mapping))
        order = np.argsort(keys)
        keys, vals = keys[order], vals[order]
        pos = np.clip(np.searchsorted(keys, raw_ids), 0, max(len(keys) - 1, 0))
        known = keys[pos] == raw_ids if len(keys) else np.zeros(raw_ids.shape, bool)
        out = np.where(known, vals[pos] if len(vals) else self.ignore_id, self.ignore_id)
        return out.astype(np.int64), int((~known).sum())


def read_scan(path) -> PointCloud:
    path = Path(path)
    data = path.read_bytes()
    if len(data) % POINT_BYTES:
        offset = len(data) - len(data) % POINT_BYTES
        raise DataFormatError(
            f"{path}: truncated scan, {len(data) % POINT_BYTES} trailing bytes at byte offset {offset}"
        )
    pts = np.frombuffer(data, dtype=SCAN_DTYPE).reshape(-1, 4)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        raise DataFormatError(f"{path}: non-finite value at point index {int(np.flatnonzero(~finite)[0])}")
    return PointCloud(pts.astype(np.float64))


def write_scan(cloud: PointCloud, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(cloud.points.astype(SCAN_DTYPE).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write scan {path}: {exc}") from exc


def read_raw_labels(path) -> np.ndarray:
    """Semantic ids (low 16 bits) of a label file, before remapping."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) % LABEL_DTYPE.itemsize:
        offset = len(data) - len(data) % LABEL_DTYPE.itemsize
        raise DataFormatError(f"{path}: truncated label file at byte offset {offset}")
    raw = np.frombuffer(data, dtype=LABEL_DTYPE)
    return (raw & 0xFFFF).astype(np.int64)


def read_labels(path, remap: RemapTable) -> LabelArray:
    semantic = read_raw_labels(path)
    ids, unknown = remap.apply(semantic)
    if unknown:
        warnings.warn(UnknownLabelWarning(str(path), unknown), stacklevel=2)
    return LabelArray(ids, remap.num_classes, remap.ignore_id)


def write_labels(labels: LabelArray, path) -> None:
    path = Path(path)
    lab = np.asarray(labels.labels)
    if lab.size and (lab.min() < 0 or lab.max() > 0xFFFF):
        raise DataFormatError(f"{path}: label ids must fit in 16 bits")
    try:
        path.write_bytes(lab.astype(LABEL_DTYPE).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write labels {path}: {exc}") from exc


def read_pair(scan_path, label_path, remap: RemapTable):
    cloud = read_scan(scan_path)
    labels = read_labels(label_path, remap)
    if len(cloud) != len(labels):
        raise DataFormatError(
            f"{scan_path} has {len(cloud)} points but {label_path} has {len(labels)} labels"
        )
    return cloud, labels


def export_ply(cloud: PointCloud, labels: LabelArray, colormap: dict, path) -> None:
    """Write an ASCII PLY with ``x y z`` floats and ``red green blue`` uchars."""
    if len(cloud) != len(labels):
        raise ValueError("cloud and labels are not aligned")
    present = np.unique(labels.labels)
    missing = [int(c) for c in present if int(c) not in colormap]
    if missing:
        raise KeyError(f"colormap has no entry for class {missing[0]}")
    lut = np.zeros((int(present.max()) + 1 if present.size else 1, 3), dtype=np.int64)
    for c in present:
        lut[int(c)] = colormap[int(c)]
    rgb = lut[labels.labels] if len(labels) else np.zeros((0, 3), dtype=np.int64)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    xyz = cloud.xyz.astype(np.float32)
    lines = [
        f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n"
        for (x, y, z), (r, g, b) in zip(xyz.tolist(), rgb.tolist())
    ]
    Path(path).write_text(header + "".join(lines), encoding="ascii")


# -- dataset directories ----------------------------------------------------
#
# <root>/velodyne/000000.bin and <root>/labels/000000.label, as in SemanticKITTI
# sequences. A ``weather.txt`` manifest (one kind per line) is optional.


def scan_paths(root) -> list[Path]:
    return sorted((Path(root) / "velodyne").glob("*.bin"))


def write_dataset(root, samples, weather_tags=None) -> None:
    root = Path(root)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i, (cloud, labels) in enumerate(samples):
        write_scan(cloud, root / "velodyne" / f"{i:06d}.bin")
        if labels is not None:
            write_labels(labels, root / "labels" / f"{i:06d}.label")
    if weather_tags is not None:
        (root / "weather.txt").write_text("".join(f"{w}\n" for w in weather_tags), encoding="utf-8")


def read_dataset(root, remap: RemapTable, with_labels: bool = True):
    """Return a list of ``(cloud, labels-or-None)`` in file-name order."""
    root = Path(root)
    paths = scan_paths(root)
    if not paths:
        raise DataFormatError(f"{root}: no scans under velodyne/")
    out = []
    for p in paths:
        if with_labels:
            lp = root / "labels" / (p.stem + ".label")
            if not lp.exists():
                raise DataFormatError(f"{p}: missing label file {lp}")
            out.append(read_pair(p, lp, remap))
        else:
            out.append((read_scan(p), None))
    return out


def read_weather_tags(root):
    path = Path(root) / "weather.txt"
    if not path.exists():
        return None
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
