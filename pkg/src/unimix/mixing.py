"""Mask-based exchange of point subsets between two labelled scans.

``mix(S, T, M_S, M_T)`` keeps the points of ``S`` outside ``M_S`` and appends
the points of ``T`` inside ``M_T``. The bidirectional form also returns the
mirror image, so the two outputs together contain every input point exactly
once. Masks are drawn in one of three ways:

* spatial: a box in normalized cylinder coordinates ``(rho, theta, z)``
* intensity: a band of normalized intensity
* semantic: a random subset of the classes present in each scan

Spatial and intensity draws are shared by both scans; each scan applies the
box in its own normalized frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import CloudError, LabelArray, PointCloud, concat, filter_by_mask, normalize_axis, to_cylinder
from .config import MIX_KINDS, MixConfig
from .seeding import as_rng

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class MixMask:
    bits: np.ndarray
    kind: str
    drawn_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MIX_KINDS:
            raise CloudError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool).reshape(-1))

    def __len__(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())


def _in_interval(values, lo, width, top):
    """Half-open ``[lo, lo + width)``, closed at ``top`` when the interval reaches it."""
    hi = lo + width
    inside = (values >= lo) & (values < hi)
    if hi >= top - _EDGE_TOL:
        inside |= (values >= lo) & (values <= top)
    return inside


def spatial_mask_from_draw(cloud: PointCloud, cfg: MixConfig, rho_lo, theta_lo, z_lo) -> np.ndarray:
    cyl = to_cylinder(cloud)
    rho = normalize_axis(cyl.rho).values
    z = normalize_axis(cyl.z).values
    return (
        _in_interval(rho, rho_lo, cfg.delta_rho_frac, 1.0)
        & _in_interval(cyl.theta, theta_lo, cfg.delta_theta, math.pi)
        & _in_interval(z, z_lo, cfg.delta_z_frac, 1.0)
    )


def spatial_masks(cloud_a: PointCloud, cloud_b: PointCloud, cfg: MixConfig, rng=None, draw=None):
    """Cylinder-box masks for both clouds from one shared draw.

    ``draw`` may force ``(rho_lo, theta_lo, z_lo)`` instead of sampling.
    """
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise CloudError("spatial mixing needs two non-empty clouds")
    if draw is None:
        rng = as_rng(rng)
        draw = (
            rng.uniform(0.0, 1.0 - cfg.delta_rho_frac),
            rng.uniform(-math.pi, math.pi - cfg.delta_theta),
            rng.uniform(0.0, 1.0 - cfg.delta_z_frac),
        )
    rho_lo, theta_lo, z_lo = (float(v) for v in draw)
    params = {"rho_lo": rho_lo, "theta_lo": theta_lo, "z_lo": z_lo}
    return tuple(
        MixMask(spatial_mask_from_draw(c, cfg, rho_lo, theta_lo, z_lo), "spatial", params)
        for c in (cloud_a, cloud_b)
    )


def intensity_masks(cloud_a: PointCloud, cloud_b: PointCloud, cfg: MixConfig, rng=None, draw=None):
    """Intensity-band masks for both clouds from one shared lower bound."""
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise CloudError("intensity mixing needs two non-empty clouds")
    if draw is None:
        draw = as_rng(rng).uniform(0.0, 1.0 - cfg.delta_I_frac)
    lo = float(draw)
    return tuple(
        MixMask(
            _in_interval(normalize_axis(c.intensity).values, lo, cfg.delta_I_frac, 1.0),
            "intensity",
            {"intensity_lo": lo},
        )
        for c in (cloud_a, cloud_b)
    )


def draw_classes(labels: LabelArray, prob: float, rng) -> frozenset:
    """Each present non-ignore class joins with probability ``prob``; redrawn until non-empty."""
    present = np.unique(labels.labels[labels.valid()])
    if present.size == 0:
        return frozenset()
    while True:
        chosen = present[rng.random(present.size) < prob]
        if chosen.size:
            return frozenset(int(c) for c in chosen)


def semantic_masks(labels_a: LabelArray, labels_b: LabelArray, cfg: MixConfig, rng=None, draw=None):
    """Class-subset masks; ``draw`` may force the two class sets."""
    if draw is None:
        rng = as_rng(rng)
        draw = (
            draw_classes(labels_a, cfg.class_select_prob, rng),
            draw_classes(labels_b, cfg.class_select_prob, rng),
        )
    out = []
    for labels, classes in zip((labels_a, labels_b), draw):
        classes = frozenset(int(c) for c in classes)
        bits = np.isin(labels.labels, sorted(classes)) & labels.valid()
        out.append(MixMask(bits, "semantic", {"classes": classes}))
    return tuple(out)


def draw_masks(S, T, kind: str, cfg: MixConfig, rng=None, draw=None):
    """One ``(M_S, M_T)`` pair of the given kind."""
    cloud_s, labels_s = S
    cloud_t, labels_t = T
    if kind == "spatial":
        return spatial_masks(cloud_s, cloud_t, cfg, rng, draw)
    if kind == "intensity":
        return intensity_masks(cloud_s, cloud_t, cfg, rng, draw)
    if kind == "semantic":
        return semantic_masks(labels_s, labels_t, cfg, rng, draw)
    raise CloudError(f"unknown mixing kind {kind!r}")


def mix(S, T, mask_s, mask_t):
    """``S`` without its masked points, followed by the masked points of ``T``."""
    cloud_s, labels_s = S
    cloud_t, labels_t = T
    if len(mask_s) != len(cloud_s) or len(mask_t) != len(cloud_t):
        raise CloudError("masks must be aligned with their clouds")
    return concat(
        filter_by_mask(cloud_s, labels_s, mask_s, keep=False),
        filter_by_mask(cloud_t, labels_t, mask_t, keep=True),
    )


def mix_bidirectional(S, T, kind: str, cfg: MixConfig, rng=None, draw=None):
    """Return ``(S->T, T->S)`` mixed pairs from a single mask draw."""
    mask_s, mask_t = draw_masks(S, T, kind, cfg, rng, draw)
    return mix(S, T, mask_s, mask_t), mix(T, S, mask_t, mask_s)


def choose_kinds(policy: str, rng) -> tuple:
    if policy == "uniform_choice":
        return (MIX_KINDS[int(rng.integers(len(MIX_KINDS)))],)
    if policy == "compose_all":
        return MIX_KINDS
    if policy.startswith("fixed:") and policy[6:] in MIX_KINDS:
        return (policy[6:],)
    raise CloudError(f"unknown operator policy {policy!r}")


def mix_pair(S, T, cfg: MixConfig, rng=None):
    """Apply the configured operator policy; returns ``(S->T, T->S, kinds_used)``.

    ``compose_all`` chains spatial, intensity and semantic exchanges, each step
    acting on the previous step's outputs.
    """
    rng = as_rng(rng)
    kinds = choose_kinds(cfg.operator_policy, rng)
    st, ts = S, T
    for kind in kinds:
        if len(st[0]) == 0 or len(ts[0]) == 0:
            break
        st, ts = mix_bidirectional(st, ts, kind, cfg, rng)
    return st, ts, kinds
