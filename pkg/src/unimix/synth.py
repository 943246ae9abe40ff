"""Seeded synthetic LiDAR-like scenes and clear-source / adverse-target domain pairs.

A scene is a ground disc around the sensor with boxes (buildings, cars),
vertical cylinders (poles) and ellipsoid blobs (vegetation). Each class has
its own intensity distribution; a domain style shifts those distributions and
the layout density, and the target domain is additionally passed through the
weather simulator.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import LabelArray, PointCloud
from .config import WeatherConfig
from .domain import DomainDataset
from .seeding import as_rng, derive_rng
from .weather import WeatherParams, apply_weather

GROUND, BUILDING, POLE, CAR, VEGETATION = 1, 2, 3, 4, 5
CLASS_NAMES = {0: "unlabeled", GROUND: "ground", BUILDING: "building", POLE: "pole", CAR: "car", VEGETATION: "vegetation"}
NUM_CLASSES = 6


@dataclass(frozen=True)
class SceneSpec:
    points: int = 2000
    max_range: float = 25.0
    sensor_height: float = 1.7
    buildings: tuple = (1, 3)
    cars: tuple = (2, 4)
    poles: tuple = (2, 5)
    vegetation: tuple = (2, 4)
    # fraction of the point budget that each object instance receives
    points_per_object: dict = field(default_factory=lambda: {
        BUILDING: (0.08, 0.14), CAR: (0.04, 0.07), POLE: (0.01, 0.02), VEGETATION: (0.04, 0.08)
    })
    intensity_mean: dict = field(default_factory=lambda: {
        GROUND: 0.30, BUILDING: 0.50, POLE: 0.65, CAR: 0.80, VEGETATION: 0.40
    })
    intensity_sigma: float = 0.08
    intensity_shift: float = 0.0
    building_density: float = 1.0
    min_ground_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("buildings", "cars", "poles", "vegetation"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"bad object count range for {name}: {(lo, hi)}")
        if self.intensity_sigma < 0 or self.points < 1 or self.max_range <= 5:
            raise ValueError("invalid scene spec")


def target_style(spec: SceneSpec) -> SceneSpec:
    """Default scene-level gap: darker surfaces and twice the building density."""
    return replace(spec, intensity_shift=-0.15, building_density=2.0)


def _box_surface(rng, n, center, size):
    """Uniform samples on the four side faces and the roof of an axis-aligned box."""
    sx, sy, sz = size
    areas = np.array([sx * sz, sx * sz, sy * sz, sy * sz, sx * sy])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    pts = np.empty((n, 3))
    pts[:, 0] = (u - 0.5) * sx
    pts[:, 1] = (v - 0.5) * sy
    pts[:, 2] = rng.random(n) * sz
    pts[face == 0, 1] = -sy / 2
    pts[face == 1, 1] = sy / 2
    pts[face == 2, 0] = -sx / 2
    pts[face == 3, 0] = sx / 2
    pts[face == 4, 2] = sz
    return pts + center


def _cylinder(rng, n, center, radius, height):
    phi = rng.uniform(-np.pi, np.pi, n)
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), rng.random(n) * height]) + center


def _blob(rng, n, center, radii):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.asarray(radii) * rng.uniform(0.7, 1.0, (n, 1)) + center


def _place(rng, spec, margin):
    rho = rng.uniform(4.0, spec.max_range - margin)
    theta = rng.uniform(-np.pi, np.pi)
    return np.array([rho * np.cos(theta), rho * np.sin(theta), -spec.sensor_height])


def _count(rng, bounds, scale=1.0):
    lo, hi = bounds
    return int(round(scale * rng.integers(lo, hi + 1)))


def generate_scene(spec: SceneSpec = SceneSpec(), rng=None):
    """Return ``(cloud, labels)`` for one scene; deterministic for a given seed."""
    rng = as_rng(spec.seed if rng is None else rng)
    budget = spec.points
    parts, labels = [], []

    def add(pts, cls):
        parts.append(pts)
        labels.append(np.full(len(pts), cls, dtype=np.int64))

    def n_pts(cls):
        lo, hi = spec.points_per_object[cls]
        return max(1, int(budget * rng.uniform(lo, hi)))

    object_budget = int(budget * (1.0 - spec.min_ground_fraction))
    used = 0
    plan = (
        [(BUILDING, _count(rng, spec.buildings, spec.building_density))]
        + [(CAR, _count(rng, spec.cars)), (POLE, _count(rng, spec.poles)), (VEGETATION, _count(rng, spec.vegetation))]
    )
    for cls, count in plan:
        for _ in range(count):
            n = min(n_pts(cls), object_budget - used)
            if n <= 0:
                break
            if cls == BUILDING:
                size = (rng.uniform(4, 8), rng.uniform(3, 6), rng.uniform(3, 7))
                add(_box_surface(rng, n, _place(rng, spec, 6.0), size), cls)
            elif cls == CAR:
                size = (rng.uniform(3.8, 4.6), rng.uniform(1.6, 1.9), rng.uniform(1.3, 1.6))
                add(_box_surface(rng, n, _place(rng, spec, 3.0), size), cls)
            elif cls == POLE:
                add(_cylinder(rng, n, _place(rng, spec, 1.0), 0.15, rng.uniform(4, 6)), cls)
            else:
                c = _place(rng, spec, 3.0) + np.array([0, 0, rng.uniform(1.5, 3.0)])
                add(_blob(rng, n, c, (rng.uniform(1, 2.5), rng.uniform(1, 2.5), rng.uniform(1, 2))), cls)
            used += n

    n_ground = budget - used
    rho = rng.uniform(2.0, spec.max_range - 0.5, n_ground)
    theta = rng.uniform(-np.pi, np.pi, n_ground)
    ground = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.full(n_ground, -spec.sensor_height)])
    ground[:, 2] += rng.normal(0, 0.03, n_ground)
    add(ground, GROUND)

    xyz = np.vstack(parts)
    lab = np.concatenate(labels)
    means = np.array([spec.intensity_mean.get(c, 0.5) for c in range(NUM_CLASSES)]) + spec.intensity_shift
    intensity = np.clip(means[lab] + rng.normal(0, spec.intensity_sigma, lab.size), 0.0, 1.0)

    in_range = np.linalg.norm(xyz, axis=1) <= spec.max_range
    cloud = PointCloud(np.column_stack([xyz, intensity])[in_range])
    return cloud, LabelArray(lab[in_range], NUM_CLASSES)


def generate_domain(spec: SceneSpec, count: int, seed: int, tag: str = "source",
                    weather: WeatherParams = None) -> DomainDataset:
    samples, tags = [], []
    for i in range(count):
        cloud, labels = generate_scene(spec, derive_rng(seed, f"scene-{tag}", i))
        if weather is not None and weather.kind != "clear":
            out = apply_weather(cloud, labels, weather, derive_rng(seed, f"weather-{tag}", i))
            cloud, labels = out.cloud, out.labels
        samples.append((cloud, labels))
        tags.append(weather.kind if weather is not None else "clear")
    return DomainDataset(samples, tag, seed=seed, weather=tags)


def default_target_weather(alpha: float = 0.12, cfg: WeatherConfig = WeatherConfig()) -> WeatherParams:
    return WeatherParams.from_config("dense_fog", cfg, alpha=alpha)


def generate_domain_pair(source_spec: SceneSpec = SceneSpec(), target_spec: SceneSpec = None,
                         target_weather: WeatherParams = None, count: int = 100, seed: int = 0):
    """Clear source scans and weather-corrupted target scans with a scene-style gap.

    Target labels are kept for evaluation; training code sees them only
    through :meth:`DomainDataset.training_view`, which drops them.
    """
    target_spec = target_style(source_spec) if target_spec is None else target_spec
    target_weather = default_target_weather() if target_weather is None else target_weather
    source = generate_domain(source_spec, count, seed, "source")
    target = generate_domain(target_spec, count, seed, "target", target_weather)
    return source, target
