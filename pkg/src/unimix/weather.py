"""Adverse-weather corruption of clear-weather scans.

The received power of a pulsed LiDAR is modelled as the time convolution of the
transmitted pulse with the optical impulse response of the medium::

    P_R(R) = C_A * integral_0^{2R/c} P_T(t) H(R - c t / 2) dt

:func:`received_power` evaluates this numerically. For a short rectangular pulse
and a Beer-Lambert medium ``H(r) = beta * exp(-2 alpha r)`` the ratio of foggy to
clear power tends to ``exp(-2 alpha R)``, which is the closed form the fog and
precipitation simulators apply per point. A single stochastic soft return from
airborne particles competes with the attenuated hard return.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .cloud import LabelArray, PointCloud
from .config import DENSE_FOG_ALPHAS, LIGHT_FOG_ALPHAS, WEATHER_KINDS, WeatherConfig
from .seeding import as_rng


class WeatherError(ValueError):
    pass


class Provenance(IntEnum):
    UNCHANGED = 0
    ATTENUATED = 1
    SCATTERED = 2


# -- received power -----------------------------------------------------------


@dataclass(frozen=True)
class PulseModel:
    """Transmitted pulse ``P_T(t)``, impulse response ``H(r)`` and system constant.

    ``duration`` is the support of the pulse; outside ``[0, duration]`` it is
    zero, so integration stops there. ``None`` means the pulse has unbounded
    support and the full ``[0, 2R/c]`` window is integrated.
    """

    pulse: Callable[[np.ndarray], np.ndarray]
    response: Callable[[np.ndarray], np.ndarray]
    duration: Optional[float] = None
    system_constant: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.duration is not None and not self.duration > 0:
            raise WeatherError("pulse duration must be positive")
        if not self.system_constant > 0 or not self.c > 0:
            raise WeatherError("system constant and c must be positive")

    @classmethod
    def rectangular(cls, amplitude=1.0, duration=0.5, response=None, system_constant=1.0, c=1.0):
        if response is None:
            response = np.ones_like
        return cls(
            pulse=lambda t: np.full_like(np.asarray(t, dtype=np.float64), amplitude),
            response=response,
            duration=duration,
            system_constant=system_constant,
            c=c,
        )


def received_power(model: PulseModel, R: float, steps: int = 10_000) -> float:
    """Trapezoidal evaluation of the received power at range ``R``.

    ``steps`` is the number of sub-intervals on the integration window.
    """
    if not R > 0:
        raise WeatherError(f"range must be positive, got {R}")
    if steps < 2:
        raise WeatherError("steps must be >= 2")
    upper = 2.0 * R / model.c
    if model.duration is not None:
        upper = min(upper, model.duration)
    t = np.linspace(0.0, upper, steps + 1)
    integrand = np.asarray(model.pulse(t), dtype=np.float64) * np.asarray(
        model.response(R - model.c * t / 2.0), dtype=np.float64
    )
    if not np.isfinite(integrand).all():
        raise WeatherError("pulse or response produced non-finite samples")
    return float(model.system_constant * np.trapezoid(integrand, t))


def beer_lambert_power(R, alpha, amplitude=1.0, duration=0.5, beta=1.0, system_constant=1.0, c=1.0):
    """Closed-form received power for a rectangular pulse in a Beer-Lambert medium.

    Requires ``c * duration / 2 < R`` so the pulse lies entirely in front of the target.
    """
    scale = system_constant * amplitude * beta * math.exp(-2.0 * alpha * R)
    x = alpha * c * duration
    if x == 0.0:
        return scale * duration
    return scale * math.expm1(x) / (alpha * c)


def two_way_transmission(alpha, R):
    """Fraction of hard-return power surviving a round trip through the medium."""
    return np.exp(-2.0 * np.asarray(alpha) * np.asarray(R))


# -- per-point simulators ---------------------------------------------------------


@dataclass(frozen=True)
class WeatherParams:
    kind: str = "clear"
    alpha: float = 0.0
    rate: float = 0.0
    noise_floor: float = 0.03
    beta_soft: float = 0.15
    r_min: float = 1.5
    wet_ground: bool = False
    seed: Optional[int] = None
    particle_density: float = 0.0
    ground_ids: frozenset = frozenset()
    wet_reflectance: float = 0.6
    wet_drop_prob: float = 0.3
    scatter_label: str = "ignore"
    drop_lost: bool = True

    def __post_init__(self):
        if self.kind not in WEATHER_KINDS:
            raise WeatherError(f"unknown weather kind {self.kind!r}")
        if self.alpha < 0:
            raise WeatherError(f"alpha must be >= 0, got {self.alpha}")
        if self.rate < 0:
            raise WeatherError(f"rate must be >= 0, got {self.rate}")
        if not 0.0 <= self.noise_floor < 1.0:
            raise WeatherError("noise_floor must be in [0, 1)")
        if not 0.0 <= self.beta_soft <= 1.0:
            raise WeatherError("beta_soft must be in [0, 1]")
        if not self.r_min > 0:
            raise WeatherError("r_min must be positive")

    @classmethod
    def from_config(cls, kind: str, cfg: WeatherConfig, alpha=None, seed=None) -> "WeatherParams":
        """Parameters for ``kind`` with constants from ``cfg``.

        For fog ``alpha`` is required; precipitation uses the configured rate
        and per-kind attenuation.
        """
        common = dict(
            kind=kind,
            noise_floor=cfg.noise_floor,
            beta_soft=cfg.beta_soft,
            r_min=cfg.r_min,
            wet_ground=kind in cfg.wet_kinds(),
            seed=seed,
            ground_ids=cfg.ground_id_set(),
            wet_reflectance=cfg.wet_reflectance,
            wet_drop_prob=cfg.wet_drop_prob,
            scatter_label=cfg.scatter_label,
            drop_lost=cfg.drop_lost,
        )
        if kind == "rain":
            return cls(alpha=cfg.alpha_rain, rate=cfg.precipitation_rate, particle_density=cfg.k_rain, **common)
        if kind == "snow":
            return cls(alpha=cfg.alpha_snow, rate=cfg.precipitation_rate, particle_density=cfg.k_snow, **common)
        if kind in ("light_fog", "dense_fog"):
            if alpha is None:
                raise WeatherError("fog requires an attenuation coefficient")
            return cls(alpha=float(alpha), **common)
        return cls(**common)


@dataclass(frozen=True)
class BridgeSample:
    cloud: PointCloud
    labels: LabelArray
    weather: WeatherParams
    provenance: np.ndarray
    source_index: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.cloud
        yield self.labels


def _identity(cloud, labels, params) -> BridgeSample:
    n = len(cloud)
    return BridgeSample(
        cloud, labels, params, np.full(n, Provenance.UNCHANGED, np.int8), np.arange(n)
    )


def _assemble(cloud, labels, params, xyz, intensity, scattered, keep) -> BridgeSample:
    new_pts = np.column_stack([xyz, intensity])
    prov = np.where(
        scattered,
        Provenance.SCATTERED,
        np.where(intensity != cloud.intensity, Provenance.ATTENUATED, Provenance.UNCHANGED),
    ).astype(np.int8)
    new_labels = labels.labels
    if params.scatter_label == "ignore":
        new_labels = np.where(scattered, labels.ignore_id, new_labels)
    idx = np.flatnonzero(keep)
    return BridgeSample(
        PointCloud(new_pts[idx]),
        labels.replace(new_labels[idx]),
        params,
        prov[idx],
        idx,
    )


def _check_aligned(cloud, labels):
    if len(cloud) != len(labels):
        raise WeatherError(f"cloud has {len(cloud)} points but labels has {len(labels)}")


def simulate_fog(cloud: PointCloud, labels: LabelArray, params: WeatherParams, rng) -> BridgeSample:
    """Attenuate hard returns and inject one competing soft return per beam."""
    _check_aligned(cloud, labels)
    if params.alpha < 0:
        raise WeatherError(f"alpha must be >= 0, got {params.alpha}")
    rng = as_rng(rng)
    n = len(cloud)
    # draw before any early return so the stream position is the same for every alpha
    unit_draw = rng.standard_exponential(n)
    if params.alpha == 0.0:
        return _identity(cloud, labels, params)

    R = cloud.range()
    i_hard = cloud.intensity * two_way_transmission(params.alpha, R)
    depth = unit_draw / (2.0 * params.alpha)
    r_soft = np.maximum(depth, params.r_min)
    # the beam meets a particle only if it does so before reaching the object
    reachable = (depth < R) & (r_soft < R)
    i_soft = np.where(reachable, params.beta_soft * two_way_transmission(params.alpha, r_soft), 0.0)
    scattered = i_soft > i_hard
    intensity = np.where(scattered, i_soft, i_hard)
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(scattered, r_soft / np.where(R > 0, R, 1.0), 1.0)
    xyz = cloud.xyz * shrink[:, None]
    keep = intensity >= params.noise_floor if params.drop_lost else np.ones(n, bool)
    return _assemble(cloud, labels, params, xyz, intensity, scattered, keep)


def simulate_precipitation(cloud: PointCloud, labels: LabelArray, params: WeatherParams, rng) -> BridgeSample:
    """Rain or snow: each beam hits a particle with probability ``1 - exp(-lambda R)``."""
    _check_aligned(cloud, labels)
    if params.rate < 0:
        raise WeatherError(f"rate must be >= 0, got {params.rate}")
    rng = as_rng(rng)
    n = len(cloud)
    u_hit = rng.random(n)
    u_range = rng.random(n)
    if params.rate == 0.0 and params.alpha == 0.0:
        return _identity(cloud, labels, params)

    R = cloud.range()
    lam = params.particle_density * params.rate
    p_hit = -np.expm1(-lam * R)
    scattered = (u_hit < p_hit) & (R > params.r_min)
    r_soft = params.r_min + u_range * (R - params.r_min)
    i_soft = params.beta_soft * two_way_transmission(params.alpha, r_soft)
    i_hard = cloud.intensity * two_way_transmission(params.alpha, R)
    intensity = np.where(scattered, i_soft, i_hard)
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(scattered, r_soft / np.where(R > 0, R, 1.0), 1.0)
    xyz = cloud.xyz * shrink[:, None]
    keep = intensity >= params.noise_floor if params.drop_lost else np.ones(n, bool)
    return _assemble(cloud, labels, params, xyz, intensity, scattered, keep)


def _wet_ground_effect(labels: LabelArray, params: WeatherParams, rng):
    """Per-point (intensity factor, keep) for the wet-ground effect."""
    n = len(labels)
    u = rng.random(n)
    factor = np.ones(n)
    keep = np.ones(n, bool)
    if not params.wet_ground:
        return factor, keep
    if not params.ground_ids:
        warnings.warn("wet ground enabled but no ground classes configured", stacklevel=3)
        return factor, keep
    ground = np.isin(labels.labels, list(params.ground_ids))
    factor[ground] = params.wet_reflectance
    keep[ground] = u[ground] >= params.wet_drop_prob
    return factor, keep


def wet_ground(cloud: PointCloud, labels: LabelArray, params: WeatherParams, rng):
    """Darken ground-class returns and drop a fraction of them (specular loss)."""
    _check_aligned(cloud, labels)
    factor, keep = _wet_ground_effect(labels, params, as_rng(rng))
    if (factor == 1.0).all() and keep.all():
        return cloud, labels
    out = cloud.with_intensity(cloud.intensity * factor)
    return out.take(keep), labels.take(keep)


SIMULATORS = {
    "light_fog": simulate_fog,
    "dense_fog": simulate_fog,
    "rain": simulate_precipitation,
    "snow": simulate_precipitation,
}


def apply_weather(cloud: PointCloud, labels: LabelArray, params: WeatherParams, rng) -> BridgeSample:
    """Run the simulator for ``params.kind`` followed by the wet-ground effect."""
    rng = as_rng(rng)
    if params.kind == "clear":
        sample = _identity(cloud, labels, params)
    else:
        sample = SIMULATORS[params.kind](cloud, labels, params, rng)
    if not params.wet_ground:
        return sample
    factor, keep = _wet_ground_effect(sample.labels, params, rng)
    # scattered particles are not ground even when they keep the original label
    airborne = sample.provenance == Provenance.SCATTERED
    factor[airborne] = 1.0
    keep[airborne] = True
    if (factor == 1.0).all() and keep.all():
        return sample
    intensity = sample.cloud.intensity * factor
    prov = sample.provenance.copy()
    prov[(factor != 1.0) & (prov == Provenance.UNCHANGED)] = Provenance.ATTENUATED
    return BridgeSample(
        sample.cloud.with_intensity(intensity).take(keep),
        sample.labels.take(keep),
        params,
        prov[keep],
        sample.source_index[keep],
    )


def sample_weather(composition: dict, cfg: WeatherConfig, rng, seed=None) -> WeatherParams:
    """Draw one weather kind by weight, then its coefficient."""
    unknown = set(composition) - set(WEATHER_KINDS)
    if unknown:
        raise WeatherError(f"unknown weather kinds {sorted(unknown)}")
    kinds = [k for k in WEATHER_KINDS if composition.get(k, 0.0) > 0]
    weights = np.array([composition[k] for k in kinds], dtype=np.float64)
    if any(w < 0 for w in composition.values()) or weights.sum() <= 0:
        raise WeatherError("composition weights must be non-negative with a positive sum")
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    alpha = None
    if kind == "light_fog":
        alpha = LIGHT_FOG_ALPHAS[int(rng.integers(len(LIGHT_FOG_ALPHAS)))]
    elif kind == "dense_fog":
        alpha = DENSE_FOG_ALPHAS[int(rng.integers(len(DENSE_FOG_ALPHAS)))]
    return WeatherParams.from_config(kind, cfg, alpha=alpha, seed=seed)


def generate_bridge(cloud: PointCloud, labels: LabelArray, composition: Optional[dict] = None,
                    rng=None, cfg: Optional[WeatherConfig] = None) -> BridgeSample:
    """Turn one clear scan into a bridge-domain scan under a randomly drawn weather.

    ``rng`` may be a Generator or an integer seed; with an integer the seed is
    recorded in the returned weather parameters.
    """
    cfg = cfg or WeatherConfig()
    if composition is None:
        composition = cfg.composition()
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = as_rng(rng)
    params = sample_weather(composition, cfg, rng, seed=seed)
    return apply_weather(cloud, labels, params, rng)

