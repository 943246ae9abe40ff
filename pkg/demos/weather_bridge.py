# coding: utf-8

# # Simulated adverse weather
#
# A clear synthetic scan is pushed through the fog and precipitation
# simulators. Hard returns lose intensity with range, some beams stop at a
# particle instead, and returns below the noise floor are lost.

# In[1]:

import numpy as np

from unimix.config import WeatherConfig
from unimix.synth import SceneSpec, generate_scene
from unimix.weather import Provenance, WeatherParams, apply_weather, generate_bridge

cloud, labels = generate_scene(SceneSpec(points=10_000), 11)
print(len(cloud), "points, mean intensity %.3f" % cloud.intensity.mean())


# Denser fog: surviving hard returns get darker and more beams are replaced
# or lost.

# In[2]:

for alpha in (0.0, 0.01, 0.06, 0.12):
    out = apply_weather(cloud, labels, WeatherParams(kind="dense_fog", alpha=alpha), 5)
    hard = out.provenance != Provenance.SCATTERED
    n_soft = int((out.provenance == Provenance.SCATTERED).sum())
    print(f"alpha={alpha:4.2f}  kept={len(out.cloud):5d}  soft={n_soft:5d}  "
          f"hard mean I={out.cloud.intensity[hard].mean():.3f}")


# Rain and snow use a per-beam hit probability that grows with range and
# precipitation rate. The ground also gets wet: darker, with some specular loss.

# In[3]:

cfg = WeatherConfig()
for kind in ("rain", "snow"):
    p = WeatherParams.from_config(kind, cfg)
    out = apply_weather(cloud, labels, p, 7)
    print(kind, "kept", len(out.cloud), "soft", int((out.provenance == Provenance.SCATTERED).sum()))


# The bridge domain draws a weather kind per scan from the configured
# composition. Labels follow the points; soft returns get the ignore label.

# In[4]:

rng = np.random.default_rng(0)
for _ in range(4):
    b = generate_bridge(cloud, labels, cfg=cfg, rng=rng)
    print(b.weather.kind, round(b.weather.alpha, 3), len(b.cloud), "ignored", int((b.labels.labels == 0).sum()))
