# coding: utf-8

# # Universal mixing
#
# Two labelled scans swap a subset of points. The subset is picked by a
# cylinder box in space, by an intensity band, or by a random set of classes.
# Both directions come from one mask draw, so no point is created or lost.

# In[1]:

import numpy as np

from unimix.config import MixConfig
from unimix.mixing import draw_masks, mix, mix_pair
from unimix.synth import CLASS_NAMES, SceneSpec, generate_scene, target_style

S = generate_scene(SceneSpec(points=3000), 1)
T = generate_scene(target_style(SceneSpec(points=3000)), 2)
cfg = MixConfig()


# In[2]:

for kind in ("spatial", "intensity", "semantic"):
    ms, mt = draw_masks(S, T, kind, cfg, np.random.default_rng(3))
    st, ts = mix(S, T, ms, mt), mix(T, S, mt, ms)
    print(f"{kind:9s}  |M_S|={ms.count():4d} |M_T|={mt.count():4d}  "
          f"|S->T|={len(st[0]):4d} |T->S|={len(ts[0]):4d}  total {len(st[0]) + len(ts[0])}")


# Semantic masks move whole classes. Which ones went where:

# In[3]:

ms, mt = draw_masks(S, T, "semantic", cfg, np.random.default_rng(4))
moved = lambda cloud_labels, m: sorted({CLASS_NAMES[c] for c in np.unique(cloud_labels[1].labels[m.bits])})
print("S gives:", moved(S, ms))
print("T gives:", moved(T, mt))


# The training loop calls mix_pair, which picks the mask kind by the
# configured policy (one kind at random per pair by default).

# In[4]:

rng = np.random.default_rng(5)
for _ in range(3):
    st, ts, kinds = mix_pair(S, T, cfg, rng)
    print(kinds, len(st[0]), len(ts[0]))
