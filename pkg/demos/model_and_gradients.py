# coding: utf-8

# # A per-point MLP trained with soft Dice
#
# The segmentation head is a two-hidden-layer MLP on per-point features with
# hand-written backpropagation. We check the gradient against central
# differences, then watch the loss fall on one scan.

# In[1]:

import numpy as np

from unimix.cloud import LabelArray
from unimix.model import (
    FeatureSpec, dice_loss, featurize, forward, gradient, init_params, loss_and_gradient, sgd_step,
)
from unimix.synth import NUM_CLASSES, SceneSpec, generate_scene

spec = FeatureSpec()
print("features:", spec.names)


# Central differences on a tiny network, every weight checked.

# In[2]:

rng = np.random.default_rng(0)
params = init_params(3, rng, hidden=(4, 3))
feats = rng.normal(size=(6, len(spec))) / spec.scales()
labels = LabelArray(rng.integers(1, 3, 6), 3)
grad = gradient(params, feats, labels)
h, worst = 1e-5, 0.0
for k, t in enumerate(params.tensors):
    for idx in np.ndindex(t.shape):
        up = [a.copy() for a in params.tensors]; up[k][idx] += h
        dn = [a.copy() for a in params.tensors]; dn[k][idx] -= h
        num = (dice_loss(forward(params.with_tensors(up), feats), labels)
               - dice_loss(forward(params.with_tensors(dn), feats), labels)) / (2 * h)
        worst = max(worst, abs(num - grad.tensors[k][idx]) / max(abs(num), abs(grad.tensors[k][idx]), 1e-6))
print("max relative error: %.2e" % worst)


# Plain SGD on one synthetic scan.

# In[3]:

cloud, labels = generate_scene(SceneSpec(points=2000), 4)
x = featurize(cloud)
params = init_params(NUM_CLASSES, np.random.default_rng(1))
for step in range(201):
    loss, g = loss_and_gradient(params, x, labels)
    if step % 40 == 0:
        acc = (forward(params, x).argmax(1) == labels.labels).mean()
        print(f"step {step:3d}  dice loss {loss:.4f}  point accuracy {acc:.3f}")
    params = sgd_step(params, g, 0.5)
