# %% [markdown]
# # Depth budgets and graph folding
#
# Every ciphertext multiply followed by a rescale spends one level of the
# modulus chain. This walk-through measures how many levels the shipped
# networks need and how the folding passes cut that number.

# %%
from hegraph.models import SHIPPED, load_shipped
from hegraph.passes import avgpool_fold, activation_fold, bn_fold, constant_fold, depth_analysis

for name in SHIPPED:
    g = load_shipped(name)
    plain = depth_analysis(g)
    aware = depth_analysis(g, bypass_aware=True)
    print(f"{name:22s} depth {plain.total:2d}   with +-1/0 bypass {aware.total:2d}")

# %% [markdown]
# The critical path explains where the levels go. On the CIFAR network the
# batch norms and the scaled activations each add a level.

# %%
cifar = load_shipped("cifar10")
report = depth_analysis(cifar)
for nid in report.critical_path:
    print(f"  {nid:10s} {cifar[nid].op:20s} +{report.per_node[nid]}")

# %% [markdown]
# Apply the folds one at a time and watch the total fall from 10 to 8.
# Activation folding moves sqrt(|a|) into the weights so the square runs with
# a unit coefficient; BN folding merges the affine transform into the weights
# plus a bias add. The pool here excludes padding from its divisor, so it is
# left alone by the AvgPool fold.

# %%
g = cifar
for fold in (constant_fold, avgpool_fold, activation_fold, bn_fold):
    g = fold(g)
    print(f"after {fold.__name__:16s} depth {depth_analysis(g).total}")

# %% [markdown]
# Folding is exact up to float round-off: compare plaintext outputs.

# %%
import numpy as np

from hegraph.reference import evaluate

x = {"x": np.random.default_rng(0).uniform(0, 1, (2, 3, 32, 32))}
before, after = evaluate(cifar, x)["fc"], evaluate(g, x)["fc"]
print("max relative deviation", float(np.max(np.abs(after - before) / np.abs(before))))
