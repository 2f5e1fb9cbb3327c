# %% [markdown]
# # CryptoNets on encrypted images
#
# A batch of images is packed one pixel per ciphertext, with the batch
# running along the slots. Weights stay plaintext (the encrypted-data
# setting). Expect about a minute on one core at N=8192.

# %%
import time

import numpy as np

from hegraph.he.context import make_context
from hegraph.models import load_shipped
from hegraph.reference import evaluate
from hegraph.runtime.executor import execute

ctx = make_context("ckks-ref", 8192, [30] * 7, 30, 128)
print(ctx.summary())

graph = load_shipped("cryptonets")
x = {"x": np.random.default_rng(1).uniform(0, 1, (16, 1, 28, 28))}

# %%
t0 = time.perf_counter()
out, profile = execute(graph, x, ctx, paradigm="encrypted-data", seed=1)
elapsed = time.perf_counter() - t0
ref = evaluate(graph, x)["fc2"]

err = np.abs(out["fc2"] - ref)
print(f"{elapsed:.1f} s for 16 images, output level {profile.output_levels['fc2']}")
print("largest logit", float(np.abs(ref).max()), "largest error", float(err.max()))
print("argmax agrees on", int(np.sum(out["fc2"].argmax(1) == ref.argmax(1))), "of 16")

# %% [markdown]
# Where did the time go? The square activation on 845 ciphertexts dominates:
# each one is a ciphertext-ciphertext product plus relinearization.

# %%
for nid, ms in sorted(profile.wall_ms.items(), key=lambda kv: -kv[1])[:4]:
    print(f"  {nid:8s} {ms / 1e3:6.1f} s")
print("ciphertext ops", profile.ct_ops)

# %% [markdown]
# The binarized variant has every weight in {-1, +1}. With the bypass on, its
# linear layers cost no levels at all, so it fits a five-level chain; with the
# bypass off the same graph is refused before any encryption happens.

# %%
from hegraph.runtime.bypass import BypassConfig
from hegraph.runtime.executor import DepthExceededError

ctx5 = make_context("ckks-ref", 8192, [50] + [30] * 5, 30, 128)
binarized = load_shipped("cryptonets_binarized")
try:
    execute(binarized, x, ctx5, bypass=BypassConfig(optimized_multiply=False))
except DepthExceededError as exc:
    print("bypass off:", exc)
