# %% [markdown]
# # Plaintext ones are free
#
# Times A @ B + C with A encrypted entry by entry and B, C plaintext. As more
# entries of B are exactly 1, more scalar products are skipped outright.

# %%
from hegraph.bench import bench_gemm, format_table
from hegraph.he.context import make_context

ctx = make_context("ckks-ref", 8192, [30, 30, 30], 30, 128)
records = bench_gemm(ctx, n=8, ones_fracs=(0.0, 0.25, 0.5, 0.8, 1.0), seed=0)
print(format_table(records))

# %% [markdown]
# Each one in B is used by all n rows of A, so the skipped count is exactly
# n times the number of ones in the seeded mask.

# %%
for r in records:
    p = r.params
    print(f"ones_frac={p['ones_frac']:.2f}: {r.bypass['mult']:4d} skipped of {p['scalar_mults']}, "
          f"error {p['max_abs_error']:.1e}")
