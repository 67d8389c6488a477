"""Reading the analytical cost model: where the compute actually goes.

count_params and count_macs are closed-form sums over the architecture, so
sweeping a knob is free. Two facts worth knowing before training anything:
parameter count ignores k entirely, and compute scales almost linearly with
cloud size because every stage touches each of the N*k edges.
"""

from adaptgraph.network import ModelConfig, Variant, count_macs, count_params

print(f"{'k':>4} {'params':>12} {'macs @ N=1024':>16}")
for k in (5, 10, 20, 40):
    cfg = ModelConfig(k=k)
    print(f"{k:>4} {count_params(cfg):>12,} {count_macs(cfg, 1024):>16,}")
print("params never move with k; only the per-edge work scales\n")

print(f"{'heads':>6} {'params':>12} {'macs @ N=1024':>16}")
for h in (1, 2, 4, 6):
    cfg = ModelConfig(num_heads=h)
    print(f"{h:>6} {count_params(cfg):>12,} {count_macs(cfg, 1024):>16,}")
print("both are affine in the head count\n")

print("the four wiring variants at the default budget:")
print(f"{'variant':<14} {'params':>12} {'macs @ N=1024':>16}")
for v in Variant:
    cfg = ModelConfig(variant=v)
    print(f"{v.value:<14} {count_params(cfg):>12,} {count_macs(cfg, 1024):>16,}")

print("\ncloud size is the real lever (sequential-ff):")
for n in (128, 256, 512, 1024):
    total = count_macs(ModelConfig(), n)
    print(f"  N={n:>5}: {total / 1e9:7.3f} GMACs")
