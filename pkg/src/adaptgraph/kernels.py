"""Multi-head adaptive kernels: per-neighbor filter matrices predicted on the fly.

A small generator network looks at geometric edge features and emits, for
every (point, neighbor) pair, H separate C_out x C_in filter matrices. Those
are applied to the content features by batched matrix-vector products and
summed over heads. A residual path (projected when channel counts differ)
and output batch norm wrap the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import BatchNorm, Module, Parameter, PointwiseLinear, glorot_uniform
from .tensor import Tensor


@dataclass(frozen=True)
class MakConfig:
    in_channels: int          # C_in of the filtered features
    out_channels: int         # C_out
    gen_in_channels: int      # channels of the kernel-generation input
    num_heads: int = 1
    mid_channels: int = 8     # hidden width of the generator
    residual: bool = True

    def validate(self) -> None:
        for field in ("in_channels", "out_channels", "gen_in_channels",
                      "num_heads", "mid_channels"):
            v = getattr(self, field)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{field} must be a positive integer, got {v!r}")


class _KernelGenerator(Module):
    """conv0 -> BN -> LeakyReLU -> conv_mid -> BN -> LeakyReLU -> conv1 (bare).

    The final stage has no normalization or activation so predicted kernels
    can take either sign. Its output channel c encodes (out, in, head) as
    c = (out * C_in + in) * H + head.
    """

    def __init__(self, cfg: MakConfig, rng: np.random.Generator,
                 dtype: str = "f32", leaky_slope: float = 0.2):
        super().__init__()
        mid = cfg.mid_channels
        full = cfg.out_channels * cfg.in_channels * cfg.num_heads
        self.slope = leaky_slope
        self.conv0 = PointwiseLinear(cfg.gen_in_channels, mid, rng, bias=False, dtype=dtype)
        self.bn0 = BatchNorm(mid, dtype=dtype)
        self.conv_mid = PointwiseLinear(mid, mid, rng, bias=False, dtype=dtype)
        self.bn_mid = BatchNorm(mid, dtype=dtype)
        self.conv1 = PointwiseLinear(mid, full, rng, bias=True, dtype=dtype)

    def forward(self, geo: Tensor) -> Tensor:
        y0 = T.leaky_relu(self.bn0(self.conv0(geo)), self.slope)
        y1 = T.leaky_relu(self.bn_mid(self.conv_mid(y0)), self.slope)
        b, mid, n, k = y1.shape
        # run the wide final stage channels-last: the (B, N*k, mid) x
        # (mid, full) product makes the six-axis bank reshape below a view
        # instead of a quarter-gigabyte transpose
        yt = T.permute(T.reshape(y1, (b, mid, n * k)), (0, 2, 1))
        return T.matmul_bias(yt, T.permute(self.conv1.weight.value, (1, 0)),
                             self.conv1.bias.value)  # (B, N*k, full)


def apply_heads(bank: Tensor, x: Tensor) -> Tensor:
    """Apply per-position kernel matrices and sum over heads.

    bank: (B, N, k, C_out, C_in, H); x: (B, C_in, N, k).
    Returns (B, C_out, N, k) with out[b,:,n,j] = sum_h W[b,n,j,:,:,h] @ x[b,:,n,j].
    """
    if bank.ndim != 6:
        raise ShapeError(f"kernel bank must be rank 6, got {bank.shape}")
    if x.ndim != 4:
        raise ShapeError(f"features must be (B, C_in, N, k), got {x.shape}")
    b, n, k, c_out, c_in, heads = bank.shape
    if heads < 1:
        raise ConfigError("head count must be at least 1")
    if x.shape != (b, c_in, n, k):
        raise ShapeError(
            f"features {x.shape} do not match bank (B={b}, C_in={c_in}, N={n}, k={k})")

    xp = T.reshape(T.permute(x, (0, 2, 3, 1)), (b, n, k, c_in, 1))
    total = None
    for h in range(heads):
        if heads == 1:
            w_h = T.reshape(bank, (b, n, k, c_out, c_in))
        else:
            w_h = T.reshape(T.slice_axis(bank, 5, h, h + 1), (b, n, k, c_out, c_in))
        out_h = T.matmul_batched(w_h, xp)  # (B, N, k, C_out, 1)
        total = out_h if total is None else T.add(total, out_h)
    return T.permute(T.reshape(total, (b, n, k, c_out)), (0, 3, 1, 2))


class MultiHeadAdaptiveKernel(Module):
    """The full operator: generate kernels from geometry, filter the features,
    add the (possibly projected) residual, normalize, activate."""

    def __init__(self, cfg: MakConfig, rng: np.random.Generator,
                 dtype: str = "f32", leaky_slope: float = 0.2):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.slope = leaky_slope
        self.gen = _KernelGenerator(cfg, rng, dtype=dtype, leaky_slope=leaky_slope)
        if cfg.residual and cfg.in_channels != cfg.out_channels:
            self.proj = PointwiseLinear(cfg.in_channels, cfg.out_channels, rng,
                                        bias=False, dtype=dtype)
            self.proj_bn = BatchNorm(cfg.out_channels, dtype=dtype)
        self.bn_out = BatchNorm(cfg.out_channels, dtype=dtype)

    def generate_kernels(self, geo: Tensor) -> Tensor:
        """(B, C_geo, N, k) -> kernel bank (B, N, k, C_out, C_in, H)."""
        if geo.ndim != 4:
            raise ShapeError(f"generator input must be (B, C, N, k), got {geo.shape}")
        if geo.shape[1] != self.cfg.gen_in_channels:
            raise ShapeError(
                f"generator expects {self.cfg.gen_in_channels} channels, got {geo.shape[1]}")
        b, _, n, k = geo.shape
        flat = self.gen(geo)
        c = self.cfg
        return T.reshape(flat, (b, n, k, c.out_channels, c.in_channels, c.num_heads))

    def forward(self, geo: Tensor, feat: Tensor) -> Tensor:
        cfg = self.cfg
        if feat.ndim != 4 or feat.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"features must be (B, {cfg.in_channels}, N, k), got {feat.shape}")
        if feat.shape[0] != geo.shape[0] or feat.shape[2:] != geo.shape[2:]:
            raise ShapeError(
                f"geometry {geo.shape} and features {feat.shape} disagree on B/N/k")
        out = apply_heads(self.generate_kernels(geo), feat)
        if cfg.residual:
            if cfg.in_channels == cfg.out_channels:
                identity = feat
            else:
                identity = self.proj_bn(self.proj(feat))
            out = T.add(out, identity)
        return T.leaky_relu(self.bn_out(out), self.slope)
