"""Five-stage point-cloud activity classifier and its ablation variants.

The input cloud (B, C, N) is turned into edge features over a single shared
KNN structure. Four stages (adaptive-kernel or conventional graph-conv,
depending on the variant) each produce per-point features that are max-pooled
over the neighbor axis. Stage outputs are fused by channel concatenation,
embedded, globally max+mean pooled, and classified by a small FC stack.

Kernel-generating stages always see the edge features of the raw input
coordinates, so geometry stays anchored to the original cloud no matter how
deep the feature path gets.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import graph
from . import tensor as T
from .errors import ConfigError, InvalidInputError, ShapeError, UsageError
from .kernels import MakConfig, MultiHeadAdaptiveKernel
from .nn import BatchNorm, Module, PointwiseLinear, finalize_names
from .tensor import Tensor


class Variant(Enum):
    """Stage layouts from the ablation study, in report order."""
    MAK_ONLY = "mak-only"            # four adaptive stages, classifier on stage 4
    MAK_FF = "mak-ff"                # four adaptive stages + fusion
    SANDWICH_FF = "sandwich-ff"      # adaptive/conv alternating + fusion
    SEQUENTIAL_FF = "sequential-ff"  # two adaptive then two conv + fusion

    @classmethod
    def from_string(cls, s: str) -> "Variant":
        for v in cls:
            if v.value == s:
                return v
        choices = ", ".join(v.value for v in cls)
        raise ConfigError(f"unknown variant {s!r}; choose one of: {choices}")


_STAGE_KINDS = {
    Variant.MAK_ONLY: ("mak", "mak", "mak", "mak"),
    Variant.MAK_FF: ("mak", "mak", "mak", "mak"),
    Variant.SANDWICH_FF: ("mak", "conv", "mak", "conv"),
    Variant.SEQUENTIAL_FF: ("mak", "mak", "conv", "conv"),
}


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    k: int = 20
    num_heads: int = 1
    stage_widths: tuple = (64, 64, 128, 256)
    emb_dims: int = 1024
    fc_widths: tuple = (512, 256)
    num_classes: int = 5
    variant: Variant = Variant.SEQUENTIAL_FF
    dropout: float = 0.5
    leaky_slope: float = 0.2
    mak_mid_channels: int = 8

    def validate(self) -> None:
        def positive(name):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")

        for name in ("in_channels", "k", "num_heads", "emb_dims", "mak_mid_channels"):
            positive(name)
        if len(self.stage_widths) != 4:
            raise ConfigError(
                f"stage_widths needs exactly 4 entries, got {len(self.stage_widths)}")
        if any(not isinstance(w, int) or w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage_widths entries must be positive, got {self.stage_widths}")
        if not self.fc_widths or any(not isinstance(w, int) or w < 1 for w in self.fc_widths):
            raise ConfigError(f"fc_widths must be non-empty positive ints, got {self.fc_widths}")
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes!r}")
        if not isinstance(self.variant, Variant):
            raise ConfigError(f"variant must be a Variant, got {self.variant!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must be in [0, 1), got {self.leaky_slope}")


@dataclass(frozen=True)
class _Stage:
    name: str
    kind: str          # "mak" or "conv"
    in_channels: int   # channels of the edge-feature input (2 * previous width)
    out_channels: int


def _stage_plan(cfg: ModelConfig) -> list:
    stages = []
    prev = cfg.in_channels
    for pos, (kind, width) in enumerate(zip(_STAGE_KINDS[cfg.variant], cfg.stage_widths), 1):
        stages.append(_Stage(name=f"{kind}{pos}", kind=kind,
                             in_channels=2 * prev, out_channels=width))
        prev = width
    return stages


def _fusion_width(cfg: ModelConfig) -> int:
    if cfg.variant is Variant.MAK_ONLY:
        return cfg.stage_widths[-1]
    return sum(cfg.stage_widths)


class ActivityNet(Module):
    """The assembled classifier. Build through :func:`build` for seeded init."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.slope = cfg.leaky_slope
        plan = _stage_plan(cfg)
        self._stages = [(s.name, s.kind) for s in plan]
        gen_in = 2 * cfg.in_channels
        for s in plan:
            if s.kind == "mak":
                mak_cfg = MakConfig(
                    in_channels=s.in_channels, out_channels=s.out_channels,
                    gen_in_channels=gen_in, num_heads=cfg.num_heads,
                    mid_channels=cfg.mak_mid_channels, residual=True)
                setattr(self, s.name,
                        MultiHeadAdaptiveKernel(mak_cfg, rng, dtype=dtype,
                                                leaky_slope=cfg.leaky_slope))
            else:
                setattr(self, s.name, _ConvBlock(s.in_channels, s.out_channels,
                                                 rng, dtype, cfg.leaky_slope))
        self.fuse = PointwiseLinear(_fusion_width(cfg), cfg.emb_dims, rng,
                                    bias=False, dtype=dtype)
        self.fuse_bn = BatchNorm(cfg.emb_dims, dtype=dtype)
        prev = 2 * cfg.emb_dims
        self._fc_names = []
        for i, w in enumerate(cfg.fc_widths, 1):
            setattr(self, f"fc{i}", PointwiseLinear(prev, w, rng, bias=False, dtype=dtype))
            setattr(self, f"fc_bn{i}", BatchNorm(w, dtype=dtype))
            self._fc_names.append((f"fc{i}", f"fc_bn{i}"))
            prev = w
        self.head = PointwiseLinear(prev, cfg.num_classes, rng, bias=True, dtype=dtype)

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None,
                trace: Optional[dict] = None) -> Tensor:
        cfg = self.cfg
        if x.ndim != 3:
            raise ShapeError(f"input must be (B, C, N), got {x.shape}")
        if x.shape[1] != cfg.in_channels:
            raise InvalidInputError(
                f"input has {x.shape[1]} channels, model expects {cfg.in_channels}")
        if x.shape[2] < cfg.k:
            raise InvalidInputError(f"N={x.shape[2]} is smaller than k={cfg.k}")
        if self.training and cfg.dropout > 0 and rng is None:
            raise UsageError("training-mode forward with dropout needs an rng")

        idx = graph.knn(x, cfg.k)              # computed once, shared below
        geo = graph.graph_feature(x, idx)      # (B, 2C, N, k), anchored to x
        if trace is not None:
            trace["neighbor_index"] = idx
            trace["geo"] = geo

        outs = []
        prev = None
        for name, kind in self._stages:
            feat = geo if prev is None else graph.graph_feature(prev, idx)
            if trace is not None:
                trace[f"{name}.feat"] = feat
            stage = getattr(self, name)
            if kind == "mak":
                if trace is not None:
                    trace[f"{name}.gen_input"] = geo
                y = stage(geo, feat)
            else:
                y = stage(feat)
            pooled = T.reduce(y, 3, "max")     # (B, width, N)
            outs.append(pooled)
            prev = pooled

        fused = outs[-1] if cfg.variant is Variant.MAK_ONLY else T.concat(outs, 1)
        if trace is not None:
            trace["fused"] = fused
        emb = T.leaky_relu(self.fuse_bn(self.fuse(fused)), self.slope)  # (B, emb, N)
        pooled = T.concat([T.reduce(emb, 2, "max"), T.reduce(emb, 2, "mean")], 1)

        h = pooled
        for fc_name, bn_name in self._fc_names:
            h = T.leaky_relu(getattr(self, bn_name)(getattr(self, fc_name)(h)), self.slope)
            if self.training and cfg.dropout > 0:
                h = T.dropout(h, cfg.dropout, rng)
        return self.head(h)


class _ConvBlock(Module):
    """Conventional stage: pointwise conv + BN + LeakyReLU on edge features."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype: str, slope: float):
        super().__init__()
        self.slope = slope
        self.conv = PointwiseLinear(in_channels, out_channels, rng, bias=False, dtype=dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.leaky_relu(self.bn(self.conv(x)), self.slope)


def build(cfg: ModelConfig, seed: int, dtype: str = "f32") -> ActivityNet:
    """Construct a model with deterministic, seed-keyed initialization."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    model = ActivityNet(cfg, rng, dtype=dtype)
    finalize_names(model)
    return model


def config_to_dict(cfg: ModelConfig) -> dict:
    """JSON-ready form of a ModelConfig (variant by its string value)."""
    return {
        "in_channels": cfg.in_channels,
        "k": cfg.k,
        "num_heads": cfg.num_heads,
        "stage_widths": list(cfg.stage_widths),
        "emb_dims": cfg.emb_dims,
        "fc_widths": list(cfg.fc_widths),
        "num_classes": cfg.num_classes,
        "variant": cfg.variant.value,
        "dropout": cfg.dropout,
        "leaky_slope": cfg.leaky_slope,
        "mak_mid_channels": cfg.mak_mid_channels,
    }


def config_from_dict(d: dict) -> ModelConfig:
    try:
        cfg = ModelConfig(
            in_channels=int(d["in_channels"]),
            k=int(d["k"]),
            num_heads=int(d["num_heads"]),
            stage_widths=tuple(int(w) for w in d["stage_widths"]),
            emb_dims=int(d["emb_dims"]),
            fc_widths=tuple(int(w) for w in d["fc_widths"]),
            num_classes=int(d["num_classes"]),
            variant=Variant.from_string(d["variant"]),
            dropout=float(d["dropout"]),
            leaky_slope=float(d["leaky_slope"]),
            mak_mid_channels=int(d["mak_mid_channels"]),
        )
    except KeyError as e:
        raise ConfigError(f"model config is missing field {e.args[0]!r}") from None
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------
# analytical cost model
# ---------------------------------------------------------------------

def count_params(cfg: ModelConfig) -> int:
    """Closed-form trainable-parameter total; equals the built model exactly."""
    cfg.validate()
    mid = cfg.mak_mid_channels
    gen_in = 2 * cfg.in_channels
    total = 0
    for s in _stage_plan(cfg):
        ci, co = s.in_channels, s.out_channels
        if s.kind == "mak":
            full = co * ci * cfg.num_heads
            total += gen_in * mid + 2 * mid          # conv0 + bn0
            total += mid * mid + 2 * mid             # conv_mid + bn_mid
            total += mid * full + full               # conv1 weight + bias
            if ci != co:
                total += ci * co + 2 * co            # residual projection + bn
            total += 2 * co                          # bn_out
        else:
            total += ci * co + 2 * co
    total += _fusion_width(cfg) * cfg.emb_dims + 2 * cfg.emb_dims
    prev = 2 * cfg.emb_dims
    for w in cfg.fc_widths:
        total += prev * w + 2 * w
        prev = w
    total += prev * cfg.num_classes + cfg.num_classes
    return total


def count_macs(cfg: ModelConfig, n_points: int) -> int:
    """Multiply-accumulate count for one sample with N points.

    Only true multiply-accumulates are counted: the pairwise-distance matmul,
    every pointwise affine map over its grid, and the per-neighbor kernel
    application. Comparisons (top-k, max-pool) and BN/activation arithmetic
    are excluded.
    """
    cfg.validate()
    if n_points < cfg.k:
        raise InvalidInputError(f"N={n_points} is smaller than k={cfg.k}")
    mid = cfg.mak_mid_channels
    gen_in = 2 * cfg.in_channels
    grid = n_points * cfg.k
    total = cfg.in_channels * n_points * n_points    # pairwise similarity
    for s in _stage_plan(cfg):
        ci, co = s.in_channels, s.out_channels
        if s.kind == "mak":
            full = co * ci * cfg.num_heads
            total += gen_in * mid * grid             # generator conv0
            total += mid * mid * grid                # generator conv_mid
            total += mid * full * grid               # generator final stage
            total += full * grid                     # kernel application
            if ci != co:
                total += ci * co * grid              # residual projection
        else:
            total += ci * co * grid
    total += _fusion_width(cfg) * cfg.emb_dims * n_points
    prev = 2 * cfg.emb_dims
    for w in cfg.fc_widths:
        total += prev * w
        prev = w
    total += prev * cfg.num_classes
    return total
