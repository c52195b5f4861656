"""Dilated-convolution residual blocks and the six-block residual stack."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .layers import FMS, BatchNorm1d, Conv1d, Module
from .tensor import Tensor, leaky_relu, max_pool1d

PROFILES = {"S": (32, 64), "M": (128, 256), "L": (256, 512)}


def dilation_schedule(n_blocks: int = 12, max_dilation: int = 32) -> list[int]:
    """Doubling dilations 1, 2, ..., max_dilation, repeated to cover ``n_blocks``."""
    if max_dilation < 1 or max_dilation & (max_dilation - 1):
        raise ValueError(f"max dilation must be a power of two, got {max_dilation}")
    cycle = [2**i for i in range(max_dilation.bit_length())]
    if n_blocks % len(cycle):
        warnings.warn(f"{n_blocks} blocks is not a multiple of the {len(cycle)}-block cycle; last cycle truncated")
    return [cycle[i % len(cycle)] for i in range(n_blocks)]


def receptive_field(schedule, kernel_size: int = 3, pool_factor: int = 1, blocks_per_pool: int = 2) -> int:
    """Input span seen by one output frame.

    With ``pool_factor > 1`` a pool follows every ``blocks_per_pool`` blocks and
    scales the contribution of everything after it.
    """
    field = 1
    jump = 1
    for i, d in enumerate(schedule):
        field += (kernel_size - 1) * d * jump
        if pool_factor > 1 and (i + 1) % blocks_per_pool == 0:
            field += (pool_factor - 1) * jump
            jump *= pool_factor
    return field


def channel_plan(profile: str, n_residual: int = 6) -> list[int]:
    c1, c2 = PROFILES[profile]
    return [c1] * min(2, n_residual) + [c2] * max(0, n_residual - 2)


@dataclass(frozen=True)
class DilatedBlockConfig:
    channels_in: int
    channels_out: int
    kernel_size: int = 3
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError("dilated block kernel size must be odd")
        if self.dilation < 1:
            raise ValueError("dilation must be positive")


class DilatedBlock(Module):
    """shortcut(x) + conv1x1(dilconv(leaky_relu(bn(x)))), length preserving."""

    def __init__(self, cfg: DilatedBlockConfig, rng: np.random.Generator, slope: float = 0.01, residual: bool = True):
        self.cfg = cfg
        self.slope = slope
        self.residual = residual
        pad = cfg.dilation * (cfg.kernel_size - 1) // 2
        self.bn = BatchNorm1d(cfg.channels_in)
        self.dil_conv = Conv1d(cfg.channels_in, cfg.channels_out, cfg.kernel_size, rng, dilation=cfg.dilation, padding=pad)
        self.pointwise = Conv1d(cfg.channels_out, cfg.channels_out, 1, rng, bias=True)
        if residual and cfg.channels_in != cfg.channels_out:
            self.shortcut = Conv1d(cfg.channels_in, cfg.channels_out, 1, rng)
        else:
            self.shortcut = None

    def __call__(self, x: Tensor) -> Tensor:
        T = x.shape[2]
        reach = self.cfg.dilation * (self.cfg.kernel_size - 1)
        if T <= reach:
            raise ValueError(f"time length {T} too short for dilation {self.cfg.dilation}")
        y = self.pointwise(self.dil_conv(leaky_relu(self.bn(x), self.slope)))
        if not self.residual:
            return y
        return y + (self.shortcut(x) if self.shortcut is not None else x)


def dilated_block_forward(x: Tensor, block: DilatedBlock) -> Tensor:
    return block(x)


@dataclass(frozen=True)
class StackConfig:
    profile: str = "S"
    channels_in: int = 128
    residual_blocks: int = 6
    dilated_per_residual: int = 2
    kernel_size: int = 3
    max_dilation: int = 32
    pool_factor: int = 3
    dilated: bool = True  # False gives plain RawNet-style dilation-1 blocks
    use_fms: bool = True
    residual: bool = True

    def dilations(self) -> list[int]:
        n = self.residual_blocks * self.dilated_per_residual
        if not self.dilated:
            return [1] * n
        return dilation_schedule(n, self.max_dilation)

    def output_length(self, length: int) -> int:
        for _ in range(self.residual_blocks):
            length //= self.pool_factor
        return length


class ResidualStack(Module):
    """Residual blocks of dilated blocks, each followed by max pooling and FMS."""

    def __init__(self, cfg: StackConfig, rng: np.random.Generator, slope: float = 0.01):
        self.cfg = cfg
        if cfg.profile not in PROFILES:
            raise ValueError(f"unknown profile {cfg.profile!r}; expected one of {sorted(PROFILES)}")
        dilations = iter(cfg.dilations())
        self.blocks: list[DilatedBlock] = []
        self.fms: list[FMS] = []
        c_in = cfg.channels_in
        for c_out in channel_plan(cfg.profile, cfg.residual_blocks):
            for j in range(cfg.dilated_per_residual):
                bcfg = DilatedBlockConfig(c_in if j == 0 else c_out, c_out, cfg.kernel_size, next(dilations))
                self.blocks.append(DilatedBlock(bcfg, rng, slope, residual=cfg.residual))
            if cfg.use_fms:
                self.fms.append(FMS(c_out, rng))
            c_in = c_out

    @property
    def channels_out(self) -> int:
        return channel_plan(self.cfg.profile, self.cfg.residual_blocks)[-1]

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if cfg.output_length(x.shape[2]) < 1:
            raise ValueError(f"time length {x.shape[2]} too short for {cfg.residual_blocks} pooling stages")
        per = cfg.dilated_per_residual
        for r in range(cfg.residual_blocks):
            for block in self.blocks[r * per : (r + 1) * per]:
                x = block(x)
            x = max_pool1d(x, cfg.pool_factor)
            if cfg.use_fms:
                x = self.fms[r](x)
        return x


def stack_forward(x: Tensor, stack: ResidualStack) -> Tensor:
    return stack(x)
