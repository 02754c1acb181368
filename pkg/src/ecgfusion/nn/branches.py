"""Desk-scale convolutional branches.

``Branch1D`` stacks multi-kernel blocks (bottleneck, parallel odd kernels,
residual shortcut); ``Branch2D`` stacks residual 3x3 blocks with pooling
between stages. Both end in global average pooling and a dense embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .layers import Conv1d, Conv2d, Dense, Module
from .tensor import NumericalError, Tensor, as_tensor


@dataclass(frozen=True)
class Branch1DConfig:
    input_length: int = 256
    kernel_sizes: tuple[int, ...] = (9, 19, 39)
    channels: int = 8
    bottleneck: int = 8
    depth: int = 2
    embedding_dim: int = 512

    def __post_init__(self):
        if any(k % 2 != 1 or k < 1 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if min(self.input_length, self.channels, self.bottleneck, self.depth, self.embedding_dim) <= 0:
            raise ValueError("Branch1DConfig sizes must be positive")


@dataclass(frozen=True)
class Branch2DConfig:
    image_size: tuple[int, int] = (64, 64)
    n_blocks: int = 4
    channels: int = 8
    embedding_dim: int = 512

    def __post_init__(self):
        if min(*self.image_size, self.n_blocks, self.channels, self.embedding_dim) <= 0:
            raise ValueError("Branch2DConfig sizes must be positive")


class MultiKernelBlock(Module):
    def __init__(self, in_channels: int, cfg: Branch1DConfig, rng: np.random.Generator):
        self.bottleneck = Conv1d(in_channels, cfg.bottleneck, 1, rng) if in_channels > 1 else None
        width = cfg.bottleneck if in_channels > 1 else in_channels
        self.paths = [Conv1d(width, cfg.channels, k, rng) for k in cfg.kernel_sizes]
        self.shortcut = Conv1d(in_channels, cfg.channels * len(cfg.kernel_sizes), 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        z = self.bottleneck(x) if self.bottleneck is not None else x
        y = F.concat([path(z) for path in self.paths], axis=1)
        return F.relu(y + self.shortcut(x))


class Branch1D(Module):
    """Temporal branch: ``(N, L)`` or ``(N, 1, L)`` segments -> ``(N, embedding_dim)``."""

    def __init__(self, cfg: Branch1DConfig, rng: np.random.Generator):
        self.cfg = cfg
        out_ch = cfg.channels * len(cfg.kernel_sizes)
        self.blocks = [MultiKernelBlock(1 if i == 0 else out_ch, cfg, rng) for i in range(cfg.depth)]
        self.embed = Dense(out_ch, cfg.embedding_dim, rng)

    @property
    def output_dim(self) -> int:
        return self.cfg.embedding_dim

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 2:
            x = F.reshape(x, (x.shape[0], 1, x.shape[1]))
        if x.shape[1:] != (1, self.cfg.input_length):
            raise ValueError(f"Branch1D expects (N, 1, {self.cfg.input_length}), got {x.shape}")
        for i, block in enumerate(self.blocks):
            try:
                x = block(x)
            except NumericalError as exc:
                raise NumericalError(f"1D block {i}: {exc}") from None
        return F.relu(self.embed(F.global_avg_pool(x)))


class ResidualBlock2D(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng)
        self.conv2.weight.data *= 0.5  # keeps the residual sum near unit scale at init
        self.project = Conv2d(in_channels, out_channels, 1, rng) if in_channels != out_channels else None

    def forward(self, x: Tensor) -> Tensor:
        skip = self.project(x) if self.project is not None else x
        return F.relu(self.conv2(F.relu(self.conv1(x))) + skip)


class Branch2D(Module):
    """Spectral branch: ``(N, H, W)`` or ``(N, 1, H, W)`` images -> ``(N, embedding_dim)``.

    A 3x3 stem is followed by a 2x average pool; channels double and the
    map is pooled again before every second residual block.
    """

    def __init__(self, cfg: Branch2DConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.channels
        self.stem = Conv2d(1, c, 3, rng)
        blocks, pools = [], []
        ch = c
        h, w = cfg.image_size[0] // 2, cfg.image_size[1] // 2
        for i in range(cfg.n_blocks):
            pool = i > 0 and i % 2 == 0 and min(h, w) >= 4
            out = ch * 2 if pool else ch
            if pool:
                h, w = h // 2, w // 2
            blocks.append(ResidualBlock2D(ch, out, rng))
            pools.append(pool)
            ch = out
        self.blocks = blocks
        self._pools = tuple(pools)
        self.embed = Dense(ch, cfg.embedding_dim, rng)

    @property
    def output_dim(self) -> int:
        return self.cfg.embedding_dim

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 3:
            x = F.reshape(x, (x.shape[0], 1, *x.shape[1:]))
        if x.shape[1:] != (1, *self.cfg.image_size):
            raise ValueError(f"Branch2D expects (N, 1, {self.cfg.image_size}), got {x.shape}")
        x = F.avg_pool2d(F.relu(self.stem(x)), 2)
        for i, (block, pool) in enumerate(zip(self.blocks, self._pools)):
            if pool:
                x = F.avg_pool2d(x, 2)
            try:
                x = block(x)
            except NumericalError as exc:
                raise NumericalError(f"2D block {i}: {exc}") from None
        return F.relu(self.embed(F.global_avg_pool(x)))
