"""Per-frame feature extraction.

A small stack of conv blocks (3x3 conv, relu, 2x2 average pool) stands in
for a large pretrained CNN. Total downsampling is ``stride`` (one block per
factor of two), so a stride-8 backbone maps H x W x 3 frames to
H/8 x W/8 x C feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .nn import Conv2d, Module


@dataclass
class BackboneConfig:
    input_height: int = 32
    input_width: int = 64
    stride: int = 8
    channels_out: int = 24
    widths: tuple[int, ...] = ()

    def __post_init__(self):
        n_blocks = int(np.log2(self.stride))
        if 2 ** n_blocks != self.stride:
            raise ValueError(f"stride must be a power of two, got {self.stride}")
        if not self.widths:
            base = [self.channels_out // 2] * (n_blocks - 1) + [self.channels_out]
            self.widths = tuple(base)
        if len(self.widths) != n_blocks or self.widths[-1] != self.channels_out:
            raise ValueError(
                f"widths {self.widths} must have {n_blocks} entries ending in {self.channels_out}"
            )
        if self.feature_height < 2 or self.feature_width < 2:
            raise ValueError(
                f"{self.input_height}x{self.input_width} at stride {self.stride} "
                "leaves a feature map smaller than 2x2"
            )

    @property
    def feature_height(self) -> int:
        return self.input_height // self.stride

    @property
    def feature_width(self) -> int:
        return self.input_width // self.stride


def _front_kernels(width: int, rng: np.random.Generator) -> np.ndarray:
    """First-layer 3x3 kernels: luminance, color opponents, and +/-
    rectified oriented differences; extra channels fall back to noise."""
    w = np.zeros((3, 3, 3, width), np.float32)
    gray = np.full(3, 1.0 / 3.0, np.float32)

    def set_spatial(idx, kernel, color):
        if idx < width:
            w[:, :, :, idx] = kernel[:, :, None] * color[None, None, :]

    dx = np.array([[0, 0, 0], [-0.5, 0, 0.5], [0, 0, 0]], np.float32)
    dy = dx.T
    cs = np.array([[-0.125] * 3, [-0.125, 1.0, -0.125], [-0.125] * 3], np.float32)
    center = np.zeros((3, 3), np.float32)
    center[1, 1] = 1.0
    bank = [
        (center, gray),                                   # luminance
        (center, np.array([1.0, -1.0, 0.0], np.float32)),  # R-G
        (center, np.array([-1.0, 1.0, 0.0], np.float32)),
        (center, np.array([-0.5, -0.5, 1.0], np.float32)),  # B-Y
        (center, np.array([0.5, 0.5, -1.0], np.float32)),
        (dx, gray), (-dx, gray),                          # +/- horizontal edges
        (dy, gray), (-dy, gray),                          # +/- vertical edges
        (cs, gray), (-cs, gray),                          # center-surround
    ]
    for i, (kernel, color) in enumerate(bank):
        set_spatial(i, 2.0 * kernel, color)
    for i in range(len(bank), width):
        w[:, :, :, i] = rng.uniform(-1, 1, size=(3, 3, 3)).astype(np.float32) * (6.0 / 27) ** 0.5
    return w


class ConvBackbone(Module):
    """Stateless (given parameters) frame encoder.

    The first block starts from fixed luminance, color-opponent, and
    rectified oriented-difference kernels (a stand-in for the oriented
    filters a pretrained first layer would provide; purely random first
    layers leave frame motion invisible to the correlation readout for
    many seeds). Later blocks start near channel passthrough plus noise.
    All parameters remain trainable.
    """

    def __init__(self, config: BackboneConfig, rng: np.random.Generator,
                 structured_init: bool = True):
        self.config = config
        blocks = []
        c_in = 3
        for i, width in enumerate(config.widths):
            conv = Conv2d(c_in, width, 3, rng, stride=1, pad=1)
            if structured_init:
                if i == 0:
                    conv.w.data = _front_kernels(width, rng)
                    conv.b.data = np.zeros(width, np.float32)
                else:
                    w = 0.25 * conv.w.data
                    for c in range(min(c_in, width)):
                        w[1, 1, c, c] += 1.0
                    conv.w.data = w
                    conv.b.data = np.zeros(width, np.float32)
            blocks.append(conv)
            c_in = width
        self.blocks = blocks

    def extract(self, frames: Tensor) -> Tensor:
        """Map (N, H, W, 3) frames in [0, 1] to (N, H0, W0, C) features."""
        cfg = self.config
        if frames.ndim != 4 or frames.shape[1:] != (cfg.input_height, cfg.input_width, 3):
            raise ShapeError(
                f"backbone: expected (N, {cfg.input_height}, {cfg.input_width}, 3), "
                f"got {frames.shape}"
            )
        x = frames
        for conv in self.blocks:
            x = dc.avg_pool2d(dc.relu(conv(x)), 2)
        return x

    def __call__(self, frames: Tensor) -> Tensor:
        return self.extract(frames)
