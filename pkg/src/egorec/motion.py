"""Joint global/local motion estimation with differentiable warping.

For each feature pair the module predicts an affine transform for
whole-frame (camera) motion and a dense field for the masked interactor
motion. Pixel coordinates are normalized to [-1, 1] with align-corners
semantics, so predicted magnitudes are resolution independent. The current
frame is reconstructed by bilinear sampling of the previous frame at the
transformed coordinates, trained with a photometric L1 loss plus a
smoothness penalty on the masked field.

The affine transform is predicted as a residual from the identity and both
output heads are zero-initialized, so a fresh model starts exactly at
T = I, D = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .attention import global_pool, weighted_pool


@dataclass
class MotionEstimate:
    transform: Tensor   # (N, 3, 3), last row fixed [0, 0, 1]
    field: Tensor       # (N, H, W, 2) in normalized coordinates
    f_gm: Tensor        # (N, embed_dim) global motion embedding
    f_lm: Tensor        # (N, embed_dim) local motion embedding


def identity_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """Homogeneous pixel-center coordinates (h, w, 3) spanning [-1, 1]^2."""
    xs = np.linspace(-1.0, 1.0, w).astype(dtype)
    ys = np.linspace(-1.0, 1.0, h).astype(dtype)
    grid = np.empty((h, w, 3), dtype=dtype)
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    grid[..., 2] = 1.0
    return grid


class MotionEstimator(Module):
    def __init__(self, feat_channels: int, frame_hw: tuple[int, int],
                 rng: np.random.Generator, max_displacement: int = 5,
                 embed_dim: int = 16, global_dim: int | None = None):
        self.d = max_displacement
        self.embed_dim = embed_dim
        self.frame_hw = frame_hw
        corr_ch = (2 * max_displacement + 1) ** 2
        # the global embedding is at least as wide as the correlation
        # profile, so the linear head alone can realize any profile readout
        # without waiting for the conv to rotate
        self.global_dim = global_dim if global_dim is not None else max(corr_ch + 7, embed_dim)
        self.global_conv = Conv2d(corr_ch, self.global_dim, 3, rng, pad=1, gain=1.0)
        self.affine_head = Linear(self.global_dim, 6, rng, zero_init=True)
        self.local_conv = Conv2d(corr_ch + feat_channels, embed_dim, 3, rng, pad=1)
        self.field_up1 = ConvTranspose2d(embed_dim, 8, 4, rng, stride=2, pad=1)
        self.field_up2 = ConvTranspose2d(8, 2, 8, rng, stride=4, pad=2, zero_init=True)

    def estimate(self, f_prev: Tensor, f_cur: Tensor, m0: Tensor) -> MotionEstimate:
        """Predict per-pair transform, dense field, and motion embeddings.

        ``f_prev``/``f_cur`` are (N, H0, W0, C) from the same backbone;
        ``m0`` is the coarsest interactor mask, (N, H0, W0).
        """
        if f_prev.shape != f_cur.shape:
            raise ShapeError(f"motion: feature shapes differ, {f_prev.shape} vs {f_cur.shape}")
        if m0.shape != f_cur.shape[:3]:
            raise ShapeError(f"motion: mask {m0.shape} does not match features {f_cur.shape}")
        n = f_cur.shape[0]
        corr = dc.correlate(f_prev, f_cur, self.d)

        # the displacement signal is close to linear in the correlation
        # profile; a relu here only worsens conditioning
        g = self.global_conv(corr)
        f_gm = global_pool(g)
        delta = self.affine_head(f_gm)  # (N, 6)
        zeros = Tensor(np.zeros((n, 3), dtype=delta.dtype.type))
        delta9 = dc.reshape(dc.concat([delta, zeros], axis=1), (n, 3, 3))
        eye = Tensor(np.broadcast_to(np.eye(3, dtype=delta.dtype.type), (n, 3, 3)))
        transform = eye + delta9

        gate = dc.reshape(m0, m0.shape + (1,))
        local_in = dc.concat([corr, f_cur], axis=3) * gate
        l = self.local_conv(local_in)
        # weighted pooling keeps the embedding independent of how many
        # cells the interactor covers
        f_lm = weighted_pool(l, m0)
        field = self.field_up2(dc.relu(self.field_up1(dc.relu(l))))
        fh, fw = field.shape[1:3]
        if (fh, fw) != self.frame_hw:
            raise ShapeError(
                f"motion: field head produced {fh}x{fw}, expected {self.frame_hw}; "
                "feature stride must be 8"
            )
        return MotionEstimate(transform=transform, field=field, f_gm=f_gm, f_lm=f_lm)

    def __call__(self, f_prev, f_cur, m0):
        return self.estimate(f_prev, f_cur, m0)


def transform_coords(transform: Tensor, field: Tensor, m3: Tensor) -> Tensor:
    """Per-pixel source coordinates: T applied to (X + M3 (x) D).

    Returns an (N, H, W, 3) homogeneous grid; with an affine ``transform``
    the third component stays exactly 1.
    """
    n, h, w, _ = field.shape
    disp = field * dc.reshape(m3, (n, h, w, 1))
    zeros = Tensor(np.zeros((n, h, w, 1), dtype=field.dtype.type))
    disp3 = dc.concat([disp, zeros], axis=3)
    base = Tensor(identity_grid(h, w, dtype=field.dtype.type))
    pts = dc.reshape(base + disp3, (n, h * w, 3))
    out = dc.matmul(pts, dc.transpose(transform, (0, 2, 1)))
    return dc.reshape(out, (n, h, w, 3))


def bilinear_sample(image: Tensor, grid: Tensor) -> Tensor:
    """Sample ``image`` (N, H, W, C) at homogeneous grid positions (N, H, W, 3).

    Out-of-range coordinates clamp to the border; fully differentiable in
    both the image and the grid.
    """
    return dc.grid_sample(image, grid[..., :2] if grid.shape[-1] == 3 else grid)


def reconstruction_loss(target: Tensor, rebuilt: Tensor) -> Tensor:
    """Photometric L1, summed over channels and averaged per pixel and batch."""
    if target.shape != rebuilt.shape:
        raise ShapeError(f"reconstruction: shapes differ, {target.shape} vs {rebuilt.shape}")
    n, h, w = target.shape[:3]
    return dc.sum_(dc.abs_(target - rebuilt)) * (1.0 / (n * h * w))


def smoothness_loss(field: Tensor, m3: Tensor) -> Tensor:
    """Mean absolute spatial difference of the masked field, both axes."""
    n, h, w, _ = field.shape
    masked = field * dc.reshape(m3, (n, h, w, 1))
    dx = masked[:, :, 1:] - masked[:, :, :-1]
    dy = masked[:, 1:] - masked[:, :-1]
    return dc.mean(dc.abs_(dx)) + dc.mean(dc.abs_(dy))


def warp_previous(prev_frame: Tensor, est: MotionEstimate, m3: Tensor) -> Tensor:
    """Reconstruct the current frame from the previous one."""
    grid = transform_coords(est.transform, est.field, m3)
    return bilinear_sample(prev_frame, grid)
