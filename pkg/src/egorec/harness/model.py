"""Full pipeline assembly: frames in, losses and class probabilities out.

One forward pass consumes a batch of sampled clips. Frames run through the
backbone and mask decoder as one flat batch; consecutive-frame pairs run
through the motion estimator as another flat batch; the per-step stream
features then drive the recurrent classifier. ``needs`` flags skip whole
branches so the staged training phases only pay for what they use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..attention import MaskDecoder, global_pool, segmentation_loss, weighted_pool
from ..backbone import BackboneConfig, ConvBackbone
from ..diffcore import Tensor
from ..interact import InteractiveClassifier, classification_loss
from ..motion import MotionEstimator, reconstruction_loss, smoothness_loss, warp_previous
from ..nn import Module
from .config import TrainConfig


@dataclass
class ForwardResult:
    probs: Tensor | None = None
    l_cls: Tensor | None = None
    l_seg: Tensor | None = None
    l_rec: Tensor | None = None
    l_smooth: Tensor | None = None
    masks_m3: Tensor | None = None
    recon: Tensor | None = None
    motion_est: object = None


class InteractionModel(Module):
    def __init__(self, config: TrainConfig, rng: np.random.Generator,
                 variant: str = "full", features: str = "both"):
        self.config = config
        bb = BackboneConfig(config.frame_height, config.frame_width,
                            stride=8, channels_out=config.channels)
        self.backbone = ConvBackbone(bb, rng)
        self.attention = MaskDecoder(config.channels, rng)
        self.motion = MotionEstimator(config.channels,
                                      (config.frame_height, config.frame_width),
                                      rng, max_displacement=config.max_displacement,
                                      embed_dim=config.motion_dim)
        self.interact = InteractiveClassifier(
            appear_dim=config.channels, motion_dim=config.motion_dim,
            num_classes=config.num_classes, rng=rng, proj_dim=config.proj_dim,
            hidden=config.hidden_dim, variant=variant, features=features,
            dropout_ratio=config.dropout, motion_dim_ego=self.motion.global_dim)

    # parameter groups for the staged schedule
    def group(self, name: str):
        mod = {"backbone": self.backbone, "attention": self.attention,
               "motion": self.motion, "interact": self.interact}[name]
        return [(f"{name}.{n}", p) for n, p in mod.named_parameters()]

    def all_named(self):
        return (self.group("backbone") + self.group("attention")
                + self.group("motion") + self.group("interact"))

    def forward(self, frames: np.ndarray, ref_masks: np.ndarray | None,
                labels: np.ndarray | None, rng: np.random.Generator | None = None,
                need_seg: bool = False, need_rec: bool = False,
                need_cls: bool = False, keep_outputs: bool = False) -> ForwardResult:
        """Run the pipeline on (B, N, H, W, 3) sampled frames in [0, 1]."""
        b, n, h, w, _ = frames.shape
        s = n - 1
        res = ForwardResult()

        flat = Tensor(frames.reshape(b * n, h, w, 3))
        feats = self.backbone.extract(flat)
        h0, w0, c = feats.shape[1:]
        masks = self.attention.predict_masks(feats)

        if need_seg:
            res.l_seg = segmentation_loss(masks, ref_masks.reshape(b * n, h, w),
                                          include_coarsest=bool(self.config.seg_coarse))

        need_motion = need_rec or need_cls
        if not need_motion:
            return res

        def pairs(x, take_prev):
            full = dc.reshape(x, (b, n) + x.shape[1:])
            sl = full[:, :-1] if take_prev else full[:, 1:]
            return dc.reshape(sl, (b * s,) + x.shape[1:])

        f_prev = pairs(feats, True)
        f_cur = pairs(feats, False)
        m0_cur = pairs(masks.m0, False)
        m3_cur = pairs(masks.m3, False)
        est = self.motion.estimate(f_prev, f_cur, m0_cur)

        if need_rec:
            prev_img = Tensor(frames[:, :-1].reshape(b * s, h, w, 3))
            cur_img = Tensor(frames[:, 1:].reshape(b * s, h, w, 3))
            recon = warp_previous(prev_img, est, m3_cur)
            res.l_rec = reconstruction_loss(cur_img, recon)
            res.l_smooth = smoothness_loss(est.field, m3_cur)
            if keep_outputs:
                res.recon = recon

        if need_cls:
            f_la = weighted_pool(feats, masks.m0)
            f_ga = global_pool(feats)
            cur = lambda x: dc.reshape(pairs(x, False), (b, s, x.shape[-1]))
            f_ga_seq = cur(f_ga)
            f_la_seq = cur(f_la)
            f_gm_seq = dc.reshape(est.f_gm, (b, s, est.f_gm.shape[-1]))
            f_lm_seq = dc.reshape(est.f_lm, (b, s, est.f_lm.shape[-1]))
            _, probs = self.interact.classify(f_ga_seq, f_gm_seq, f_la_seq, f_lm_seq, rng)
            res.probs = probs
            if labels is not None:
                res.l_cls = classification_loss(probs, labels)

        if keep_outputs:
            res.masks_m3 = masks.m3
            res.motion_est = est
        return res

    def stream_features(self, frames: np.ndarray):
        """Per-step raw stream features as numpy, for cached-feature training.

        Returns (f_ga, f_gm, f_la, f_lm), each (B, S, dim).
        """
        b, n, h, w, _ = frames.shape
        s = n - 1
        flat = Tensor(frames.reshape(b * n, h, w, 3))
        feats = self.backbone.extract(flat)
        masks = self.attention.predict_masks(feats)
        f_la = weighted_pool(feats, masks.m0)
        f_ga = global_pool(feats)

        def pairs(x, take_prev):
            full = dc.reshape(x, (b, n) + x.shape[1:])
            sl = full[:, :-1] if take_prev else full[:, 1:]
            return dc.reshape(sl, (b * s,) + x.shape[1:])

        est = self.motion.estimate(pairs(feats, True), pairs(feats, False),
                                   pairs(masks.m0, False))
        seq = lambda x: pairs(x, False).numpy().reshape(b, s, -1)
        return (seq(f_ga), est.f_gm.numpy().reshape(b, s, -1),
                seq(f_la), est.f_lm.numpy().reshape(b, s, -1))
