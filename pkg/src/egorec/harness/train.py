"""Two-stage training schedule, evaluation, and checkpoint round trips.

Stage 1 runs three sub-phases on disjoint parameter groups: the mask
decoder against the segmentation loss, then the motion module against
reconstruction + smoothness, then the recurrent classifier against cross
entropy. Stage 2 fine-tunes everything against the weighted sum of all
four losses. The learning rate halves when the smoothed phase loss stops
improving by 1% over ``plateau_patience`` epochs; stage 2 optionally early
stops on held-out accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import Tape, backward
from ..synthdata import (
    AugmentConfig,
    DatasetManifest,
    VideoClip,
    augment,
    load_split,
    sample_frames,
)
from .checkpoint import load_checkpoint, save_checkpoint, split_optimizer
from .config import TrainConfig, parse_config
from .losses import LossBundle, total_loss
from .model import InteractionModel
from .optim import Adam

PHASES = ("1a", "1b", "1c", "2")


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray
    count: int
    mean_loss: float | None = None


@dataclass
class TrainState:
    model: InteractionModel
    optimizer: Adam | None
    stage: str
    history: list[LossBundle] = field(default_factory=list)


def _batch_arrays(clips: list[VideoClip], config: TrainConfig,
                  rng: np.random.Generator | None, train_mode: bool):
    """Sample and (in train mode) augment clips, stacked to batch arrays."""
    aug_cfg = AugmentConfig(p_flip=config.aug_flip, p_hsv=config.aug_hsv,
                            p_crop=config.aug_crop)
    frames, masks, labels = [], [], []
    for clip in clips:
        jitter = bool(train_mode and config.jitter and rng is not None)
        sampled = sample_frames(clip, config.num_frames, jitter=jitter, rng=rng)
        if train_mode and config.augment and rng is not None:
            sampled = augment(sampled, rng, aug_cfg)
        frames.append(sampled.frames)
        masks.append(sampled.ref_masks)
        labels.append(sampled.label)
    return (np.stack(frames).astype(np.float32),
            np.stack(masks).astype(np.float32),
            np.asarray(labels, dtype=np.int64))


def _phase_spec(phase: str, model: InteractionModel, config: TrainConfig):
    """(trainable named params, needs, loss picker, epochs) for one phase."""
    if phase == "1a":
        def pick(res):
            return res.l_seg, LossBundle(l_seg=res.l_seg.item(),
                                         l_final=config.alpha * res.l_seg.item())
        return model.group("attention"), dict(need_seg=True), pick, config.epochs_attention
    if phase == "1b":
        def pick(res):
            loss = res.l_rec + res.l_smooth * config.gamma
            return loss, LossBundle(l_rec=res.l_rec.item(), l_smooth=res.l_smooth.item(),
                                    l_final=loss.item())
        return model.group("motion"), dict(need_rec=True), pick, config.epochs_motion
    if phase == "1c":
        def pick(res):
            return res.l_cls, LossBundle(l_cls=res.l_cls.item(), l_final=res.l_cls.item())
        return model.group("interact"), dict(need_cls=True), pick, config.epochs_interaction
    if phase == "2":
        def pick(res):
            return total_loss(config, res.l_cls, res.l_seg, res.l_rec, res.l_smooth)
        return (model.all_named(), dict(need_seg=True, need_rec=True, need_cls=True),
                pick, config.epochs_joint)
    raise ValueError(f"unknown phase {phase!r}")


def _phase_optimizers(phase: str, named, config: TrainConfig):
    """Motion fitting uses fast weight-decayed heads over slow conv trunks;
    the decay damps drift along photometrically unconstrained directions."""
    if phase in ("1b", "2"):
        heads = [(n, p) for n, p in named
                 if "affine_head" in n or "field_up2" in n]
        rest = [(n, p) for n, p in named if (n, p) not in heads]
        return [
            Adam(heads, lr=config.lr * 2.5, beta1=config.beta1, beta2=config.beta2,
                 weight_decay=max(config.weight_decay, 0.05)),
            Adam(rest, lr=config.lr * (0.1 if phase == "1b" else 1.0),
                 beta1=config.beta1, beta2=config.beta2,
                 weight_decay=config.weight_decay),
        ]
    return [Adam(named, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                 weight_decay=config.weight_decay)]


class _OptGroup:
    """A list of Adam groups acting as one optimizer."""

    def __init__(self, opts):
        self.opts = opts

    def zero_grad(self):
        for o in self.opts:
            o.zero_grad()

    def step(self):
        for o in self.opts:
            o.step()

    def scale_lr(self, factor):
        for o in self.opts:
            o.lr *= factor

    def state_arrays(self):
        out = {}
        for i, o in enumerate(self.opts):
            for k, v in o.state_arrays().items():
                out[k if len(self.opts) == 1 else f"{k}#g{i}"] = v
        return out


def run_phase(model: InteractionModel, phase: str, clips: list[VideoClip],
              config: TrainConfig, rng: np.random.Generator,
              eval_clips: list[VideoClip] | None = None,
              log=None) -> _OptGroup:
    named, needs, pick, epochs = _phase_spec(phase, model, config)
    params = [p for _, p in named]
    opt = _OptGroup(_phase_optimizers(phase, named, config))
    smoothed = None
    best_smoothed = np.inf
    since_improve = 0
    best_acc = -1.0
    since_acc = 0
    best_params = None

    for epoch in range(epochs):
        order = rng.permutation(len(clips))
        epoch_loss = 0.0
        nb = 0
        for start in range(0, len(order), config.batch_size):
            batch = [clips[i] for i in order[start:start + config.batch_size]]
            frames, masks, labels = _batch_arrays(batch, config, rng, train_mode=True)
            with Tape() as tape:
                res = model.forward(frames, masks, labels, rng=rng, **needs)
                loss, bundle = pick(res)
            opt.zero_grad()
            backward(tape, loss, params=params)
            opt.step()
            epoch_loss += bundle.l_final
            nb += 1
        epoch_loss /= max(nb, 1)
        smoothed = epoch_loss if smoothed is None else 0.6 * smoothed + 0.4 * epoch_loss
        if log:
            log(f"phase {phase} epoch {epoch + 1}/{epochs} loss {epoch_loss:.5f} "
                f"(smoothed {smoothed:.5f})")
        if smoothed < best_smoothed * 0.99:
            best_smoothed = smoothed
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= config.plateau_patience:
                opt.scale_lr(0.5)
                since_improve = 0
        if phase == "2" and config.patience > 0 and eval_clips:
            acc = evaluate_clips(model, eval_clips, config).accuracy
            if acc > best_acc:
                best_acc = acc
                since_acc = 0
                best_params = {n: p.data.copy() for n, p in model.all_named()}
            else:
                since_acc += 1
                if since_acc >= config.patience:
                    break
    if best_params is not None:
        for n, p in model.all_named():
            p.data = best_params[n]
    return opt


def train(manifest: DatasetManifest, config: TrainConfig, stage: str,
          ckpt_path, log=None) -> TrainState:
    """Run the requested stage(s) and write a checkpoint after each phase."""
    if stage not in ("1", "2", "all"):
        raise ValueError(f"stage must be 1, 2 or all, got {stage!r}")
    if manifest.num_classes != config.num_classes:
        raise ValueError(f"dataset has K={manifest.num_classes}, "
                         f"config expects {config.num_classes}")
    clips = load_split(manifest, "train")
    try:
        eval_clips = load_split(manifest, "test")
    except ValueError:
        eval_clips = None
    rng = np.random.default_rng(config.seed)
    model = InteractionModel(config, rng)
    ckpt_path = Path(ckpt_path)

    if stage == "2":
        if not ckpt_path.exists():
            raise FileNotFoundError(
                f"stage 2 needs the stage-1 checkpoint at {ckpt_path}")
        table, cfg_text, marker = load_checkpoint(ckpt_path)
        if marker not in ("1a", "1b", "1c", "2"):
            raise ValueError(f"unexpected stage marker {marker!r} in {ckpt_path}")
        params, _ = split_optimizer(table)
        _load_model(model, params)
        phases = ["2"]
    elif stage == "1":
        phases = ["1a", "1b", "1c"]
    else:
        phases = ["1a", "1b", "1c", "2"]

    opt = None
    for phase in phases:
        opt = run_phase(model, phase, clips, config, rng,
                        eval_clips=eval_clips, log=log)
        tensors = {n: p.data for n, p in model.all_named()}
        tensors.update(opt.state_arrays())
        save_checkpoint(ckpt_path, tensors, config.to_text(), phase)
    return TrainState(model=model, optimizer=opt, stage=phases[-1])


def _load_model(model: InteractionModel, params: dict[str, np.ndarray]) -> None:
    own = dict(model.all_named())
    missing = set(own) - set(params)
    if missing:
        raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
    for name, p in own.items():
        arr = params[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
        p.data = arr.astype(p.data.dtype)


def load_model(ckpt_path) -> tuple[InteractionModel, TrainConfig, str]:
    table, cfg_text, stage = load_checkpoint(ckpt_path)
    config = parse_config(cfg_text)
    model = InteractionModel(config, np.random.default_rng(config.seed))
    params, _ = split_optimizer(table)
    _load_model(model, params)
    return model, config, stage


def evaluate_clips(model: InteractionModel, clips: list[VideoClip],
                   config: TrainConfig, batch_size: int = 16) -> MetricsReport:
    """Deterministic evaluation: base frame sampling, no augmentation."""
    k = config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, len(clips), batch_size):
        batch = clips[start:start + batch_size]
        frames, masks, labels = _batch_arrays(batch, config, rng=None, train_mode=False)
        res = model.forward(frames, masks, labels, rng=None, need_cls=True)
        pred = np.argmax(res.probs.numpy(), axis=1)
        loss_sum += res.l_cls.item() * len(batch)
        for t, p in zip(labels, pred):
            confusion[t, p] += 1
    correct = np.trace(confusion)
    total = confusion.sum()
    return MetricsReport(accuracy=float(correct) / max(int(total), 1),
                         confusion=confusion, count=int(total),
                         mean_loss=loss_sum / max(len(clips), 1))


def evaluate(manifest: DatasetManifest, ckpt_path, split: str) -> MetricsReport:
    model, config, _ = load_model(ckpt_path)
    clips = load_split(manifest, split)
    return evaluate_clips(model, clips, config)
