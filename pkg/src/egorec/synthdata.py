"""Synthetic two-actor clips with ground-truth masks and motion.

Each clip renders a moving crop of a smooth textured background (the camera
pan) with a textured ellipse sprite composited on top (the interactor).
Both actors move horizontally inside a motion window of the clip. Labels:

  standard (4 classes)
    0: camera right, sprite right (simultaneous)
    1: camera right, sprite left
    2: camera left, sprite right
    3: sprite moves first, camera moves afterwards (random directions)

  relation-only (2 classes)
    0: same direction, 1: opposite direction; the camera direction is
    sampled uniformly per clip, so neither stream's direction alone
    carries any class information.

Ground truth per raw frame pair: the 6 affine parameters of the global
transform (normalized [-1, 1] coordinates, mapping current-frame points to
previous-frame points) and the sprite's world displacement.

On-disk format: ``manifest.txt`` with ``K=``, ``variant=``, ``seed=``
headers and ``clip_dir<TAB>label<TAB>split`` lines; each clip directory
holds ``frame_%04d.ppm``, ``mask_%04d.pgm`` and ``gt.txt`` (one line of
8 floats per pair).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .imageio import read_pgm, read_ppm, write_pgm, write_ppm

VARIANT_CLASSES = {"standard": 4, "relation-only": 2}


# ---------------------------------------------------------------------------
# plain-numpy resampling helpers (generation is not differentiated)


def resize_bilinear_np(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Align-corners bilinear resize of (H, W, ...) arrays."""
    h, w = img.shape[:2]
    ys = np.linspace(0, h - 1, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, ow) if ow > 1 else np.zeros(1)
    return sample_bilinear_np(img, ys[:, None] + np.zeros(ow), xs[None, :] + np.zeros((oh, 1)))


def sample_bilinear_np(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Gather img at fractional (ys, xs), border-clamped; broadcasts over trailing dims."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(ys.astype(np.int64), max(h - 2, 0))
    x0 = np.minimum(xs.astype(np.int64), max(w - 2, 0))
    fy = (ys - y0)[..., None] if img.ndim == 3 else (ys - y0)
    fx = (xs - x0)[..., None] if img.ndim == 3 else (xs - x0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    return (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )


def _smooth_noise(rng, h, w, octave, lo, hi):
    base = rng.uniform(lo, hi, size=(max(2, h // octave), max(2, w // octave), 3))
    return resize_bilinear_np(base, h, w)


# ---------------------------------------------------------------------------
# scenes and clips


@dataclass
class SyntheticScene:
    height: int
    width: int
    length: int
    class_id: int
    variant: str
    seed: int
    background: np.ndarray      # (Hb, Wb, 3)
    sprite_tex: np.ndarray      # sprite texture patch
    sprite_axes: tuple[float, float]   # (ay, ax) ellipse semi-axes, px
    cam_path: np.ndarray        # (L, 2) crop origins (oy, ox), px, float
    sprite_path: np.ndarray     # (L, 2) sprite centers in background coords


@dataclass
class VideoClip:
    frames: np.ndarray       # (L, H, W, 3) float32 in [0, 1]
    ref_masks: np.ndarray    # (L, H, W) float32 in [0, 1]
    label: int
    gt_global: np.ndarray    # (L-1, 6) affine rows [a11 a12 tx a21 a22 ty]
    gt_local: np.ndarray     # (L-1, 2) sprite displacement (dx, dy), normalized

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class ClipRef:
    directory: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: Path
    num_classes: int
    variant: str
    seed: int
    entries: list[ClipRef] = field(default_factory=list)

    def split(self, name: str) -> list[ClipRef]:
        out = [e for e in self.entries if e.split == name]
        if not out:
            raise ValueError(f"split {name!r} absent from {self.root}")
        return out


@dataclass
class GenConfig:
    height: int = 32
    width: int = 64
    length: int = 40
    area_range: tuple[float, float] = (0.10, 0.25)   # sprite area / frame area
    cam_span: tuple[float, float] = (0.06, 0.10)     # camera pan / width
    rel_span: tuple[float, float] = (0.07, 0.13)     # in-frame sprite travel / width


def make_scene(class_id: int, variant: str, seed: int,
               config: GenConfig | None = None) -> SyntheticScene:
    """Build trajectories and textures; raises if a trajectory leaves bounds."""
    cfg = config or GenConfig()
    if variant not in VARIANT_CLASSES:
        raise ValueError(f"unknown variant {variant!r}")
    if not 0 <= class_id < VARIANT_CLASSES[variant]:
        raise ValueError(f"class {class_id} out of range for {variant}")
    rng = np.random.default_rng(seed)
    h, w, length = cfg.height, cfg.width, cfg.length

    margin = int(np.ceil(cfg.cam_span[1] * w)) + 2
    bh, bw = h + 2 * margin, w + 2 * margin
    # a smooth wave at three times the feature stride dominates the
    # background: feature-level correlations then pick up camera shifts
    # in quadrature instead of drowning in texture sampling noise
    yy, xx = np.mgrid[0:bh, 0:bw].astype(np.float64)
    theta = rng.uniform(-0.1, 0.1)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / 24.0
                  + rng.uniform(0, 2 * np.pi))
    bg = np.clip(
        0.5 + 0.22 * wave[..., None] * np.array([1.0, 0.9, 0.8])
        + _smooth_noise(rng, bh, bw, 8, -0.08, 0.08),
        0.02, 0.95,
    )

    area = rng.uniform(*cfg.area_range) * h * w
    aspect = rng.uniform(0.8, 1.4)
    ax = float(np.sqrt(area / (np.pi * aspect)))
    ay = float(aspect * ax)
    ay = min(ay, (h - 6) / 2.0)
    ax = min(ax, (w - 6) / 2.0)
    ty, tx = int(2 * np.ceil(ay)) + 3, int(2 * np.ceil(ax)) + 3
    tint = np.array([rng.uniform(0.75, 0.95), rng.uniform(0.45, 0.7), rng.uniform(0.15, 0.35)])
    # oriented stripes ride along with the sprite and make its motion
    # legible to feature-level correlation
    yy, xx = np.mgrid[0:ty, 0:tx].astype(np.float64)
    theta = rng.uniform(-0.4, 0.4)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / 12.0
                  + rng.uniform(0, 2 * np.pi))
    tex = np.clip(tint + 0.16 * wave[..., None]
                  + _smooth_noise(rng, ty, tx, 3, -0.08, 0.08), 0.05, 1.0)

    window = max(2, length // 4)
    cam_dir, spr_dir, cam_win, spr_win = _pick_motion(rng, class_id, variant, length, window)

    # class direction semantics live in the sprite's in-frame drift: its
    # magnitude is sampled independently of the class (so no stream can
    # read the label from motion energy) and the world velocity follows as
    # drift + camera pan
    cam_step = rng.uniform(*cfg.cam_span) * w / window
    cam_dx = _window_steps(length, cam_win, window, cam_dir * cam_step)
    rel_step = rng.uniform(*cfg.rel_span) * w / window
    spr_dx = _window_steps(length, spr_win, window, spr_dir * rel_step) + cam_dx

    cam_x = margin - cam_dx.sum() / 2.0 + np.concatenate([[0.0], np.cumsum(cam_dx)])
    cam_path = np.stack([np.full(length, float(margin)), cam_x], axis=1)
    if cam_x.min() < 0 or cam_x.max() > 2 * margin:
        raise ValueError("camera trajectory leaves the background")

    # sprite frame-x track before choosing the start position
    rel = np.concatenate([[0.0], np.cumsum(spr_dx - cam_dx)])
    lo = 2.0 + ax - rel.min()
    hi = w - 2.0 - ax - rel.max()
    if lo > hi:
        raise ValueError("no sprite start position keeps it inside the frame")
    px0 = rng.uniform(lo, hi)
    py = rng.uniform(2.0 + ay, h - 2.0 - ay)
    sprite_frame_x = px0 + rel
    sprite_path = np.stack([cam_path[:, 0] + py, cam_path[:, 1] + sprite_frame_x], axis=1)

    return SyntheticScene(height=h, width=w, length=length, class_id=class_id,
                          variant=variant, seed=seed, background=bg, sprite_tex=tex,
                          sprite_axes=(ay, ax), cam_path=cam_path, sprite_path=sprite_path)


def _pick_motion(rng, class_id, variant, length, window):
    """Directions and window starts for (camera, sprite)."""
    if length - window < length // 2 + 1:
        raise ValueError(f"clip length {length} too short for motion window {window}")
    if variant == "relation-only":
        cam = 1 if rng.random() < 0.5 else -1
        spr = cam if class_id == 0 else -cam
        start = int(rng.integers(0, length - window))
        return cam, spr, start, start
    if class_id == 3:
        # order class: the sprite window ends before the camera window starts
        spr_start = int(rng.integers(0, max(1, length // 2 - window + 1)))
        cam_start = int(rng.integers(length // 2, length - window))
        cam = 1 if rng.random() < 0.5 else -1
        spr = 1 if rng.random() < 0.5 else -1
        return cam, spr, cam_start, spr_start
    cam, spr = [(1, 1), (1, -1), (-1, 1)][class_id]
    start = int(rng.integers(0, length - window))
    return cam, spr, start, start


def _window_steps(length, start, window, step):
    dx = np.zeros(length - 1)
    dx[start:start + window] = step
    return dx


def generate_clip(scene: SyntheticScene) -> VideoClip:
    """Render frames, masks, and per-pair ground truth for a scene."""
    h, w, length = scene.height, scene.width, scene.length
    ay, ax = scene.sprite_axes
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    frames = np.empty((length, h, w, 3), np.float32)
    masks = np.empty((length, h, w), np.float32)

    for t in range(length):
        oy, ox = scene.cam_path[t]
        crop = sample_bilinear_np(scene.background,
                                  (oy + ys)[:, None] + np.zeros(w),
                                  (ox + xs)[None, :] + np.zeros((h, 1)))
        py = scene.sprite_path[t, 0] - oy
        px = scene.sprite_path[t, 1] - ox
        dy = (ys[:, None] - py) / ay
        dx = (xs[None, :] - px) / ax
        alpha = ((dy * dy + dx * dx) <= 1.0).astype(np.float64)
        tex = sample_bilinear_np(scene.sprite_tex,
                                 (ys - py)[:, None] + ay + 1.0 + np.zeros(w),
                                 (xs - px)[None, :] + ax + 1.0 + np.zeros((h, 1)))
        out = crop * (1.0 - alpha[..., None]) + tex * alpha[..., None]
        frames[t] = np.round(out * 255.0) / np.float32(255.0)
        masks[t] = alpha

    d_cam = np.diff(scene.cam_path, axis=0)       # (L-1, 2) as (dy, dx)
    d_spr = np.diff(scene.sprite_path, axis=0)
    gt_global = np.zeros((length - 1, 6))
    gt_global[:, 0] = 1.0
    gt_global[:, 4] = 1.0
    gt_global[:, 2] = 2.0 * d_cam[:, 1] / (w - 1)
    gt_global[:, 5] = 2.0 * d_cam[:, 0] / (h - 1)
    gt_local = np.stack([2.0 * d_spr[:, 1] / (w - 1), 2.0 * d_spr[:, 0] / (h - 1)], axis=1)
    return VideoClip(frames=frames, ref_masks=masks, label=scene.class_id,
                     gt_global=gt_global, gt_local=gt_local)


# ---------------------------------------------------------------------------
# frame sampling and augmentation


def sample_frames(clip: VideoClip, n: int, jitter: bool = False,
                  rng: np.random.Generator | None = None) -> VideoClip:
    """Pick ``n`` frames, one per equal segment of the clip.

    Without jitter each segment contributes its first index; with jitter a
    uniform index from the segment. Short clips repeat indices.
    """
    if n < 2:
        raise ValueError(f"need at least 2 sampled frames, got {n}")
    length = clip.length
    starts = (np.arange(n) * length) // n
    if jitter:
        if rng is None:
            raise ValueError("jitter sampling needs an rng")
        ends = np.maximum(((np.arange(n) + 1) * length) // n, starts + 1)
        idx = np.array([rng.integers(s, e) for s, e in zip(starts, ends)])
        idx = np.minimum(idx, length - 1)
    else:
        idx = starts
    return VideoClip(
        frames=clip.frames[idx],
        ref_masks=clip.ref_masks[idx],
        label=clip.label,
        gt_global=_resample_global(clip.gt_global, idx),
        gt_local=_resample_local(clip.gt_local, idx),
    )


def _to_mat(row):
    return np.array([[row[0], row[1], row[2]], [row[3], row[4], row[5]], [0, 0, 1.0]])


def _resample_global(gt: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.zeros((len(idx) - 1, 6))
    for k in range(len(idx) - 1):
        m = np.eye(3)
        for t in range(idx[k], idx[k + 1]):
            m = _to_mat(gt[t]) @ m
        out[k] = m[:2].reshape(-1)
    return out


def _resample_local(gt: np.ndarray, idx: np.ndarray) -> np.ndarray:
    cum = np.concatenate([np.zeros((1, 2)), np.cumsum(gt, axis=0)])
    return cum[idx[1:]] - cum[idx[:-1]]


@dataclass
class AugmentConfig:
    p_flip: float = 0.5
    p_hsv: float = 0.5
    p_crop: float = 0.5
    crop_scale: tuple[float, float] = (0.75, 1.0)
    hue_delta: float = 0.06
    sat_range: tuple[float, float] = (0.7, 1.3)


def augment(clip: VideoClip, rng: np.random.Generator,
            config: AugmentConfig | None = None) -> VideoClip:
    """Apply flip / HSV jitter / crop-resize consistently to frames, masks, gt."""
    cfg = config or AugmentConfig()
    out = clip
    if rng.random() < cfg.p_flip:
        out = flip_horizontal(out)
    if rng.random() < cfg.p_crop:
        scale = rng.uniform(*cfg.crop_scale)
        out = crop_resize(out, scale, rng)
    if rng.random() < cfg.p_hsv:
        out = hsv_jitter(out, rng.uniform(-cfg.hue_delta, cfg.hue_delta),
                         rng.uniform(*cfg.sat_range))
    return out


def flip_horizontal(clip: VideoClip) -> VideoClip:
    gt_g = clip.gt_global.copy()
    gt_g[:, 1] *= -1.0   # a12
    gt_g[:, 2] *= -1.0   # tx
    gt_g[:, 3] *= -1.0   # a21
    gt_l = clip.gt_local.copy()
    gt_l[:, 0] *= -1.0
    return VideoClip(frames=clip.frames[:, :, ::-1].copy(),
                     ref_masks=clip.ref_masks[:, :, ::-1].copy(),
                     label=clip.label, gt_global=gt_g, gt_local=gt_l)


def crop_resize(clip: VideoClip, scale: float, rng: np.random.Generator) -> VideoClip:
    length, h, w = clip.frames.shape[:3]
    ch, cw = int(round(scale * h)), int(round(scale * w))
    if ch > h or cw > w or ch < 4 or cw < 8:
        raise ValueError(f"bad crop {ch}x{cw} for frame {h}x{w}")
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    frames = np.empty_like(clip.frames)
    masks = np.empty_like(clip.ref_masks)
    for t in range(length):
        sub = clip.frames[t, y0:y0 + ch, x0:x0 + cw]
        frames[t] = resize_bilinear_np(sub, h, w)
        msub = clip.ref_masks[t, y0:y0 + ch, x0:x0 + cw]
        masks[t] = resize_bilinear_np(msub[..., None], h, w)[..., 0]
    # normalized translations grow when the field of view shrinks
    fx = (w - 1) / max(cw - 1, 1)
    fy = (h - 1) / max(ch - 1, 1)
    gt_g = clip.gt_global.copy()
    gt_g[:, 2] *= fx
    gt_g[:, 5] *= fy
    gt_l = clip.gt_local.copy()
    gt_l[:, 0] *= fx
    gt_l[:, 1] *= fy
    return VideoClip(frames=frames, ref_masks=masks, label=clip.label,
                     gt_global=gt_g, gt_local=gt_l)


def hsv_jitter(clip: VideoClip, hue_shift: float, sat_factor: float) -> VideoClip:
    hsv = rgb_to_hsv(clip.frames)
    hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * sat_factor, 0.0, 1.0)
    return VideoClip(frames=hsv_to_rgb(hsv).astype(np.float32),
                     ref_masks=clip.ref_masks, label=clip.label,
                     gt_global=clip.gt_global, gt_local=clip.gt_local)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    safe = np.where(diff > 0, diff, 1.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    h = np.zeros_like(mx)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, h)
    h = np.where(mx == g, (b - r) / safe + 2.0, h)
    h = np.where(mx == b, (r - g) / safe + 4.0, h)
    h = np.where(diff > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    out = np.zeros(hsv.shape)
    for k, (rr, gg, bb) in enumerate(((v, t, p), (q, v, p), (p, v, t),
                                      (p, q, v), (t, p, v), (v, p, q))):
        m = i == k
        out[..., 0] = np.where(m, rr, out[..., 0])
        out[..., 1] = np.where(m, gg, out[..., 1])
        out[..., 2] = np.where(m, bb, out[..., 2])
    return out


# ---------------------------------------------------------------------------
# dataset on disk


def generate_dataset(out_dir, clips_per_class: int, variant: str, seed: int,
                     num_classes: int | None = None, train_fraction: float = 2 / 3,
                     config: GenConfig | None = None) -> DatasetManifest:
    """Write a labeled clip dataset under ``out_dir`` and return its manifest.

    ``clips_per_class`` counts all clips of one class; the first
    ``train_fraction`` of them land in the train split, the rest in test.
    """
    k = VARIANT_CLASSES[variant]
    if num_classes is not None and num_classes != k:
        raise ValueError(f"variant {variant!r} defines {k} classes, not {num_classes}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(root=root, num_classes=k, variant=variant, seed=seed)
    n_train = int(round(train_fraction * clips_per_class))
    for label in range(k):
        for j in range(clips_per_class):
            clip_seed = seed * 1_000_003 + label * 10_007 + j
            scene = make_scene(label, variant, clip_seed, config)
            clip = generate_clip(scene)
            split = "train" if j < n_train else "test"
            name = f"clip_{label}_{j:04d}"
            write_clip(root / name, clip)
            manifest.entries.append(ClipRef(directory=name, label=label, split=split))
    write_manifest(manifest)
    return manifest


def write_clip(clip_dir, clip: VideoClip) -> None:
    d = Path(clip_dir)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(clip.length):
        write_ppm(d / f"frame_{t:04d}.ppm", clip.frames[t])
        write_pgm(d / f"mask_{t:04d}.pgm", clip.ref_masks[t])
    with open(d / "gt.txt", "w", encoding="utf-8") as f:
        for g, l in zip(clip.gt_global, clip.gt_local):
            f.write(" ".join(f"{v:.17g}" for v in np.concatenate([g, l])) + "\n")


def load_clip(clip_dir, label: int) -> VideoClip:
    d = Path(clip_dir)
    frame_files = sorted(p for p in os.listdir(d) if p.startswith("frame_"))
    if not frame_files:
        raise FileNotFoundError(f"no frames in {d}")
    frames = np.stack([read_ppm(d / p) for p in frame_files])
    masks = np.stack([read_pgm(d / p.replace("frame_", "mask_").replace(".ppm", ".pgm"))
                      for p in frame_files])
    rows = []
    with open(d / "gt.txt", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append([float(v) for v in line.split()])
    gt = np.asarray(rows, dtype=np.float64).reshape(-1, 8)
    return VideoClip(frames=frames, ref_masks=masks, label=label,
                     gt_global=gt[:, :6], gt_local=gt[:, 6:])


def write_manifest(manifest: DatasetManifest) -> None:
    path = manifest.root / "manifest.txt"
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"K={manifest.num_classes}\n")
        f.write(f"variant={manifest.variant}\n")
        f.write(f"seed={manifest.seed}\n")
        for e in manifest.entries:
            f.write(f"{e.directory}\t{e.label}\t{e.split}\n")


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.txt"
    header: dict[str, str] = {}
    entries: list[ClipRef] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" in line:
                directory, label, split = line.split("\t")
                if split not in ("train", "test"):
                    raise ValueError(f"bad split {split!r} in {path}")
                entries.append(ClipRef(directory=directory, label=int(label), split=split))
            else:
                key, _, value = line.partition("=")
                header[key] = value
    k = int(header["K"])
    for e in entries:
        if not 0 <= e.label < k:
            raise ValueError(f"label {e.label} out of range for K={k}")
    return DatasetManifest(root=root, num_classes=k, variant=header["variant"],
                           seed=int(header["seed"]), entries=entries)


def load_split(manifest: DatasetManifest, split: str) -> list[VideoClip]:
    return [load_clip(manifest.root / e.directory, e.label) for e in manifest.split(split)]
