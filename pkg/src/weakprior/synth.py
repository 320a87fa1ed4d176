"""Seeded synthetic scenes standing in for real images and network activations.

Every class is a fixed (shape, color) pair drawn on a textured background
whose color usually follows one of the present classes, so tags correlate with
background appearance as they do in real photographs.
Activation stacks emulate a pretrained network: blurred foreground indicators
plus noise for the two deep layers, and class-specific bumps on a part of each
object for the CAM features. Randomness comes only from
``numpy.random.default_rng(seed)`` (PCG64), never from global state.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .crf import RegionPartition
from .losses import TagSet

SHAPES = ("disk", "square", "triangle", "diamond", "ring", "cross", "hbar", "vbar")
PALETTE = np.array(
    [
        (220, 50, 50),
        (50, 180, 60),
        (60, 80, 220),
        (230, 200, 40),
        (200, 60, 200),
        (40, 200, 200),
        (240, 140, 30),
        (140, 90, 40),
    ],
    dtype=np.float64,
)
# surroundings share the hue of their class: a desaturated, darker object color
CONTEXT_MIX = 0.5
CONTEXT = (1.0 - CONTEXT_MIX) * PALETTE + CONTEXT_MIX * 110.0
CONTEXT_PROB = 0.85
CONTEXT_AREA = (0.3, 0.6)
MAX_CLASSES = len(SHAPES)
CONV4_STRIDE = 2
CONV5_STRIDE = 4
REGION_BLOCK = 8


@dataclass(frozen=True)
class SynthConfig:
    height: int = 48
    width: int = 48
    max_objects: int = 3
    n_classes: int = 4

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("scenes must be at least 16x16")
        if not 1 <= self.n_classes <= MAX_CLASSES:
            raise ValueError(f"n_classes must lie in [1, {MAX_CLASSES}]")
        if not 1 <= self.max_objects <= self.n_classes:
            raise ValueError("max_objects must lie in [1, n_classes]")


@dataclass
class SynthScene:
    image: np.ndarray  # (3, H, W), integer values 0-255 stored as float64
    gt: np.ndarray  # (H, W) int64 labels, 0 = background
    tags: TagSet
    conv4: np.ndarray  # (8, H/2, W/2)
    conv5: np.ndarray  # (8, H/4, W/4)
    cam_features: np.ndarray  # (C + 2, H/4, W/4)
    cam_weights: np.ndarray  # (C, C + 2)
    regions: RegionPartition

    @property
    def n_labels(self):
        return self.tags.n_labels

    @property
    def shape(self):
        return self.gt.shape


def _shape_mask(kind, cy, cx, radius, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    if kind == "disk":
        return dy**2 + dx**2 <= radius**2
    if kind == "square":
        side = radius * 0.85
        return (np.abs(dy) <= side) & (np.abs(dx) <= side)
    if kind == "triangle":
        # apex up, base at cy + radius
        return (dy <= radius * 0.8) & (dy >= -radius) & (np.abs(dx) <= (dy + radius) * 0.6)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= radius * 1.1
    if kind == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= radius**2) & (d2 >= (0.45 * radius) ** 2)
    if kind == "cross":
        arm = radius * 0.35
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))
    if kind == "hbar":
        return (np.abs(dy) <= radius * 0.45) & (np.abs(dx) <= radius)
    if kind == "vbar":
        return (np.abs(dx) <= radius * 0.45) & (np.abs(dy) <= radius)
    raise ValueError(kind)


def _block_mean(a, stride):
    h, w = a.shape
    hh, ww = h // stride, w // stride
    return a[: hh * stride, : ww * stride].reshape(hh, stride, ww, stride).mean(axis=(1, 3))


def _place_objects(rng, cfg):
    h, w = cfg.height, cfg.width
    scale = min(h, w) / 48.0
    n_obj = int(rng.integers(1, cfg.max_objects + 1))
    classes = rng.choice(np.arange(1, cfg.n_classes + 1), size=n_obj, replace=False)
    occupied = np.zeros((h, w), dtype=bool)
    placed = []
    for c in classes:
        for _ in range(200):
            radius = rng.uniform(6.0, 11.0) * scale
            cy = rng.uniform(radius + 1, h - radius - 2)
            cx = rng.uniform(radius + 1, w - radius - 2)
            mask = _shape_mask(SHAPES[c - 1], cy, cx, radius, h, w)
            grown = gaussian_filter(mask.astype(float), 1.0) > 0.05
            if mask.any() and not (grown & occupied).any():
                occupied |= grown
                placed.append((int(c), cy, cx, radius, mask))
                break
    return placed


def synth_scene(seed, config=None):
    """Generate one deterministic scene for ``seed``."""
    cfg = SynthConfig() if config is None else config
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width
    C = cfg.n_classes

    placed = _place_objects(rng, cfg)
    gt = np.zeros((h, w), dtype=np.int64)
    for c, _, _, _, mask in placed:
        gt[mask] = c

    base = rng.uniform(90, 165) + rng.uniform(-15, 15, size=3)
    texture = gaussian_filter(rng.normal(size=(h, w)), 2.5)
    texture *= 28.0 / max(texture.std(), 1e-9)
    backdrop = np.broadcast_to(base[:, None, None], (3, h, w)).copy()
    if rng.random() < CONTEXT_PROB:
        # a smooth blob of the host class's surroundings covering part of the frame
        host = placed[int(rng.integers(len(placed)))][0]
        field = gaussian_filter(rng.normal(size=(h, w)), min(h, w) / 6.0)
        area = rng.uniform(*CONTEXT_AREA)
        blob = field > np.quantile(field, 1.0 - area)
        tint = CONTEXT[host - 1] + rng.uniform(-12, 12, size=3)
        backdrop[:, blob] = tint[:, None]
    image = backdrop + texture[None] + rng.normal(0, 6, size=(3, h, w))
    for c, cy, cx, radius, mask in placed:
        color = PALETTE[c - 1] + rng.uniform(-15, 15, size=3)
        yy, xx = np.mgrid[0:h, 0:w]
        shade = 1.0 - 0.15 * np.hypot(yy - cy, xx - cx) / radius
        obj = color[:, None, None] * shade[None] + rng.normal(0, 6, size=(3, h, w))
        image[:, mask] = obj[:, mask]
    image = np.clip(np.round(image), 0, 255)

    fg = (gt > 0).astype(np.float64)
    # background texture leaks into the emulated activations as clutter
    clutter = np.clip(texture / 28.0, 0, None)

    def stack(sigma, stride, n, noise, clutter_gain):
        blurred = gaussian_filter(fg, sigma)
        chans = []
        for _ in range(n):
            gain = rng.uniform(0.5, 1.5)
            resp = gain * blurred + clutter_gain * rng.uniform(0, 1) * clutter
            resp = _block_mean(resp, stride)
            resp = resp + rng.normal(0, noise, size=resp.shape)
            chans.append(np.maximum(resp, 0.0))
        return np.stack(chans)

    conv4 = stack(2.0, CONV4_STRIDE, 8, 0.25, 0.5)
    conv5 = stack(4.0, CONV5_STRIDE, 8, 0.15, 0.3)

    K = C + 2
    feats = np.zeros((K, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for c, cy, cx, radius, mask in placed:
        # discriminative part: a random pixel of the object, pulled toward its center
        inside = np.argwhere(mask)
        py, px = inside[rng.integers(len(inside))]
        py = 0.5 * (py + cy)
        px = 0.5 * (px + cx)
        bump = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * (0.5 * radius) ** 2))
        feats[c - 1] += bump
        other = int(rng.integers(K))
        if other != c - 1:
            feats[other] += 0.2 * bump
        feats[C] += 0.5 * gaussian_filter(mask.astype(float), 2.0)
    cam_features = np.stack([_block_mean(f, CONV5_STRIDE) for f in feats])
    cam_features += rng.normal(0, 0.05, size=cam_features.shape)
    cam_features[C + 1] += rng.normal(0, 0.3, size=cam_features[C + 1].shape)
    cam_weights = rng.normal(0, 0.05, size=(C, K))
    cam_weights[np.arange(C), np.arange(C)] += 1.0

    bh = max(1, round(REGION_BLOCK * h / 48))
    bw = max(1, round(REGION_BLOCK * w / 48))
    blocks = (yy // bh) * ((w + bw - 1) // bw) + xx // bw
    regions = RegionPartition.from_labels(blocks * (C + 1) + gt)

    return SynthScene(
        image=image,
        gt=gt,
        tags=TagSet.from_labels(gt, C + 1),
        conv4=conv4,
        conv5=conv5,
        cam_features=cam_features,
        cam_weights=cam_weights,
        regions=regions,
    )


def synth_dataset(seed, count, config=None):
    """``count`` scenes seeded from one master seed."""
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=count)
    return [synth_scene(int(s), config) for s in seeds]
