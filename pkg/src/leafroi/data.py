"""Seeded procedural leaf scenes with exact ROI masks.

Each scene is a textured background with distractor leaves and branches,
one primary leaf, and (for diseased classes) a handful of lesions on the
primary leaf.  The mask follows the labeling rule used for the ROI
subnetwork: a healthy primary leaf is background, a diseased one is
``LEAF`` and its lesions are ``SPOT``.  Distractor leaves are always
background, whatever they look like.

Per-sample seeds come from ``SeedSequence([master_seed, class, index])`` so
any subset of the dataset can be regenerated on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigurationError, ContractError
from .imaging import value_noise

BACKGROUND, LEAF, SPOT = 0, 1, 2
NORMAL, BLOTCH, SPOT_DISEASE = 0, 1, 2
CLASS_NAMES = ("normal", "blotch", "spot-disease")
N_CLASSES = 3

# RGB palettes in [0, 1]
LEAF_GREENS = np.array([
    [0.30, 0.55, 0.20],
    [0.35, 0.60, 0.24],
    [0.26, 0.50, 0.19],
    [0.40, 0.62, 0.27],
])
BLOTCH_PALETTE = np.array([
    [0.28, 0.44, 0.16],
    [0.33, 0.47, 0.18],
    [0.25, 0.40, 0.15],
])
BROWN_PALETTE = np.array([
    [0.47, 0.31, 0.15],
    [0.55, 0.36, 0.18],
    [0.41, 0.26, 0.12],
])
GROUND_PALETTE = np.array([
    [0.42, 0.34, 0.24],
    [0.52, 0.50, 0.46],
    [0.30, 0.42, 0.22],
    [0.36, 0.30, 0.22],
])
BRANCH_PALETTE = np.array([
    [0.36, 0.26, 0.16],
    [0.30, 0.22, 0.14],
])


@dataclass(frozen=True)
class GenConfig:
    """Generator knobs.  Defaults reproduce the standard benchmark."""

    size: int = 96
    counts: tuple[int, int, int] = (118, 120, 166)
    seed: int = 2024
    clutter: int = 5  # maximum distractor leaves per scene
    branch_max: int = 3
    distractor_spot_prob: float = 0.5
    spot_count: tuple[int, int] = (2, 12)
    blotch_radius: tuple[float, float] = (2.5, 5.5)
    brown_radius: tuple[float, float] = (2.0, 4.5)
    blotch_shift: float = 0.0  # pushes the blotch palette away from the leaf greens
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.size <= 0 or self.size % 16:
            raise ConfigurationError(f"image size {self.size} must be a positive multiple of 16")
        if len(self.counts) != N_CLASSES or any(int(c) <= 0 for c in self.counts):
            raise ConfigurationError(f"per-class counts must be 3 positive integers, got {self.counts}")
        lo, hi = self.spot_count
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"invalid spot count range {self.spot_count}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_overrides(self, **kw) -> "GenConfig":
        return replace(self, **kw)


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    mask: np.ndarray  # H x W uint8 in {0, 1, 2}
    label: int
    seed: int = 0
    support: np.ndarray | None = field(default=None, repr=False)  # primary-leaf pixels


@dataclass
class Dataset:
    images: np.ndarray  # N x 3 x H x W
    masks: np.ndarray  # N x H x W uint8
    labels: np.ndarray  # N int64
    seeds: np.ndarray  # N uint64
    names: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Sample:
        return Sample(self.images[i], self.masks[i], int(self.labels[i]), int(self.seeds[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        names = [self.names[i] for i in idx] if self.names else []
        return Dataset(self.images[idx], self.masks[idx], self.labels[idx], self.seeds[idx], names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES)


def sample_seed(master: int, label: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(label), int(index)]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# rendering primitives


def _grid(size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _leaf_frame(yy, xx, cy, cx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return u, v


def _leaf_support(u, v, a, b, power, taper):
    # superellipse narrowing toward the tip (u > 0)
    width = b * np.clip(1.0 - taper * u / a, 0.05, None)
    return np.abs(u / a) ** power + np.abs(v / width) ** power <= 1.0


def _jitter(rng, color, amount):
    return np.clip(color + rng.uniform(-amount, amount, 3), 0, 1)


def _paint(img, region, color, shade=None):
    if shade is None:
        img[:, region] = color[:, None]
    else:
        img[:, region] = color[:, None] * shade[region][None]


def _spots(rng, yy, xx, support, n, radius, avoid=None):
    """Irregular blobs with centers inside ``support``; returns their union clipped to it."""
    ys, xs = np.nonzero(support if avoid is None else support & ~avoid)
    out = np.zeros_like(support)
    if len(ys) == 0:
        return out
    for _ in range(n):
        k = rng.integers(len(ys))
        cy, cx = yy[ys[k], xs[k]], xx[ys[k], xs[k]]
        r = rng.uniform(*radius)
        phase, lobes, wob = rng.uniform(0, 2 * np.pi), rng.integers(3, 6), rng.uniform(0.1, 0.3)
        dy, dx = yy - cy, xx - cx
        ang = np.arctan2(dy, dx)
        out |= np.hypot(dy, dx) <= r * (1 + wob * np.sin(lobes * ang + phase))
    return out & support


def _paint_spots(rng, img, spots, palette, yy, xx):
    base = palette[rng.integers(len(palette))]
    tone = 0.9 + 0.2 * value_noise(rng, yy.shape[0], 12)
    _paint(img, spots, _jitter(rng, base, 0.03), tone)


def gen_scene(seed: int, label: int, cfg: GenConfig | None = None) -> Sample:
    """Render one scene; deterministic in ``(seed, label, cfg)``."""
    if label not in (NORMAL, BLOTCH, SPOT_DISEASE):
        raise ContractError(f"class must be 0, 1 or 2, got {label!r}")
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(seed)
    size = cfg.size
    yy, xx = _grid(size)
    scale = size / 96.0

    # ground
    ground = GROUND_PALETTE[rng.integers(len(GROUND_PALETTE))]
    low = value_noise(rng, size, 3)
    high = value_noise(rng, size, 24)
    img = np.clip(ground[:, None, None] * (0.75 + 0.35 * low + 0.2 * (high - 0.5))[None], 0, 1)

    # branches
    for _ in range(rng.integers(0, cfg.branch_max + 1)):
        p0 = rng.uniform(0, size, 2)
        ang = rng.uniform(0, np.pi)
        d = np.array([np.sin(ang), np.cos(ang)])
        dist = np.abs((yy - p0[0]) * d[1] - (xx - p0[1]) * d[0])
        width = rng.uniform(1.0, 2.5) * scale
        _paint(img, dist <= width, _jitter(rng, BRANCH_PALETTE[rng.integers(2)], 0.04))

    # distractor leaves (always background)
    for _ in range(rng.integers(1, cfg.clutter + 1)):
        cy, cx = rng.uniform(0, size, 2)
        u, v = _leaf_frame(yy, xx, cy, cx, rng.uniform(0, 2 * np.pi))
        a = rng.uniform(10, 20) * scale
        b = a * rng.uniform(0.45, 0.65)
        sup = _leaf_support(u, v, a, b, rng.uniform(1.8, 2.4), rng.uniform(0.1, 0.4))
        color = _jitter(rng, LEAF_GREENS[rng.integers(len(LEAF_GREENS))] * rng.uniform(0.8, 1.0), 0.04)
        _paint(img, sup, color, 0.85 + 0.3 * value_noise(rng, size, 6))
        if rng.random() < cfg.distractor_spot_prob:
            palette = BROWN_PALETTE if rng.random() < 0.5 else BLOTCH_PALETTE
            sp = _spots(rng, yy, xx, sup, int(rng.integers(1, 5)), cfg.brown_radius)
            _paint_spots(rng, img, sp, palette, yy, xx)

    # primary leaf
    cy, cx = size / 2 + rng.uniform(-10, 10, 2) * scale
    theta = rng.uniform(0, 2 * np.pi)
    u, v = _leaf_frame(yy, xx, cy, cx, theta)
    a = rng.uniform(28, 38) * scale
    b = a * rng.uniform(0.5, 0.65)
    support = _leaf_support(u, v, a, b, rng.uniform(1.9, 2.3), rng.uniform(0.15, 0.35))
    base = _jitter(rng, LEAF_GREENS[rng.integers(len(LEAF_GREENS))], 0.03)
    shade = 0.9 + 0.2 * value_noise(rng, size, 5)
    period = rng.uniform(6, 9) * scale
    veins = (np.abs(v) < 0.7 * scale) | (np.abs(np.mod(u - 0.8 * np.abs(v), period) - period / 2) < 0.45 * scale)
    shade = shade + 0.12 * veins
    _paint(img, support, base, shade)

    mask = np.zeros((size, size), dtype=np.uint8)
    if label != NORMAL:
        mask[support] = LEAF
        n = int(rng.integers(cfg.spot_count[0], cfg.spot_count[1] + 1))
        if label == BLOTCH:
            palette = np.clip(BLOTCH_PALETTE + cfg.blotch_shift * (BROWN_PALETTE - BLOTCH_PALETTE), 0, 1)
            radius = cfg.blotch_radius
        else:
            palette, radius = BROWN_PALETTE, cfg.brown_radius
        spots = _spots(rng, yy, xx, support, n, tuple(r * scale for r in radius))
        _paint_spots(rng, img, spots, palette, yy, xx)
        mask[spots] = SPOT

    # global lighting and sensor noise
    img = img * rng.uniform(0.85, 1.15) + rng.uniform(-0.03, 0.03, (3, 1, 1))
    img = img + rng.normal(0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return Sample(img, mask, int(label), int(seed), support)


def gen_dataset(cfg: GenConfig | None = None, classes=(0, 1, 2)) -> Dataset:
    """Generate every sample of the requested classes, class-major order."""
    cfg = cfg or GenConfig()
    images, masks, labels, seeds, names = [], [], [], [], []
    for label in classes:
        for i in range(int(cfg.counts[label])):
            s = sample_seed(cfg.seed, label, i)
            smp = gen_scene(s, label, cfg)
            images.append(smp.image)
            masks.append(smp.mask)
            labels.append(label)
            seeds.append(s)
            names.append(f"c{label}_{i:04d}")
    return Dataset(np.stack(images), np.stack(masks), np.array(labels, dtype=np.int64),
                   np.array(seeds, dtype=np.uint64), names)


def palette_distance(palette: np.ndarray, reference: np.ndarray = LEAF_GREENS) -> float:
    """Mean Euclidean RGB distance between every pair drawn from two palettes."""
    diff = palette[:, None, :] - reference[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).mean())
