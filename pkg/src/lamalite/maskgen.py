"""Training/evaluation hole sampling: wide strokes, boxes, narrow strokes.

Masks use 1 = known, 0 = missing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

POLICIES = ("large", "narrow", "wide", "box")


@dataclass
class Mask:
    data: np.ndarray  # H x W uint8 in {0, 1}
    kind: str
    widths: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def coverage(self) -> float:
        return float((self.data == 0).sum()) / self.data.size

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.widths)) if self.widths else 0.0


@dataclass(frozen=True)
class WideMaskParams:
    strokes: tuple = (1, 3)
    vertices: tuple = (4, 12)
    step: tuple = (0.10, 0.25)  # fraction of min(H, W)
    max_turn_deg: float = 60.0
    width: tuple = (0.05, 0.15)  # stroke thickness, fraction of min(H, W)

    def __post_init__(self):
        for lo, hi in (self.strokes, self.vertices, self.step, self.width):
            if lo > hi:
                raise ValueError(f"empty range ({lo}, {hi})")
        if self.width[0] <= 0:
            raise ValueError("stroke width must be positive")


NARROW_PARAMS = WideMaskParams(width=(0.01, 0.03))


@dataclass(frozen=True)
class BoxMaskParams:
    boxes: tuple = (1, 3)
    height: tuple = (0.1, 0.4)  # fraction of H
    width: tuple = (0.1, 0.4)  # fraction of W
    margin: int = 0

    def __post_init__(self):
        for lo, hi in (self.boxes, self.height, self.width):
            if lo > hi:
                raise ValueError(f"empty range ({lo}, {hi})")


def segment_distance(py: np.ndarray, px: np.ndarray, a: tuple, b: tuple) -> np.ndarray:
    """Euclidean distance from points (py, px) to segment a-b (points as (y, x))."""
    ay, ax = a
    dy, dx = b[0] - ay, b[1] - ax
    qy, qx = py - ay, px - ax
    den = dy * dy + dx * dx
    t = np.clip((qy * dy + qx * dx) / den, 0.0, 1.0) if den > 0 else 0.0
    return np.hypot(qy - t * dy, qx - t * dx)


def rasterize_capsules(H: int, W: int, polyline: np.ndarray, radius: float) -> np.ndarray:
    """Boolean H x W map of pixel centers within ``radius`` of the polyline.

    Coordinates are continuous: pixel (i, j) spans [i, i+1) x [j, j+1), center (i+0.5, j+0.5).
    """
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64) + 0.5
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    hit = np.zeros((H, W), dtype=bool)
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    for a, b in zip(pts[:-1], pts[1:]):
        hit |= segment_distance(ys, xs, tuple(a), tuple(b)) <= radius
    return hit


def sample_polyline(rng: np.random.Generator, H: int, W: int, p: WideMaskParams) -> np.ndarray:
    side = min(H, W)
    n = int(rng.integers(p.vertices[0], p.vertices[1] + 1))
    pts = [(rng.uniform(0, H), rng.uniform(0, W))]
    angle = rng.uniform(0, 2 * math.pi)
    turn = math.radians(p.max_turn_deg)
    for _ in range(n - 1):
        angle += rng.uniform(-turn, turn)
        length = rng.uniform(*p.step) * side
        y = float(np.clip(pts[-1][0] + length * math.sin(angle), 0, H))
        x = float(np.clip(pts[-1][1] + length * math.cos(angle), 0, W))
        pts.append((y, x))
    return np.array(pts)


def sample_wide_mask(rng: np.random.Generator, H: int, W: int, p: WideMaskParams = WideMaskParams(), kind: str = "wide") -> Mask:
    if H < 8 or W < 8:
        raise ValueError("masks need H, W >= 8")
    side = min(H, W)
    missing = np.zeros((H, W), dtype=bool)
    widths = []
    for _ in range(int(rng.integers(p.strokes[0], p.strokes[1] + 1))):
        line = sample_polyline(rng, H, W, p)
        width = rng.uniform(*p.width) * side
        missing |= rasterize_capsules(H, W, line, width / 2)
        widths.append(width)
    return Mask((~missing).astype(np.uint8), kind, widths)


def box_mask(H: int, W: int, boxes: list, kind: str = "box") -> Mask:
    """Mask with rows [r0, r1) x cols [c0, c1) missing for each box, clipped to the image."""
    data = np.ones((H, W), dtype=np.uint8)
    widths = []
    for r0, r1, c0, c1 in boxes:
        r0, r1 = max(r0, 0), min(r1, H)
        c0, c1 = max(c0, 0), min(c1, W)
        if r1 > r0 and c1 > c0:
            data[r0:r1, c0:c1] = 0
            widths.append(float(min(r1 - r0, c1 - c0)))
    return Mask(data, kind, widths)


def sample_box_mask(rng: np.random.Generator, H: int, W: int, p: BoxMaskParams = BoxMaskParams()) -> Mask:
    if H < 8 or W < 8:
        raise ValueError("masks need H, W >= 8")
    boxes = []
    for _ in range(int(rng.integers(p.boxes[0], p.boxes[1] + 1))):
        h = max(1, int(round(rng.uniform(*p.height) * H)))
        w = max(1, int(round(rng.uniform(*p.width) * W)))
        r0 = int(rng.integers(p.margin, max(p.margin, H - p.margin - h) + 1))
        c0 = int(rng.integers(p.margin, max(p.margin, W - p.margin - w) + 1))
        boxes.append((r0, r0 + h, c0, c0 + w))
    return box_mask(H, W, boxes)


def sample_training_mask(
    rng: np.random.Generator,
    H: int,
    W: int,
    policy: str = "large",
    wide: WideMaskParams = WideMaskParams(),
    box: BoxMaskParams = BoxMaskParams(),
    narrow: WideMaskParams = NARROW_PARAMS,
) -> Mask:
    if policy == "large":
        policy = "wide" if rng.random() < 0.5 else "box"
    if policy == "wide":
        return sample_wide_mask(rng, H, W, wide)
    if policy == "box":
        return sample_box_mask(rng, H, W, box)
    if policy == "narrow":
        return sample_wide_mask(rng, H, W, narrow, kind="narrow")
    raise ValueError(f"unknown mask policy {policy!r}; expected one of {POLICIES}")


def test_mask_gate(m, max_coverage: float = 0.5) -> bool:
    """Accept masks with some hole and at most ``max_coverage`` missing."""
    data = m.data if isinstance(m, Mask) else np.asarray(m)
    cov = float((data == 0).sum()) / data.size
    return 0.0 < cov <= max_coverage


test_mask_gate.__test__ = False  # not a pytest test


def sample_test_mask(rng: np.random.Generator, H: int, W: int, policy: str = "wide", max_tries: int = 1000, **kw) -> Mask:
    for _ in range(max_tries):
        m = sample_training_mask(rng, H, W, policy, **kw)
        if test_mask_gate(m):
            return m
    raise RuntimeError(f"no acceptable {policy} mask in {max_tries} draws")


sample_test_mask.__test__ = False
