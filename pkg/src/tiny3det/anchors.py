"""Anchor priors: corner-aligned IOU, k-means clustering and scale assignment."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidAnchorCount, InvalidBox

# strides served by each anchor triple, finest grid first
SCALE_STRIDES = (8, 16, 32)

# yolov3 lineage priors (416 input pixels); the clustered set for a dataset
# comes from ``kmeans_anchors``
DEFAULT_ANCHORS = (
    (10, 13), (16, 30), (33, 23),
    (30, 61), (62, 45), (59, 119),
    (116, 90), (156, 198), (373, 326),
)


@dataclass(frozen=True)
class WHBox:
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBox(f"width and height must be positive: {self}")

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class AnchorSet:
    """Nine (w, h) priors in network-input pixels, ascending by area.

    Indices 0-2 serve stride 8, 3-5 stride 16 and 6-8 stride 32.
    """

    anchors: tuple

    def __post_init__(self):
        pairs = tuple((float(w), float(h)) for w, h in self.anchors)
        if len(pairs) != 9:
            raise InvalidAnchorCount(f"need 9 anchors, got {len(pairs)}")
        if any(w <= 0 or h <= 0 for w, h in pairs):
            raise InvalidBox("anchor dimensions must be positive")
        areas = [w * h for w, h in pairs]
        if any(b < a for a, b in zip(areas, areas[1:])):
            raise ValueError("anchors must be sorted ascending by area")
        object.__setattr__(self, "anchors", pairs)

    @property
    def groups(self):
        return ((0, 1, 2), (3, 4, 5), (6, 7, 8))

    def for_stride(self, stride):
        try:
            g = self.groups[SCALE_STRIDES.index(stride)]
        except ValueError:
            raise KeyError(f"no anchor group for stride {stride}") from None
        return [self.anchors[i] for i in g]

    def to_line(self, precision=2):
        return ",".join(f"{v:.{precision}f}" for wh in self.anchors for v in wh)

    @classmethod
    def parse(cls, text):
        vals = [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]
        if len(vals) != 18:
            raise InvalidAnchorCount(f"expected 18 numbers, got {len(vals)}")
        return cls(tuple(zip(vals[0::2], vals[1::2])))


DEFAULT_ANCHOR_SET = AnchorSet(DEFAULT_ANCHORS)


def iou_wh(a: WHBox, b: WHBox) -> float:
    """IOU of two boxes sharing their top-left corner."""
    inter = min(a.w, b.w) * min(a.h, b.h)
    return inter / (a.area + b.area - inter)


def _iou_matrix(wh, centroids):
    inter = (np.minimum(wh[:, None, 0], centroids[None, :, 0])
             * np.minimum(wh[:, None, 1], centroids[None, :, 1]))
    areas = wh[:, 0] * wh[:, 1]
    c_areas = centroids[:, 0] * centroids[:, 1]
    return inter / (areas[:, None] + c_areas[None, :] - inter)


class Lcg64:
    """64-bit LCG (Knuth MMIX constants) yielding the high 32 bits per draw."""

    MUL = 6364136223846793005
    INC = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed):
        self.state = seed & self.MASK

    def next_u32(self):
        self.state = (self.state * self.MUL + self.INC) & self.MASK
        return self.state >> 32

    def uniform(self):
        return self.next_u32() / 4294967296.0


@dataclass
class KMeansResult:
    centroids: list          # WHBox, ascending by area
    mean_iou: float
    labels: np.ndarray       # cluster of each input box, indexed into ``centroids``
    iterations: int
    converged: bool
    history: list = field(default_factory=list)   # mean IOU after seeding and each step


def _seed_centroids(wh, k, rng):
    n = len(wh)
    chosen = [min(int(rng.uniform() * n), n - 1)]
    while len(chosen) < k:
        d = 1.0 - _iou_matrix(wh, wh[chosen]).max(axis=1)
        weights = d * d
        total = weights.sum()
        if total <= 0:
            # every box coincides with a chosen centroid
            chosen.append(chosen[0])
            continue
        target = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(weights), target, side="right"))
        chosen.append(min(idx, n - 1))
    return wh[chosen].copy()


def _assign(wh, centroids):
    iou = _iou_matrix(wh, centroids)
    labels = np.argmax(iou, axis=1)   # first maximum = lowest centroid index
    best = iou[np.arange(len(wh)), labels]
    return labels, best


def _member_iou_sum(members, centroid):
    return float(_iou_matrix(members, centroid[None, :]).sum())


def kmeans_anchors(boxes, k=9, seed=0, max_iters=300) -> KMeansResult:
    """Lloyd's k-means over box shapes with distance ``1 - iou_wh``.

    Seeding is k-means++ driven by :class:`Lcg64`, so a given seed reproduces
    the same centroids everywhere. A cluster moves to the mean (w, h) of its
    members only when that does not lower the members' summed IOU, which keeps
    the mean IOU non-decreasing from one iteration to the next.
    """
    if k < 1 or len(boxes) < k:
        raise InsufficientData(f"need at least k={k} boxes, got {len(boxes)}")
    wh = np.array([(b.w, b.h) for b in boxes], dtype=np.float64)
    if np.any(wh <= 0):
        raise InvalidBox("box dimensions must be positive")
    rng = Lcg64(seed)
    centroids = _seed_centroids(wh, k, rng)
    labels, best = _assign(wh, centroids)
    history = [float(best.mean())]
    converged = False
    iters = 0
    while iters < max_iters:
        iters += 1
        new = centroids.copy()
        served = best.copy()
        for j in range(k):
            members = wh[labels == j]
            if len(members):
                mean = members.mean(axis=0)
                if _member_iou_sum(members, mean) >= _member_iou_sum(members, centroids[j]):
                    new[j] = mean
            else:
                # reseed with the box worst served by its current centroid
                far = int(np.argmin(served))
                new[j] = wh[far]
                served[far] = 1.0
        new_labels, new_best = _assign(wh, new)
        stable = np.array_equal(new_labels, labels) and np.array_equal(new, centroids)
        centroids, labels, best = new, new_labels, new_best
        history.append(float(best.mean()))
        if stable:
            converged = True
            break
    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return KMeansResult(
        centroids=[WHBox(float(w), float(h)) for w, h in centroids[order]],
        mean_iou=history[-1],
        labels=remap[labels],
        iterations=iters,
        converged=converged,
        history=history,
    )


def assign_anchors_to_scales(centroids) -> AnchorSet:
    if len(centroids) != 9:
        raise InvalidAnchorCount(f"need 9 centroids, got {len(centroids)}")
    ordered = sorted(centroids, key=lambda b: b.w * b.h)
    return AnchorSet(tuple((b.w, b.h) for b in ordered))
