"""Turning raw head tensors into scored, de-duplicated boxes."""

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .errors import LayoutMismatch
from .graph import forward

# keeps exp() finite and nonzero in float64
_LOG_CLIP = 700.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class DecodedBox:
    """Center-format box normalized to the square network input."""

    b_x: float
    b_y: float
    b_w: float
    b_h: float
    objectness: float
    class_probs: tuple

    def corners(self):
        hw, hh = self.b_w / 2, self.b_h / 2
        return (self.b_x - hw, self.b_y - hh, self.b_x + hw, self.b_y + hh)


@dataclass(frozen=True)
class Detection:
    box: DecodedBox
    class_id: int
    score: float


@dataclass(frozen=True)
class PixelDetection:
    class_id: int
    score: float
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    image_id: str = ""

    @property
    def box(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def decode_scale_arrays(head, anchors, stride, input_size):
    """Vectorized decode of one head; returns ``(boxes[N, 4], objectness[N], probs[N, C])``.

    Boxes come out cell-major (row, then column) and anchor-minor.
    """
    data = np.asarray(getattr(head, "data", head))
    side, side_w, chans = data.shape
    if chans % 3 or chans // 3 < 6:
        raise LayoutMismatch(f"{chans} channels is not 3 x (5 + C)")
    grid = input_size // stride
    if side != grid or side_w != grid:
        raise LayoutMismatch(f"head is {side}x{side_w}, stride {stride} needs {grid}x{grid}")
    if len(anchors) != 3:
        raise LayoutMismatch(f"need 3 anchors per scale, got {len(anchors)}")
    per = chans // 3
    t = data.astype(np.float64).reshape(grid, grid, 3, per)
    cy, cx = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    anc = np.asarray(anchors, dtype=np.float64)
    bx = (sigmoid(t[..., 0]) + cx[..., None]) / grid
    by = (sigmoid(t[..., 1]) + cy[..., None]) / grid
    bw = anc[:, 0] * np.exp(np.clip(t[..., 2], -_LOG_CLIP, _LOG_CLIP)) / input_size
    bh = anc[:, 1] * np.exp(np.clip(t[..., 3], -_LOG_CLIP, _LOG_CLIP)) / input_size
    boxes = np.stack([bx, by, bw, bh], axis=-1).reshape(-1, 4)
    obj = sigmoid(t[..., 4]).reshape(-1)
    probs = sigmoid(t[..., 5:]).reshape(-1, per - 5)
    return boxes, obj, probs


def _to_boxes(boxes, obj, probs):
    return [DecodedBox(b[0], b[1], b[2], b[3], o, tuple(p))
            for b, o, p in zip(boxes.tolist(), obj.tolist(), probs.tolist())]


def decode_scale(head, anchors, stride, input_size):
    return _to_boxes(*decode_scale_arrays(head, anchors, stride, input_size))


def decode_all(heads, anchor_set: AnchorSet, input_size):
    """Decode every head in graph order (strides 32, 16, 8) and concatenate."""
    if len(heads) > len(anchor_set.groups):
        raise LayoutMismatch(f"{len(heads)} heads but {len(anchor_set.groups)} anchor groups")
    out = []
    for head in heads:
        stride = input_size // head.shape[0]
        try:
            anchors = anchor_set.for_stride(stride)
        except KeyError as exc:
            raise LayoutMismatch(str(exc)) from None
        out.extend(decode_scale(head, anchors, stride, input_size))
    return out


def filter_confidence(boxes, c=0.25):
    """One detection per (box, class) whose objectness x class probability exceeds ``c``."""
    dets = []
    for box in boxes:
        for cls, prob in enumerate(box.class_probs):
            score = box.objectness * prob
            if score > c:
                dets.append(Detection(box, cls, score))
    return dets


def iou_corners(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _pairwise_iou(corners, area, i, rest):
    x0 = np.maximum(corners[i, 0], corners[rest, 0])
    y0 = np.maximum(corners[i, 1], corners[rest, 1])
    x1 = np.minimum(corners[i, 2], corners[rest, 2])
    y1 = np.minimum(corners[i, 3], corners[rest, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    return inter / (area[i] + area[rest] - inter)


def nms(dets, iou_threshold=0.45):
    """Greedy per-class suppression; a box goes when its IOU with a kept box is >= threshold.

    Ordering is score descending with ties resolved by input position.
    """
    if not dets:
        return []
    scores = np.array([d.score for d in dets], dtype=np.float64)
    order = np.lexsort((np.arange(len(dets)), -scores))
    corners = np.array([d.box.corners() for d in dets], dtype=np.float64)
    area = (corners[:, 2] - corners[:, 0]) * (corners[:, 3] - corners[:, 1])
    classes = np.array([d.class_id for d in dets])[order]
    kept = []
    for cls in np.unique(classes):
        queue = order[classes == cls]
        while queue.size:
            top, queue = queue[0], queue[1:]
            kept.append(top)
            if queue.size:
                queue = queue[_pairwise_iou(corners, area, top, queue) < iou_threshold]
    kept.sort(key=lambda i: (-scores[i], i))
    return [dets[i] for i in kept]


def to_pixels(det: Detection, width, height, image_id=""):
    x0, y0, x1, y1 = det.box.corners()
    return PixelDetection(
        det.class_id, det.score,
        min(max(x0 * width, 0.0), width), min(max(y0 * height, 0.0), height),
        min(max(x1 * width, 0.0), width), min(max(y1 * height, 0.0), height),
        image_id)


def detections_from_heads(heads, anchor_set, input_size, c=0.25, iou_threshold=0.45,
                          width=None, height=None, image_id=""):
    width = input_size if width is None else width
    height = input_size if height is None else height
    kept = nms(filter_confidence(decode_all(heads, anchor_set, input_size), c), iou_threshold)
    return [to_pixels(d, width, height, image_id) for d in kept]


def detect_pipeline(image, net, anchor_set=None, c=0.25, iou_threshold=0.45,
                    width=None, height=None, image_id=""):
    """forward -> decode -> confidence filter -> NMS -> pixel corners in the original image."""
    anchor_set = net.spec.anchors if anchor_set is None else anchor_set
    heads = forward(net, image)
    return detections_from_heads(heads, anchor_set, net.spec.input_size, c, iou_threshold,
                                 width, height, image_id)
