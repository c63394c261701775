"""NetPBM images, normalized label files and detection text output."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, ParseError, TruncatedFile, UnsupportedDepth, UnsupportedFormat
from .evalkit import GroundTruthBox
from .tensor import Tensor3

_WS = b" \t\r\n\x0b\x0c"


@dataclass
class ImageRecord:
    id: str
    width: int
    height: int
    pixels: Tensor3

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixels {self.pixels.shape} do not match {self.width}x{self.height}x3")


def _header_tokens(data, count, pos):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise TruncatedFile("header ends early")
        tokens.append(data[start:pos])
    return tokens, pos


def read_ppm(data: bytes, image_id="") -> ImageRecord:
    if data[:2] != b"P6":
        raise UnsupportedFormat(f"not a binary PPM (magic {data[:2]!r})")
    tokens, pos = _header_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise UnsupportedFormat(f"bad header fields {tokens}") from None
    if maxval != 255:
        raise UnsupportedDepth(f"maxval {maxval} (only 255 supported)")
    if pos >= len(data) or data[pos] not in _WS:
        raise TruncatedFile("missing whitespace before pixel data")
    pos += 1
    n = width * height * 3
    if len(data) - pos < n:
        raise TruncatedFile(f"need {n} pixel bytes, found {len(data) - pos}")
    pix = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(height, width, 3)
    return ImageRecord(image_id, width, height, Tensor3(pix.astype(np.float32)))


def write_ppm(img: ImageRecord) -> bytes:
    # round half up, then clamp
    vals = np.clip(np.floor(img.pixels.data.astype(np.float64) + 0.5), 0, 255).astype(np.uint8)
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + vals.tobytes()


def load_ppm(path) -> ImageRecord:
    from pathlib import Path
    path = Path(path)
    return read_ppm(path.read_bytes(), path.stem)


def read_labels(text, image_w, image_h, image_id=""):
    """Parse ``class cx cy w h`` lines (normalized) into pixel-corner ground truth."""
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise ParseError(no, f"expected 5 fields, got {len(fields)}")
        try:
            cls = int(fields[0])
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError as exc:
            raise ParseError(no, str(exc)) from None
        if cls < 0:
            raise ParseError(no, f"negative class id {cls}")
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise OutOfRange(no, f"values must lie in [0, 1]: {line.strip()}")
        out.append(GroundTruthBox(image_id, cls, (
            (cx - w / 2) * image_w, (cy - h / 2) * image_h,
            (cx + w / 2) * image_w, (cy + h / 2) * image_h)))
    return out


def label_line(gt: GroundTruthBox, image_w, image_h):
    x0, y0, x1, y1 = gt.box
    return (f"{gt.class_id} {(x0 + x1) / 2 / image_w:.17g} {(y0 + y1) / 2 / image_h:.17g} "
            f"{(x1 - x0) / image_w:.17g} {(y1 - y0) / image_h:.17g}")


def write_detections(dets, image_id, jsonl=False):
    """Text lines ``image class score x_min y_min x_max y_max``, best score first."""
    dets = sorted(enumerate(dets), key=lambda p: (-p[1].score, p[0]))
    lines = []
    for _, d in dets:
        if jsonl:
            lines.append(json.dumps({
                "image": image_id, "class": d.class_id, "score": round(d.score, 6),
                "box": [round(v, 2) for v in (d.x_min, d.y_min, d.x_max, d.y_max)]}))
        else:
            lines.append(f"{image_id} {d.class_id} {d.score:.6f} {d.x_min:.2f} "
                         f"{d.y_min:.2f} {d.x_max:.2f} {d.y_max:.2f}")
    return "".join(line + "\n" for line in lines)


def read_detections(text):
    """Inverse of :func:`write_detections`; text and JSONL lines may be mixed."""
    from .detect import PixelDetection
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        f = line.split()
        if not f:
            continue
        if line.lstrip().startswith("{"):
            try:
                rec = json.loads(line)
                out.append(PixelDetection(int(rec["class"]), float(rec["score"]),
                                          *(float(v) for v in rec["box"]), image_id=str(rec["image"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(no, f"bad JSON detection: {exc}") from None
            continue
        if len(f) != 7:
            raise ParseError(no, f"expected 7 fields, got {len(f)}")
        try:
            out.append(PixelDetection(int(f[1]), float(f[2]), *(float(v) for v in f[3:]),
                                      image_id=f[0]))
        except ValueError as exc:
            raise ParseError(no, str(exc)) from None
    return out


def draw_boxes(img: ImageRecord, dets, thickness=2):
    """Copy of ``img`` with pure-red rectangle outlines."""
    pix = img.pixels.data.copy()
    h, w = img.height, img.width
    red = np.array([255, 0, 0], dtype=pix.dtype)
    for d in dets:
        x0, y0 = int(np.clip(np.floor(d.x_min), 0, w - 1)), int(np.clip(np.floor(d.y_min), 0, h - 1))
        x1, y1 = int(np.clip(np.ceil(d.x_max) - 1, 0, w - 1)), int(np.clip(np.ceil(d.y_max) - 1, 0, h - 1))
        t = thickness
        pix[y0:min(y0 + t, y1 + 1), x0:x1 + 1] = red
        pix[max(y1 - t + 1, y0):y1 + 1, x0:x1 + 1] = red
        pix[y0:y1 + 1, x0:min(x0 + t, x1 + 1)] = red
        pix[y0:y1 + 1, max(x1 - t + 1, x0):x1 + 1] = red
    return ImageRecord(img.id, w, h, Tensor3(pix))
