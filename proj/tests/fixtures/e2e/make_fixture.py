#!/usr/bin/env python3
"""Generate the end-to-end fixture: a four-layer detection network, three
input frames, and the detections an independent float64 pipeline produces for
them.

The numeric pipeline here (resize, convolution, normalization, decode,
suppression, coordinate mapping) is written from scratch against the same
definitions the C++ side implements, so agreement between `detect` output and
expected.jsonl checks the whole binary path end to end.

The weight seed is searched so every decision the pipeline makes sits far
from its threshold: no candidate confidence near the 0.25 cut, no box pair
near the 0.45 overlap cut, no confidence ties. Within those margins the
float32 engine and this float64 oracle must agree on every decision, and
values can be compared tightly.

Running this script rewrites tiny.cfg, tiny.weights, frames/, and
expected.jsonl deterministically.
"""

import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent

NET_W = 32
NET_H = 32
STRIDE = 2
GRID = 16
ANCHORS = [(4, 6), (8, 12), (16, 10), (30, 61), (62, 45), (59, 119),
           (116, 90), (156, 198), (373, 326)]
MASK = [0, 1, 2]
CONF_THRESHOLD = 0.25
NMS_THRESHOLD = 0.45
# Decision margins: the float32 engine and this float64 oracle drift by well
# under 1e-5 on confidences and overlaps, so staying this far from every cut
# guarantees both sides make identical keep/drop decisions.
CONF_MARGIN = 5e-3
IOU_MARGIN = 2e-2
TIE_MARGIN = 1e-4

FRAME_SIZES = [(48, 36), (32, 32), (56, 40)]  # (width, height)

CFG_TEXT = """\
[net]
width=32
height=32
channels=3

[convolutional]
batch_normalize=1
filters=4
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=8
size=3
stride=2
pad=1
activation=leaky

[convolutional]
filters=18
size=1
stride=1
pad=1
activation=linear

[yolo]
mask = 0,1,2
anchors = 4,6,  8,12,  16,10,  30,61,  62,45,  59,119,  116,90,  156,198,  373,326
classes=1
num=9
"""


def make_frames():
    """Smooth random frames: low-res noise blown up so activations cluster."""
    rng = np.random.default_rng(20240831)
    frames = []
    for index, (width, height) in enumerate(FRAME_SIZES):
        low = rng.integers(0, 256, size=(height // 4, width // 4, 3))
        image = np.kron(low, np.ones((4, 4, 1))).astype(np.float64)
        # One smoothing pass to soften the block edges.
        padded = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
        image = sum(padded[dy:dy + height, dx:dx + width]
                    for dy in range(3) for dx in range(3)) / 9.0
        frames.append((f"frame_{index:03d}", np.clip(image, 0, 255).astype(np.uint8)))
    return frames


def write_ppm(path, image):
    height, width, _ = image.shape
    with open(path, "wb") as out:
        out.write(f"P6\n{width} {height}\n255\n".encode())
        out.write(image.tobytes())


class TinyWeights:
    """Randomly drawn float32 parameters with detection-friendly head biases."""

    def __init__(self, seed):
        rng = np.random.default_rng(seed)

        def conv(out_c, in_c, k, scale):
            return rng.normal(0.0, scale, size=(out_c, in_c, k, k)).astype(np.float32)

        self.w1 = conv(4, 3, 3, 0.4)
        self.bn1 = self._bn(rng, 4)
        self.w2 = conv(8, 4, 3, 0.25)
        self.bn2 = self._bn(rng, 8)
        self.w3 = conv(18, 8, 1, 0.8)
        # Steep objectness: its logit swings hard over the grid, so nearly
        # every candidate sits decisively on one side of the confidence cut.
        for anchor in range(3):
            self.w3[anchor * 6 + 4] *= 12.0
        bias = rng.normal(0.0, 0.3, size=18).astype(np.float32)
        for anchor, obj_bias in enumerate([-6.0, -8.0, -10.0]):
            bias[anchor * 6 + 4] = obj_bias
            bias[anchor * 6 + 5] = 1.2
        self.b3 = bias

    @staticmethod
    def _bn(rng, channels):
        return {
            "beta": rng.normal(0.0, 0.2, size=channels).astype(np.float32),
            "gamma": rng.uniform(0.8, 1.2, size=channels).astype(np.float32),
            "mean": rng.normal(0.0, 0.2, size=channels).astype(np.float32),
            "var": rng.uniform(0.5, 1.5, size=channels).astype(np.float32),
        }

    def serialize(self):
        # Header: major 0, minor 2, revision 0, then images-seen as int64.
        blob = struct.pack("<iii", 0, 2, 0) + struct.pack("<q", 0)
        for bn, weights in [(self.bn1, self.w1), (self.bn2, self.w2)]:
            for key in ("beta", "gamma", "mean", "var"):
                blob += bn[key].tobytes()
            blob += weights.tobytes()
        blob += self.b3.tobytes()
        blob += self.w3.tobytes()
        return blob


def resize_bilinear(image, dst_w, dst_h):
    """Half-pixel-aligned bilinear over raw byte values, then scaled to [0,1].
    Returns channels-first float64."""
    src_h, src_w, _ = image.shape
    sx = src_w / dst_w
    sy = src_h / dst_h
    ys = np.clip((np.arange(dst_h) + 0.5) * sy - 0.5, 0.0, src_h - 1)
    xs = np.clip((np.arange(dst_w) + 0.5) * sx - 0.5, 0.0, src_w - 1)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    pix = image.astype(np.float64)
    top = (1 - wx) * pix[y0][:, x0] + wx * pix[y0][:, x1]
    bottom = (1 - wx) * pix[y1][:, x0] + wx * pix[y1][:, x1]
    blended = (1 - wy) * top + wy * bottom
    return np.transpose(blended / 255.0, (2, 0, 1))


def conv2d(tensor, weights, stride, padding, bias=None):
    out_c, in_c, k, _ = weights.shape
    _, in_h, in_w = tensor.shape
    padded = np.pad(tensor, ((0, 0), (padding, padding), (padding, padding)))
    out_h = (in_h + 2 * padding - k) // stride + 1
    out_w = (in_w + 2 * padding - k) // stride + 1
    out = np.zeros((out_c, out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            patch = padded[:, oy * stride:oy * stride + k, ox * stride:ox * stride + k]
            out[:, oy, ox] = np.tensordot(weights.astype(np.float64), patch,
                                          axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out += bias.astype(np.float64)[:, None, None]
    return out


def batchnorm(tensor, bn, eps=1e-5):
    scale = bn["gamma"].astype(np.float64) / np.sqrt(bn["var"].astype(np.float64) + eps)
    shift = bn["beta"].astype(np.float64) - bn["mean"].astype(np.float64) * scale
    return tensor * scale[:, None, None] + shift[:, None, None]


def leaky(tensor, slope=0.1):
    return np.where(tensor >= 0, tensor, slope * tensor)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward(weights, tensor):
    tensor = leaky(batchnorm(conv2d(tensor, weights.w1, 1, 1), weights.bn1))
    tensor = leaky(batchnorm(conv2d(tensor, weights.w2, 2, 1), weights.bn2))
    return conv2d(tensor, weights.w3, 1, 0, bias=weights.b3)


def decode(head):
    """Every candidate of the 16x16x3 grid: dicts in row, col, anchor order."""
    candidates = []
    for row in range(GRID):
        for col in range(GRID):
            for a, anchor_index in enumerate(MASK):
                base = a * 6
                tx, ty, tw, th, tobj, tcls = head[base:base + 6, row, col]
                obj = sigmoid(tobj)
                cls = sigmoid(tcls)
                anchor_w, anchor_h = ANCHORS[anchor_index]
                candidates.append({
                    "cx": (sigmoid(tx) + col) * STRIDE,
                    "cy": (sigmoid(ty) + row) * STRIDE,
                    "w": anchor_w * np.exp(min(tw, 10.0)),
                    "h": anchor_h * np.exp(min(th, 10.0)),
                    "objectness": obj,
                    "class_score": cls,
                    "confidence": obj * cls,
                })
    return candidates


def iou(a, b):
    ax0, ax1 = a["cx"] - a["w"] / 2, a["cx"] + a["w"] / 2
    ay0, ay1 = a["cy"] - a["h"] / 2, a["cy"] + a["h"] / 2
    bx0, bx1 = b["cx"] - b["w"] / 2, b["cx"] + b["w"] / 2
    by0, by1 = b["cy"] - b["h"] / 2, b["cy"] + b["h"] / 2
    ix = min(ax1, bx1) - max(ax0, bx0)
    iy = min(ay1, by1) - max(ay0, by0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a["w"] * a["h"] + b["w"] * b["h"] - inter
    return inter / union


def nms(dets):
    ordered = sorted(dets, key=lambda d: -d["confidence"])
    kept = []
    for det in ordered:
        if all(iou(prev, det) <= NMS_THRESHOLD for prev in kept):
            kept.append(det)
    return kept


def map_to_source(det, src_w, src_h):
    out = dict(det)
    out["cx"] = det["cx"] * src_w / NET_W
    out["cy"] = det["cy"] * src_h / NET_H
    out["w"] = det["w"] * src_w / NET_W
    out["h"] = det["h"] * src_h / NET_H
    x0 = min(max(out["cx"] - out["w"] / 2, 0.0), src_w)
    x1 = min(max(out["cx"] + out["w"] / 2, 0.0), src_w)
    y0 = min(max(out["cy"] - out["h"] / 2, 0.0), src_h)
    y1 = min(max(out["cy"] + out["h"] / 2, 0.0), src_h)
    out["cx"] = (x0 + x1) / 2
    out["cy"] = (y0 + y1) / 2
    out["w"] = max(x1 - x0, 1e-3)
    out["h"] = max(y1 - y0, 1e-3)
    return out


def run_pipeline(weights, frames):
    """Returns per-frame final detections, or None if any margin is violated."""
    results = []
    any_suppression = False
    for image_id, image in frames:
        head = forward(weights, resize_bilinear(image, NET_W, NET_H))
        candidates = decode(head)
        for det in candidates:
            if abs(det["confidence"] - CONF_THRESHOLD) < CONF_MARGIN:
                return None  # too close to the confidence cut
        survivors = [d for d in candidates if d["confidence"] >= CONF_THRESHOLD]
        if not survivors:
            return None
        confs = sorted(d["confidence"] for d in survivors)
        for a, b in zip(confs, confs[1:]):
            if b - a < TIE_MARGIN:
                return None  # ambiguous ordering
        for i, a in enumerate(survivors):
            for b in survivors[i + 1:]:
                if abs(iou(a, b) - NMS_THRESHOLD) < IOU_MARGIN:
                    return None  # too close to the overlap cut
        kept = nms(survivors)
        if len(kept) < len(survivors):
            any_suppression = True
        height, width, _ = image.shape
        mapped = [map_to_source(det, width, height) for det in kept]
        for det in mapped:
            det["image_id"] = image_id
        results.append(mapped)
    total = sum(len(r) for r in results)
    if not (4 <= total <= 12):
        return None
    if max(len(r) for r in results) < 2:
        return None  # want at least one frame where ordering matters
    if not any_suppression:
        return None  # suppression must actually fire somewhere
    return results


def main():
    frames = make_frames()

    chosen = None
    for seed in range(1, 30000):
        weights = TinyWeights(seed)
        results = run_pipeline(weights, frames)
        if results is not None:
            chosen = (seed, weights, results)
            break
    if chosen is None:
        raise SystemExit("no seed satisfied the margin requirements")
    seed, weights, results = chosen

    (HERE / "tiny.cfg").write_text(CFG_TEXT)
    (HERE / "tiny.weights").write_bytes(weights.serialize())
    frames_dir = HERE / "frames"
    frames_dir.mkdir(exist_ok=True)
    for image_id, image in frames:
        write_ppm(frames_dir / f"{image_id}.ppm", image)

    with open(HERE / "expected.jsonl", "w") as out:
        for per_frame in results:
            for det in per_frame:
                record = {
                    "image_id": det["image_id"],
                    "class_id": 0,
                    "cx": float(det["cx"]),
                    "cy": float(det["cy"]),
                    "w": float(det["w"]),
                    "h": float(det["h"]),
                    "objectness": float(det["objectness"]),
                    "class_score": float(det["class_score"]),
                    "confidence": float(det["confidence"]),
                }
                out.write(json.dumps(record) + "\n")

    total = sum(len(r) for r in results)
    counts = ", ".join(f"{r[0]['image_id']}: {len(r)}" for r in results if r)
    print(f"seed {seed}: {total} detections ({counts})")


if __name__ == "__main__":
    main()
