"""Throughput and per-layer latency of the detection pipeline."""

import contextlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .detect import detect_pipeline
from .graph import _retained_sources, run_layer
from .train import PreprocessConfig, preprocess


@dataclass
class BenchReport:
    iterations: int
    wall_seconds: float
    mean_latency_ms: float
    p50_ms: float
    p95_ms: float
    fps: float
    mode: str = "single-thread"
    per_layer: list = field(default_factory=list)    # (layer index, mean ms)
    samples_ms: list = field(default_factory=list, repr=False)

    def to_text(self):
        rows = [("iterations", f"{self.iterations}"),
                ("wall_seconds", f"{self.wall_seconds:.4f}"),
                ("mean_latency_ms", f"{self.mean_latency_ms:.3f}"),
                ("p50_ms", f"{self.p50_ms:.3f}"),
                ("p95_ms", f"{self.p95_ms:.3f}"),
                ("fps", f"{self.fps:.3f}"),
                ("mode", self.mode)]
        lines = [f"{k:<16} {v:>14}" for k, v in rows]
        if self.per_layer:
            lines.append(f"{'layer':>5} {'mean_ms':>12}")
            lines += [f"{i:>5} {ms:>12.3f}" for i, ms in self.per_layer]
        return "\n".join(lines) + "\n"

    def to_json(self):
        d = asdict(self)
        d.pop("samples_ms")
        return json.dumps(d, sort_keys=True)


def _threads(parallel):
    return contextlib.nullcontext() if parallel else threadpool_limits(limits=1)


def time_pipeline(step, iterations=100, warmup=10, clock=time.perf_counter,
                  soak_seconds=0.0, parallel=False):
    """Time ``step()`` after ``warmup`` untimed calls.

    ``soak_seconds`` keeps warming up until that much wall time has passed, as a
    longer steady-state burn-in.
    """
    if iterations < 1 or warmup < 0:
        raise ValueError("iterations must be >= 1 and warmup >= 0")
    with _threads(parallel):
        for _ in range(warmup):
            step()
        if soak_seconds > 0:
            start = clock()
            while clock() - start < soak_seconds:
                step()
        samples = []
        wall_start = clock()
        for _ in range(iterations):
            t0 = clock()
            step()
            samples.append(clock() - t0)
        wall = clock() - wall_start
    ms = np.array(samples) * 1e3
    return BenchReport(
        iterations=iterations,
        wall_seconds=wall,
        mean_latency_ms=float(ms.mean()),
        p50_ms=float(np.percentile(ms, 50)),
        p95_ms=float(np.percentile(ms, 95)),
        fps=iterations / wall if wall > 0 else float("inf"),
        mode="multi-thread" if parallel else "single-thread",
        samples_ms=ms.tolist(),
    )


def pipeline_step(net, image, c=0.25, iou_threshold=0.45, anchor_set=None):
    """The deployable per-frame path: preprocess, forward, decode, NMS."""
    cfg = PreprocessConfig(target_size=net.spec.input_size)
    h, w = image.height, image.width

    def step():
        return detect_pipeline(preprocess(image, cfg), net, anchor_set, c, iou_threshold, w, h)
    return step


def per_layer_profile(net, image, iterations=1, clock=time.perf_counter, parallel=False):
    """Mean wall time of each layer's kernel over ``iterations`` forward passes."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    spec = net.spec
    keep = _retained_sources(spec)
    totals = np.zeros(len(spec.layers))
    with _threads(parallel):
        for _ in range(iterations):
            saved, x = {}, image
            for i, layer in enumerate(spec.layers):
                t0 = clock()
                x = run_layer(net, i, x, saved)
                totals[i] += clock() - t0
                if i in keep:
                    saved[i] = x
    return [(i, 1e3 * t / iterations) for i, t in enumerate(totals)]
