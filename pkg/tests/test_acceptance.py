"""Exit criteria. Each test prints one ``[criterion N] PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also echoed in the terminal summary.
"""

import io
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import GOLDEN
from oracles import naive_conv, naive_nms, riemann_ap
from tiny3det.anchors import WHBox, _assign, kmeans_anchors, assign_anchors_to_scales
from tiny3det.bench import time_pipeline
from tiny3det.cli import main
from tiny3det.detect import (DecodedBox, Detection, decode_all, decode_scale,
                             detections_from_heads, nms)
from tiny3det.errors import WeightCountMismatch
from tiny3det.evalkit import (GroundTruthBox, MatchOutcome, average_precision, map_report,
                              match_detections, pr_curve)
from tiny3det.graph import (build_custom_tiny3, forward, load_darknet_weights, random_network,
                            save_darknet_weights)
from tiny3det.detect import PixelDetection
from tiny3det.image_io import ImageRecord, write_ppm
from tiny3det.layers import (BatchNorm, ConvParams, batchnorm_apply, conv2d, fold_batchnorm)
from tiny3det.tensor import Tensor3, tensor_create
from tiny3det.train import AdamWConfig, AdamWState, adamw_step

from oracles import reference_adam

RESULTS = []


@contextmanager
def criterion(number, title, budget_s=None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget_s is not None:
            assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"[criterion {number}] FAIL  {title} ({elapsed:.2f}s): {exc}"
        RESULTS.append(line)
        print("\n" + line)
        raise
    line = f"[criterion {number}] PASS  {title} ({elapsed:.2f}s)"
    RESULTS.append(line)
    print("\n" + line)


def _cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue()


def _output_column(text, first=0):
    rows = {}
    for row in text.splitlines()[1:]:
        cells = row.split("\t")
        if int(cells[0]) >= first and len(cells) == 5 and cells[4]:
            rows[int(cells[0])] = cells[4]
    return rows


def test_1_architecture_conformance():
    with criterion(1, "layer tables match the golden original 416/80 table and custom3 608/1 rows 13-30", 1.0):
        code, out = _cli("info", "--arch", "original", "--size", "416", "--classes", "80")
        assert code == 0
        want = _output_column((GOLDEN / "layers_original_416_c80.tsv").read_text())
        got = _output_column(out)
        assert len(want) == 20 and got == want
        assert got[15] == "13 x 13 x 255" and got[22] == "26 x 26 x 255"
        code, out = _cli("info", "--arch", "custom3", "--size", "608", "--classes", "1")
        assert code == 0
        want = _output_column((GOLDEN / "layers_custom3_608_c1_rows13_30.tsv").read_text())
        got = _output_column(out, first=13)
        assert got == want
        assert [got[i] for i in (15, 22, 29)] == ["19 x 19 x 18", "38 x 38 x 18", "76 x 76 x 18"]


def test_2_candidate_count():
    spec = build_custom_tiny3(608, 1)
    heads = forward(random_network(spec, seed=0),
                    Tensor3(np.random.default_rng(0).random((608, 608, 3))))
    with criterion(2, "decode_all on the custom net yields 22743 boxes", 1.0):
        boxes = decode_all(heads, spec.anchors, 608)
        assert len(boxes) == 22743 == 3 * (19 ** 2 + 38 ** 2 + 76 ** 2)


def _nms_set(rng):
    dets = []
    for _ in range(200):
        x, y = rng.uniform(0.05, 0.95, size=2)
        w, h = rng.uniform(0.02, 0.4, size=2)
        score = round(float(rng.uniform(0.26, 1.0)), 2)
        dets.append(Detection(DecodedBox(x, y, w, h, 1.0, (1.0, 1.0)), int(rng.integers(2)), score))
    return dets


def test_3_kernel_oracles():
    with criterion(3, "conv vs nested loops (<=1e-5), BN fold vs unfolded (<=1e-4), NMS vs O(n^2) reference, 100 cases each", 30.0):
        rng = np.random.default_rng(2024)
        worst_conv = 0.0
        for _ in range(100):
            h, w, c, f = (int(v) for v in rng.integers(1, [9, 9, 5, 5]))
            k = int(rng.choice([1, 3]))
            x = rng.uniform(-1, 1, size=(h, w, c)).astype(np.float32)
            p = ConvParams(rng.uniform(-1, 1, size=(f, c, k, k)), rng.uniform(-1, 1, size=f))
            worst_conv = max(worst_conv, float(np.max(np.abs(
                conv2d(Tensor3(x), p).data - naive_conv(x, p.weights, p.bias)))))
        assert worst_conv <= 1e-5, worst_conv

        worst_fold = 0.0
        for _ in range(100):
            f, k = int(rng.integers(1, 5)), int(rng.choice([1, 3]))
            p = ConvParams(rng.normal(size=(f, 4, k, k)), np.zeros(f), 1,
                           BatchNorm(rng.uniform(0.1, 2, f), rng.normal(size=f),
                                     rng.normal(size=f), rng.uniform(0.01, 2, f)))
            x = Tensor3(rng.normal(size=(8, 8, 4)))
            ref = batchnorm_apply(conv2d(x, p), p).data
            worst_fold = max(worst_fold, float(np.max(np.abs(conv2d(x, fold_batchnorm(p)).data - ref))))
        assert worst_fold <= 1e-4, worst_fold

        for _ in range(100):
            dets = _nms_set(rng)
            thr = float(rng.uniform(0.2, 0.8))
            index = {id(d): i for i, d in enumerate(dets)}
            got = {index[id(d)] for d in nms(dets, thr)}
            assert got == naive_nms([(d.class_id, d.score, d.box.corners()) for d in dets], thr)


def _random_eval_instance(rng, max_dets=50):
    gts, dets = [], []
    n_img = int(rng.integers(1, 4))
    for i in range(n_img):
        for _ in range(int(rng.integers(1, 8))):
            x, y = rng.uniform(0, 90, size=2)
            w, h = rng.uniform(5, 30, size=2)
            gts.append(GroundTruthBox(f"im{i}", 0, (x, y, x + w, y + h)))
    for _ in range(int(rng.integers(0, max_dets + 1))):
        if rng.random() < 0.7:
            g = gts[int(rng.integers(len(gts)))]
            box = tuple(np.array(g.box) + rng.normal(0, 2.5, size=4))
            if box[2] <= box[0] or box[3] <= box[1]:
                continue
            img = g.image_id
        else:
            x, y = rng.uniform(0, 90, size=2)
            box, img = (x, y, x + 12, y + 12), f"im{int(rng.integers(n_img))}"
        dets.append(PixelDetection(0, float(rng.random()), *box, image_id=img))
    return dets, gts


def test_4_metric_oracles():
    with criterion(4, "AP hand cases exact; AP vs 1e6-point Riemann within 1e-6 (50 instances); AP@0.75 <= AP@0.5", 30.0):
        g = [GroundTruthBox("a", 0, (0, 0, 10, 10)), GroundTruthBox("b", 0, (0, 0, 5, 5))]
        perfect = [PixelDetection(0, 0.9, 0, 0, 10, 10, "a"), PixelDetection(0, 0.8, 0, 0, 5, 5, "b")]
        assert average_precision(pr_curve(match_detections(perfect, g, 0.5))) == 1.0
        wrong = [PixelDetection(0, 0.9, 50, 50, 60, 60, "a")]
        assert average_precision(pr_curve(match_detections(wrong, g, 0.5))) == 0.0
        two = MatchOutcome(np.array([0.9, 0.8]), np.array([True, False]), 2)
        assert average_precision(pr_curve(two)) == 0.5

        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(50):
            dets, gts = _random_eval_instance(rng)
            m = match_detections(dets, gts, 0.5)
            worst = max(worst, abs(average_precision(pr_curve(m))
                                   - riemann_ap(m.scores, m.is_tp, m.num_gt)))
        assert worst <= 1e-6, worst

        for _ in range(50):
            dets, gts = _random_eval_instance(rng)
            rep = map_report(dets, gts, (0.5, 0.75))
            assert rep.by_target(0.75).mAP <= rep.by_target(0.5).mAP


def test_5_decode_invariants():
    with criterion(5, "1e5 random logit vectors decode into [0,1] centers, positive sizes, objectness in [0,1]; zero-logit closed form to 1e-12", 10.0):
        rng = np.random.default_rng(5)
        grid = 183                           # 183 * 183 * 3 = 100467 vectors
        head = (rng.standard_normal((grid, grid, 18)) * 20).astype(np.float32)
        boxes = decode_scale(Tensor3(head), [(10, 14), (23, 27), (37, 58)], 32, 32 * grid)
        assert len(boxes) >= 10 ** 5
        for b in boxes:
            assert 0.0 <= b.b_x <= 1.0 and 0.0 <= b.b_y <= 1.0
            assert b.b_w > 0 and b.b_h > 0
            assert 0.0 <= b.objectness <= 1.0 and 0.0 <= b.class_probs[0] <= 1.0
        z = decode_scale(tensor_create((19, 19, 18), 0.0), [(60.8, 60.8), (1, 1), (2, 2)], 32, 608)[0]
        assert abs(z.b_x - 0.5 / 19) <= 1e-12 and abs(z.b_y - 0.5 / 19) <= 1e-12
        assert abs(z.b_w - 60.8 / 608) <= 1e-12 and abs(z.b_h - 60.8 / 608) <= 1e-12


def test_6_adamw():
    with criterion(6, "AdamW zero-grad, exact decay factor, first-step closed form (1e-12), Adam equivalence over 100 steps (1e-12)", 5.0):
        base = dict(eta=0.001, beta1=0.89, beta2=0.99, epsilon=1e-9)
        theta = np.array([0.3, -1.2, 2.0])
        out, _ = adamw_step(theta, np.zeros(3), AdamWState.zeros(3), AdamWConfig(**base, weight_decay=0))
        assert np.array_equal(out, theta)
        cfg = AdamWConfig(**base, weight_decay=1e-4)
        out, _ = adamw_step(theta, np.zeros(3), AdamWState.zeros(3), cfg)
        assert np.array_equal(out, theta - 0.001 * 1e-4 * theta)
        assert np.max(np.abs(out - theta * (1 - 0.001 * 1e-4))) <= 1e-16
        out, _ = adamw_step(np.array([1.0]), np.array([0.5]), AdamWState.zeros(1),
                            AdamWConfig(**base, weight_decay=0))
        assert abs(out[0] - 0.999000000002) <= 1e-12
        rng = np.random.default_rng(6)
        theta0, grads = rng.normal(size=8), rng.normal(size=(100, 8))
        th, st = theta0, AdamWState.zeros(8)
        for gvec in grads:
            th, st = adamw_step(th, gvec, st, AdamWConfig(**base, weight_decay=0))
        assert np.max(np.abs(th - reference_adam(theta0, grads, 0.001, 0.89, 0.99, 1e-9))) <= 1e-12


def test_7_anchor_clustering():
    with criterion(7, "k-means: k=n fixed point (mean IOU 1), two-cluster recovery within +-1, non-decreasing mean IOU, seed determinism", 10.0):
        distinct = [WHBox(w, h) for w, h in [(8, 9), (20, 14), (35, 60), (90, 40), (120, 160),
                                            (15, 45), (60, 60), (300, 250), (5, 5)]]
        res = kmeans_anchors(distinct, k=9, seed=1)
        assert res.mean_iou == 1.0 and res.converged
        rng = np.random.default_rng(77)
        a, b = 10 + rng.uniform(-1, 1, (50, 2)), 100 + rng.uniform(-1, 1, (50, 2))
        res = kmeans_anchors([WHBox(*v) for v in np.vstack([a, b])], k=2, seed=3)
        small, large = res.centroids
        assert np.all(np.abs([small.w - a[:, 0].mean(), small.h - a[:, 1].mean()]) <= 1)
        assert np.all(np.abs([large.w - b[:, 0].mean(), large.h - b[:, 1].mean()]) <= 1)
        for seed in range(10):
            wh = np.exp(rng.normal(3.5, 0.9, size=(300, 2)))
            boxes = [WHBox(*v) for v in wh]
            r1 = kmeans_anchors(boxes, 9, seed=seed)
            assert all(y >= x for x, y in zip(r1.history, r1.history[1:]))
            assert r1.converged and r1.iterations <= 300
            labels, _ = _assign(wh, np.array([(c.w, c.h) for c in r1.centroids]))
            assert np.array_equal(labels, r1.labels)
            r2 = kmeans_anchors(boxes, 9, seed=seed)
            assert assign_anchors_to_scales(r1.centroids).to_line(17) == \
                assign_anchors_to_scales(r2.centroids).to_line(17)


def test_8_weight_roundtrip():
    with criterion(8, "darknet weights for the custom net round-trip bit-for-bit; one float short -> WeightCountMismatch", 5.0):
        spec = build_custom_tiny3(608, 1)
        net = random_network(spec, seed=8, header=(0, 2, 0, 32013))
        blob = save_darknet_weights(net)
        back = load_darknet_weights(spec, blob)
        for i, p in net.params.items():
            q = back.params[i]
            assert p.weights.tobytes() == q.weights.tobytes() and p.bias.tobytes() == q.bias.tobytes()
            if p.batchnorm is not None:
                for name in ("gamma", "beta", "rolling_mean", "rolling_var"):
                    assert getattr(p.batchnorm, name).tobytes() == getattr(q.batchnorm, name).tobytes()
        assert save_darknet_weights(back) == blob
        with pytest.raises(WeightCountMismatch):
            load_darknet_weights(spec, blob[:-4])


def test_9_end_to_end(tmp_path):
    with criterion(9, "cmd_detect twice on 10 synthetic PPMs is byte-identical; crafted logits land on the hand-decoded rectangle within 0.01 px"):
        spec = build_custom_tiny3(608, 1)
        weights = tmp_path / "random.weights"
        weights.write_bytes(save_darknet_weights(random_network(spec, seed=99)))
        imgs = tmp_path / "imgs"
        imgs.mkdir()
        rng = np.random.default_rng(9)
        for i in range(10):
            w, h = int(rng.integers(200, 400)), int(rng.integers(150, 300))
            pix = rng.integers(0, 256, size=(h, w, 3))
            (imgs / f"frame{i}.ppm").write_bytes(write_ppm(ImageRecord(f"frame{i}", w, h, Tensor3(pix))))
        outputs = []
        for run in ("a", "b"):
            code, _ = _cli("detect", "--weights", str(weights), "--images", str(imgs),
                           "--out", str(tmp_path / run))
            assert code == 0
            outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
        assert len(outputs[0]) == 10 and outputs[0] == outputs[1]
        assert any(outputs[0].values())

        heads = [tensor_create((19, 19, 18), -15.0), tensor_create((38, 38, 18), -15.0),
                 tensor_create((76, 76, 18), -15.0)]
        r, c, a = 40, 17, 1
        tx, ty, tw, th = -0.7, 1.1, 0.2, 0.9
        heads[2].data[r, c, a * 6:a * 6 + 6] = [tx, ty, tw, th, 6.0, 6.0]
        dets = detections_from_heads(heads, spec.anchors, 608, 0.25, 0.45, width=1280, height=720)
        assert len(dets) == 1
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        pw, ph = spec.anchors.anchors[a]
        bx, by = (sig(tx) + c) / 76, (sig(ty) + r) / 76
        bw, bh = pw * math.exp(tw) / 608, ph * math.exp(th) / 608
        want = np.array([(bx - bw / 2) * 1280, (by - bh / 2) * 720,
                         (bx + bw / 2) * 1280, (by + bh / 2) * 720])
        assert np.max(np.abs(np.array(dets[0].box) - want)) <= 0.01


def test_10_desk_scale_substitute():
    with criterion(10, "benchkit self-consistency: fps x mean latency in [0.95, 1.05] on a 100 ms stub "
                       "(reference accuracy and throughput figures need the original dataset and hardware; not reproduced)"):
        rep = time_pipeline(lambda: time.sleep(0.1), iterations=10, warmup=1)
        product = rep.fps * rep.mean_latency_ms / 1e3
        assert 0.95 <= product <= 1.05, product
        assert rep.fps == pytest.approx(10, rel=0.05)


