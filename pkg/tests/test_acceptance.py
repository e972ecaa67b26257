"""Acceptance criteria 1-13.

Each test prints one ``CRITERION n ... PASS|FAIL`` line; the lines are also
repeated in the pytest terminal summary. Run alone with
``python3 -m pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import contextlib
import copy
import math
import sys
import time

import numpy as np
import pytest

from biounify import numerics as T
from biounify import sigproc as S
from biounify.heads import inject_lora, masked_mse
from biounify.metrics import balanced_accuracy, binary_auroc, cohen_kappa, weighted_f1
from biounify.model import BiosignalModel, EncoderConfig, tiny_config
from biounify.numerics import Conv1d, Linear, MultiHeadAttention, Tensor
from biounify.quant import QuantSpec, apply_ptq, calibrate, grid, packed_size_report, qat_finetune, qdq
from biounify.sigproc import FilterSpec
from biounify.trainer import (AdamW, cross_entropy, evaluate, pretrain_loss, pretrain_step, predict_scores,
                              set_trainable)
from biounify.workbench.cost import battery_days, count_macs, count_params, streaming_latency_ms
from biounify.workbench.formats import load_checkpoint, read_bsr, save_checkpoint, write_bsr
from biounify.workbench.synth import generate_multimodal, make_pretrain_set

from gradcheck import check_grad, check_param_grad
from oracles import (brute_auroc, brute_balanced_accuracy, brute_kappa, brute_weighted_f1,
                     butterworth_bandpass_gain, notch_gain, sine_amplitude)

RESULTS = []


@contextlib.contextmanager
def criterion(n, title, budget_s=None):
    start = time.perf_counter()
    status = "FAIL"
    info = {}
    try:
        yield info
        elapsed = time.perf_counter() - start + info.get("setup_s", 0.0)
        if budget_s is not None:
            assert elapsed < budget_s, f"runtime {elapsed:.1f} s over budget {budget_s} s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start + info.get("setup_s", 0.0)
        line = f"CRITERION {n:2d} {title}: {status} ({elapsed:.1f} s)"
        RESULTS.append(line)
        print(line)


# 1 -------------------------------------------------------------------------

def _op_cases(rng):
    r = lambda *s: rng.uniform(-1, 1, s)  # noqa: E731
    mask = rng.random((3, 4)) > 0.5
    lin, conv, mha = Linear(5, 3, rng), Conv1d(2, 3, 5, rng, stride=2, padding=2), MultiHeadAttention(8, 2, rng)
    x34 = np.where(np.abs(r(3, 4)) < 0.05, 0.5, r(3, 4))
    w34 = r(3, 4)
    unary = [T.neg, T.exp, T.tanh, T.sigmoid, T.gelu, T.relu, lambda t: T.softmax(t, axis=-1),
             lambda t: T.log_softmax(t, axis=0), lambda t: T.power(t, 3), lambda t: t[1:, ::2] * 1.0,
             lambda t: T.broadcast_to(t, (2, 3, 4)), lambda t: T.reshape(t, (4, 3)),
             lambda t: T.transpose(t), lambda t: T.mean(t, axis=0), lambda t: T.sum_(t, axis=1)]
    cases = []
    for op in unary:
        w = r(*op(Tensor(x34)).shape)
        cases.append((lambda t, op=op, w=w: T.sum_(op(t) * Tensor(w)), [x34]))
    w53, w223, w46, w317 = r(5, 3), r(2, 2, 3), r(4, 6), r(3, 17)
    target, keep = r(2, 3, 4, 32), rng.random((2, 3, 4)) > 0.5
    cases += [
        (lambda t: T.sum_(T.log(t) + T.sqrt(t)), [rng.uniform(0.5, 2, (3, 4))]),
        (lambda a, b: T.sum_((a + b) * (a - b) * Tensor(w34)), [r(3, 4), r(1, 4)]),
        (lambda a, b: T.sum_(T.div(a, b) * Tensor(w34)), [r(3, 4), r(1, 4) + 3]),
        (lambda a, b: T.sum_(T.where(mask, a, b) * Tensor(w34)), [r(3, 4), r(3, 4)]),
        (lambda a, b: T.sum_(T.tanh(T.matmul(a, b))), [r(2, 3, 4), r(4, 5)]),
        (lambda a, b: T.sum_(T.concat([a, b], 0) * Tensor(w53)), [r(2, 3), r(3, 3)]),
        (lambda a, b: T.sum_(T.stack([a, b], 1) * Tensor(w223)), [r(2, 3), r(2, 3)]),
        (lambda x, g, b: T.sum_(T.layer_norm(x, g, b) * Tensor(w46)), [r(4, 6), r(6) + 1, r(6)]),
        (lambda x: T.sum_(T.rfft_mag(x) * Tensor(w317)), [r(3, 32)]),
        (lambda x: T.sum_(T.dropout(x, 0.3, np.random.default_rng(3)) ** 2), [r(4, 5)]),
        (lambda x: T.sum_(T.tanh(lin(x))), [r(4, 5)]),
        (lambda x: T.sum_(T.tanh(conv(x))), [r(3, 2, 16)]),
        (lambda q, kv: T.sum_(T.tanh(mha(q, kv))), [r(2, 3, 8), r(2, 5, 8)]),
        (lambda z: cross_entropy(z, np.array([0, 2, 1])), [r(3, 4)]),
        (lambda p: masked_mse(p, target, keep), [r(2, 3, 4, 32)]),
    ]
    return cases


def test_c01_gradient_integrity():
    with criterion(1, "gradient integrity", budget_s=120):
        rng = np.random.default_rng(0)
        with T.default_dtype(np.float64):
            for build, arrays in _op_cases(rng):
                check_grad(build, arrays)
            model = BiosignalModel(tiny_config(d_model=16, temporal_layers=1, dtype="float64"))
            values = rng.standard_normal((1, 3, 10, 32))
            meta = generate_grid_meta({"EEG": 1, "ECG": 1, "PPG": 1})
            params = [p for n, p in model.named_parameters() if model.group_of(n) != "head"]
            check_param_grad(lambda: pretrain_loss(model, values, meta, 0.5, 7), params, max_entries=8, rng=rng)


def generate_grid_meta(layout, seconds=1.25):
    rec = generate_multimodal(layout, seconds, seed=0)
    return S.segment_and_patch(rec, seconds)[0].meta


# 2 -------------------------------------------------------------------------

def test_c02_permutation_invariance():
    with criterion(2, "channel-permutation invariance", budget_s=60):
        rng = np.random.default_rng(1)
        model = BiosignalModel(tiny_config(dtype="float64"))
        pool = generate_grid_meta({"EEG": 3, "ECG": 2, "PPG": 1})
        with T.no_grad():
            for _ in range(50):
                c = int(rng.integers(2, 7))
                idx = rng.choice(len(pool), c, replace=False)
                meta = [pool[i] for i in idx]
                values = rng.standard_normal((1, c, 8, 32))
                perm = rng.permutation(c)
                a = model.unifier(model.embed(values, meta))
                b = model.unifier(model.embed(values[:, perm], [meta[j] for j in perm]))
                rel = np.linalg.norm(b.values.data - a.values.data) / np.linalg.norm(a.values.data)
                assert rel < 1e-5
                np.testing.assert_allclose(b.attn, a.attn[..., perm], rtol=1e-12, atol=1e-15)


# 3 -------------------------------------------------------------------------

def test_c03_missing_modality(trained_model, task_data, tmp_path):
    with criterion(3, "missing-modality robustness"):
        _, _, test = task_data
        save_checkpoint(tmp_path / "m.ckpt", trained_model)
        model = load_checkpoint(tmp_path / "m.ckpt")
        assert {m.modality for m in test.meta} == {"EEG", "ECG", "PPG"}
        for subset in (["EEG"], ["ECG"], ["EEG", "ECG"]):
            data = test.select_modalities(subset)
            assert {m.modality for m in data.meta} == set(subset)
            with T.no_grad():
                logits = model.logits(data.values, data.meta).data
            assert np.all(np.isfinite(logits))
            bundle = evaluate(model, data)
            assert bundle.is_valid(), (subset, bundle)


# 4 -------------------------------------------------------------------------

def _overfit_curve():
    data = make_pretrain_set(8, seed=0)
    model = BiosignalModel(tiny_config())
    trainable = set_trainable(model, "pretrain")
    opt = AdamW([p for _, p in trainable], lr=3e-3, weight_decay=0.0)
    # one fixed batch and one fixed mask plan: the classic overfit-one-batch probe
    return [pretrain_step(model, opt, data.values, data.meta, 0.5, 7) for _ in range(200)]


def test_c04_pretraining_sanity():
    with criterion(4, "pretraining sanity", budget_s=600):
        a = _overfit_curve()
        assert all(math.isfinite(v) and v > 0 for v in a)
        assert min(a) < 0.5 * a[0], f"best loss {min(a):.4f} vs initial {a[0]:.4f}"
        assert _overfit_curve() == a


# 5 + 6 --------------------------------------------------------------------

SPECS = [(8, 8), (4, 8), (2, 8), (4, 4)]
TIE = 0.005


@pytest.fixture(scope="module")
def quant_results(trained_model, task_data):
    train, val, test = task_data
    before = copy.deepcopy(trained_model.state_dict())
    stats = calibrate(trained_model, [(train.values[:64], train.meta)])
    fp32 = evaluate(trained_model, test).balanced_accuracy
    start = time.perf_counter()
    out = {}
    for w, a in SPECS:
        spec = QuantSpec(w, a)
        ptq = evaluate(apply_ptq(trained_model, spec, stats), test).balanced_accuracy
        qat_model = qat_finetune(trained_model, spec, train, val, stats, epochs=5, lr=3e-4, batch_size=16)
        out[(w, a)] = (ptq, evaluate(qat_model, test).balanced_accuracy)
    assert all(np.array_equal(v, before[k]) for k, v in trained_model.state_dict().items())
    return fp32, out, time.perf_counter() - start


def test_c05_quantization_ordering(quant_results):
    with criterion(5, "quantization ordering") as info:
        fp32, res, info["setup_s"] = quant_results
        for spec, (ptq, qat) in res.items():
            print(f"    W{spec[0]}A{spec[1]}: PTQ {ptq:.4f}  QAT {qat:.4f}  (FP32 {fp32:.4f})")
            assert qat >= ptq - TIE, spec
        assert res[(8, 8)][0] >= res[(2, 8)][0] - TIE


def test_c06_qat_recovery(quant_results):
    with criterion(6, "QAT recovery", budget_s=900) as info:
        fp32, res, info["setup_s"] = quant_results
        assert res[(8, 8)][1] >= 0.96 * fp32


# 7 -------------------------------------------------------------------------

def test_c07_storage_factor():
    with criterion(7, "storage factor"):
        model = BiosignalModel(EncoderConfig())
        r2 = packed_size_report(model, QuantSpec(2, 8))
        assert r2.total <= r2.fp32_bytes / 12
        r8 = packed_size_report(model, QuantSpec(8, 8))
        assert r8.quantized_fp32_bytes == 4 * r8.packed_weight_bytes


# 8 -------------------------------------------------------------------------

def test_c08_fake_quant_contract():
    with criterion(8, "fake-quant contract"):
        rng = np.random.default_rng(8)
        for bits in (2, 4, 8):
            scale = 0.013
            qmin, qmax = grid(bits)
            x = rng.uniform(qmin * scale, qmax * scale, 1_000_000)
            y = qdq(x, bits, scale).data
            assert np.abs(x - y).max() <= scale / 2 + 1e-12
            assert np.array_equal(qdq(y, bits, scale).data, y)
        lo_s, hi_s = 0.1 * -7, 0.1 * 7
        x = Tensor(np.array([lo_s - 0.01, lo_s + 0.01, 0.0, hi_s - 0.01, hi_s + 0.01]), requires_grad=True)
        T.backward(T.sum_(qdq(x, 4, 0.1)))
        assert x.grad.tolist() == [0.0, 1.0, 1.0, 1.0, 0.0]
        assert qdq(np.zeros(3), 8, 0.5).data.tolist() == [0.0, 0.0, 0.0]


# 9 -------------------------------------------------------------------------

def test_c09_cost_arithmetic():
    with criterion(9, "cost arithmetic"):
        assert streaming_latency_ms(325.6) == pytest.approx(450.6, abs=1e-9)
        assert 24 <= battery_days(18.8, 10) <= 25.5
        assert 19.5 <= battery_days(68.65, 30) <= 21
        m = [count_macs(EncoderConfig(), c, 80) for c in (1, 2, 3, 4)]
        assert m[2] - 2 * m[1] + m[0] == 0 and m[3] - 2 * m[2] + m[1] == 0


# 10 ------------------------------------------------------------------------

def closed_form_params(cfg, n_sensor_rows=3):
    d, f, q, k = cfg.d_model, cfg.ffn_dim, cfg.num_queries, cfg.num_classes
    c1, c2 = cfg.conv_channels
    ln, attn, ffn = 2 * d, 4 * (d * d + d), 2 * d * f + f + d
    l2 = 8  # 32 samples after two stride-2 convolutions
    embed = d + (7 * c1 + c1) + (5 * c2 * c1 + c2) + (d * (c2 * l2 + 17) + d) + n_sensor_rows * d
    unifier = q * d + cfg.unify_depth * ((2 * ln + attn) + (2 * ln + attn + ffn))
    temporal = cfg.temporal_layers * (2 * ln + attn + ffn)
    decoder = d + n_sensor_rows * d + 3 * ln + attn + ffn + (32 * d + 32)
    head = d + 2 * ln + attn + d * k + k
    return embed + unifier + temporal + ln + head, decoder


def test_c10_parameter_budget():
    with criterion(10, "parameter budget"):
        pc = count_params(BiosignalModel(EncoderConfig()))
        assert 4_900_000 <= pc.deployed <= 5_900_000, pc.deployed
        toy = tiny_config(temporal_layers=2)
        deployed, decoder = closed_form_params(toy)
        got = count_params(BiosignalModel(toy))
        assert got.deployed == deployed and got.total == deployed + decoder
        deployed, _ = closed_form_params(EncoderConfig())
        assert pc.deployed == deployed


# 11 ------------------------------------------------------------------------

PROBES = {
    "EEG": (256.0, [0.05, 0.2, 10.0, 70.0, 85.0]),
    "ECG": (500.0, [0.3, 1.0, 25.0, 110.0, 140.0]),
    "PPG": (256.0, [0.3, 1.0, 3.0, 8.0, 12.0]),
}


def _steady_gain(y, f, fs):
    k = len(y) // 4
    return sine_amplitude(y[k:-k], f, fs)


def test_c11_dsp_oracles():
    with criterion(11, "DSP oracles"):
        db = lambda g: 20 * math.log10(g)  # noqa: E731
        for mod, (fs, freqs) in PROBES.items():
            spec = FilterSpec.for_modality(mod, fs)
            for f in freqs:
                t = np.arange(int(max(60.0, 40.0 / f) * fs)) / fs
                y = S.bandpass_filter(np.sin(2 * np.pi * f * t), spec)
                want = butterworth_bandpass_gain(f, spec.order, spec.low_hz, spec.high_hz, fs) ** 2
                assert abs(db(_steady_gain(y, f, fs)) - db(want)) < 1.0, (mod, f)
        for mains, fs in ((50.0, 256.0), (60.0, 500.0)):
            for f in (mains - 10, mains - 1, mains + 0.8, mains + 2, mains + 15):
                t = np.arange(int(60 * fs)) / fs
                y = S.notch_filter(np.sin(2 * np.pi * f * t), mains, fs)
                want = notch_gain(f, mains, S.NOTCH_Q, fs) ** 2
                assert abs(db(_steady_gain(y, f, fs)) - db(want)) < 1.0, (mains, f)
        for src in (125.0, 250.0, 360.0, 500.0, 1000.0):
            for f in (1.0, 7.5, 30.0):
                x = np.sin(2 * np.pi * f * np.arange(int(10 * src)) / src)
                y = S.resample(x, src)
                ref = np.sin(2 * np.pi * f * np.arange(len(y)) / S.TARGET_FS)
                assert np.corrcoef(y, ref)[0, 1] > 0.999, (src, f)


# 12 ------------------------------------------------------------------------

def test_c12_metrics_oracle():
    with criterion(12, "metrics oracle"):
        rng = np.random.default_rng(12)
        done = 0
        while done < 200:
            k, m = int(rng.integers(2, 5)), int(rng.integers(4, 25))
            labels, preds = rng.integers(k, size=m), rng.integers(k, size=m)
            if len(set(labels.tolist())) < 2 or len(set(preds.tolist())) < 2:
                continue
            l, p = labels.tolist(), preds.tolist()
            assert balanced_accuracy(labels, preds, k) == pytest.approx(brute_balanced_accuracy(l, p, k), abs=1e-12)
            assert cohen_kappa(labels, preds, k) == pytest.approx(brute_kappa(l, p, k), abs=1e-12)
            assert weighted_f1(labels, preds, k) == pytest.approx(brute_weighted_f1(l, p, k), abs=1e-12)
            y = labels == labels[0]
            s = rng.integers(0, 5, size=m) / 4.0 if done % 2 else rng.random(m)
            assert abs(binary_auroc(y, s) - brute_auroc(y.tolist(), s.tolist())) < 1e-9
            done += 1
        hand_l, hand_p = [0, 0, 0, 1, 1, 1], [0, 0, 1, 0, 1, 1]
        assert cohen_kappa(hand_l, hand_p) == pytest.approx(1 / 3, abs=1e-15)


# 13 ------------------------------------------------------------------------

def _files(*paths):
    return [p.read_bytes() for p in paths]


def test_c13_format_round_trips(tmp_path):
    with criterion(13, "format round-trips"):
        rng = np.random.default_rng(13)
        for i in range(20):
            layout = {m: int(rng.integers(0, 3)) for m in S.MODALITIES}
            layout = {m: c for m, c in layout.items() if c} or {"ECG": 1}
            rec = generate_multimodal(layout, float(rng.uniform(0.5, 3)), fs=float(rng.choice([128, 256, 500])),
                                      seed=int(rng.integers(1 << 30)))
            a, b = tmp_path / f"a{i}.bsr", tmp_path / f"b{i}.bsr"
            write_bsr(a, rec)
            write_bsr(b, read_bsr(a))
            assert _files(a, a.with_suffix(".bsr.json")) == _files(b, b.with_suffix(".bsr.json"))

        data = S.segment_and_patch(S.preprocess_record(generate_multimodal({"EEG": 1, "ECG": 1}, 2, seed=0)), 1.0)
        values = np.stack([g.values for g in data]).astype(np.float32)
        meta = data[0].meta
        for i in range(20):
            cfg = tiny_config(d_model=int(rng.choice([8, 16])), temporal_layers=int(rng.integers(0, 3)),
                              num_classes=int(rng.integers(2, 5)), seed=i)
            model = BiosignalModel(cfg)
            if i % 3 == 1:
                inject_lora(model, rng, rank=int(rng.integers(1, 4)))
            if i % 2 == 0:
                w, act = [(8, 8), (4, 8), (2, 8), (4, 4)][(i // 2) % 4]
                model = apply_ptq(model, QuantSpec(w, act), calibrate(model, [(values, meta)]))
            a, b = tmp_path / f"a{i}.ckpt", tmp_path / f"b{i}.ckpt"
            save_checkpoint(a, model)
            save_checkpoint(b, load_checkpoint(a))
            assert _files(a, a.with_suffix(".blob")) == _files(b, b.with_suffix(".blob"))
            if i % 2 == 0:
                assert load_checkpoint(b).quant_spec == model.quant_spec
                np.testing.assert_array_equal(predict_scores(load_checkpoint(a), _scored(values, meta)),
                                              predict_scores(model, _scored(values, meta)))


def _scored(values, meta):
    from biounify.trainer import Dataset
    return Dataset(values, None, meta)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
