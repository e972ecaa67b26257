import json
from fractions import Fraction

import numpy as np
import pytest

from biounify import numerics as T
from biounify.errors import ConfigError, DimensionError
from biounify.heads import inject_lora
from biounify.model import BiosignalModel, EncoderConfig, tiny_config
from biounify.numerics import Linear, Module
from biounify.quant import QuantSpec, apply_ptq, calibrate
from biounify.sigproc import TARGET_FS, preprocess_record, segment_and_patch
from biounify.trainer import TrainConfig, pretrain
from biounify.workbench.attention import (CSV_HEADER, attention_scores, dump_attention, read_attention_csv,
                                          rows_to_csv, top_query)
from biounify.workbench.cost import (battery_days, cost_report, count_macs, count_params, linear_macs,
                                     patch_duration_ms, streaming_latency_ms)
from biounify.workbench.formats import load_checkpoint, read_bsr, read_checkpoint, save_checkpoint, write_bsr
from biounify.workbench.synth import generate_multimodal, generate_synthetic, make_pretrain_set, make_task


# -- cost accounting -----------------------------------------------------------------

class OneLinear(Module):
    def __init__(self):
        self.fc = Linear(3, 2, np.random.default_rng(0))


def test_param_count_single_linear():
    assert count_params(OneLinear()).total == 8


def test_default_config_param_budget():
    pc = count_params(BiosignalModel(EncoderConfig()))
    assert 4_900_000 <= pc.deployed <= 5_900_000
    assert pc.total == pc.trainable + pc.frozen


def test_lora_adds_closed_form():
    m = OneLinear()
    inject_lora(m, np.random.default_rng(0), rank=3, targets=["fc"])
    assert count_params(m).total == 8 + 3 * (3 + 2)


def test_linear_macs():
    assert linear_macs(5, 3, 4) == 60


@pytest.mark.parametrize("cfg", [tiny_config(), tiny_config(d_model=32, temporal_layers=2, num_classes=3)])
def test_macs_match_traced_matmuls(cfg):
    data = make_task(1, 2, window_s=2.0, seed=0)
    m = BiosignalModel(cfg)
    m.eval()
    with T.no_grad(), T.count_matmul_macs() as box:
        m.logits(data.values, data.meta)
    assert count_macs(m, data.values.shape[1], data.values.shape[2]) == box[0]


def test_macs_traced_with_lora():
    data = make_task(1, 2, window_s=1.0, seed=0)
    m = BiosignalModel(tiny_config())
    inject_lora(m, np.random.default_rng(0))
    m.eval()
    with T.no_grad(), T.count_matmul_macs() as box:
        m.logits(data.values, data.meta)
    assert count_macs(m, data.values.shape[1], data.values.shape[2]) == box[0]


def test_macs_affine_in_channels():
    cfg = EncoderConfig()
    m = [count_macs(cfg, c, 40) for c in (1, 2, 3, 4)]
    assert m[2] - 2 * m[1] + m[0] == 0
    assert m[3] - 2 * m[2] + m[1] == 0


def test_macs_quadratic_in_patches():
    cfg = EncoderConfig()
    ps = [10, 20, 40, 80]
    ys = [count_macs(cfg, 12, p) for p in ps]
    # exact quadratic through the first three points, evaluated at the fourth
    (p0, p1, p2), (y0, y1, y2) = ps[:3], ys[:3]
    pred = sum(Fraction(y) * Fraction((ps[3] - pa) * (ps[3] - pb), (p - pa) * (p - pb))
               for p, y, pa, pb in ((p0, y0, p1, p2), (p1, y1, p0, p2), (p2, y2, p0, p1)))
    assert pred == ys[3]
    assert ys[3] - 2 * ys[2] + ys[1] != 0  # genuinely quadratic


def test_latency_and_battery():
    assert patch_duration_ms() == 125.0
    assert streaming_latency_ms(325.6) == pytest.approx(450.6)
    assert streaming_latency_ms(0) == 125.0
    assert battery_days(18.8, 10) == pytest.approx(24.6, abs=0.05)
    assert battery_days(68.65, 30) == pytest.approx(20.2, abs=0.05)
    assert battery_days(4_000_000, 86400) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        streaming_latency_ms(-1)
    with pytest.raises(ValueError):
        battery_days(0, 10)


def test_cost_report_pure():
    a = cost_report(tiny_config(), 4, 2.0).as_dict()
    b = cost_report(tiny_config(), 4, 2.0).as_dict()
    assert a == b
    assert all(v >= 0 for v in a.values() if isinstance(v, (int, float)))
    q = cost_report(tiny_config(), 4, 2.0, spec=QuantSpec(4, 8))
    assert q.packed_bytes < a["packed_bytes"]


# -- synthetic signals -------------------------------------------------------------

def test_ecg_period_one_second():
    x = generate_synthetic("ECG", 20, seed=7).channels[0].samples.astype(np.float64)
    x -= x.mean()
    fs = int(TARGET_FS)
    ac = np.array([np.dot(x[:-lag], x[lag:]) for lag in range(fs // 2, 3 * fs // 2)])
    peak = fs // 2 + int(np.argmax(ac))
    assert abs(peak - fs) <= 3


def test_eeg_alpha_dominates_gamma():
    x = generate_synthetic("EEG", 30, seed=3).channels[0].samples.astype(np.float64)
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / TARGET_FS)
    band = lambda f: spec[(freqs > f - 1) & (freqs < f + 1)].mean()  # noqa: E731
    assert band(10) > band(40)


def test_synth_seeded():
    a = generate_multimodal({"EEG": 2, "ECG": 1, "PPG": 1}, 3, seed=4)
    b = generate_multimodal({"EEG": 2, "ECG": 1, "PPG": 1}, 3, seed=4)
    c = generate_multimodal({"EEG": 2, "ECG": 1, "PPG": 1}, 3, seed=5)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


# -- file formats -----------------------------------------------------------------------

def test_bsr_round_trip(tmp_path):
    rec = generate_multimodal({"EEG": 2, "ECG": 1}, 2, fs=500, seed=1)
    write_bsr(tmp_path / "a.bsr", rec)
    back = read_bsr(tmp_path / "a.bsr")
    assert np.array_equal(back.data, rec.data.astype(np.float32))
    assert back.sample_rate_hz == 500
    assert [c.label for c in back.channels] == [c.label for c in rec.channels]
    write_bsr(tmp_path / "b.bsr", back)
    for ext in ("", ".json"):
        assert (tmp_path / f"a.bsr{ext}").read_bytes() == (tmp_path / f"b.bsr{ext}").read_bytes()
    raw = (tmp_path / "a.bsr").read_bytes()
    assert len(raw) == 4 * rec.data.size
    np.testing.assert_array_equal(np.frombuffer(raw[:8], "<f4"), rec.data[0, :2].astype(np.float32))


def test_bsr_size_mismatch(tmp_path):
    rec = generate_synthetic("PPG", 1, seed=0)
    write_bsr(tmp_path / "a.bsr", rec)
    with open(tmp_path / "a.bsr", "ab") as fh:
        fh.write(b"\0\0\0\0")
    with pytest.raises(DimensionError):
        read_bsr(tmp_path / "a.bsr")


def _ckpt_bytes(path):
    return path.read_bytes(), path.with_suffix(".blob").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    m = BiosignalModel(tiny_config(seed=2))
    save_checkpoint(tmp_path / "a.ckpt", m)
    back = load_checkpoint(tmp_path / "a.ckpt")
    sa, sb = m.state_dict(), back.state_dict()
    assert sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)
    save_checkpoint(tmp_path / "b.ckpt", back)
    assert _ckpt_bytes(tmp_path / "a.ckpt") == _ckpt_bytes(tmp_path / "b.ckpt")


def test_checkpoint_lora_and_quant(tmp_path):
    data = make_task(8, 2, seed=0)
    m = BiosignalModel(tiny_config())
    inject_lora(m, np.random.default_rng(1))
    for name, p in m.named_parameters():
        if name.endswith(".lora.B"):
            p.data[:] = 0.01
    q = apply_ptq(m, QuantSpec(4, 8), calibrate(m, [(data.values, data.meta)]))
    save_checkpoint(tmp_path / "q.ckpt", q)
    back = load_checkpoint(tmp_path / "q.ckpt")
    assert back.quant_spec == QuantSpec(4, 8)
    with T.no_grad():
        q.eval()
        np.testing.assert_array_equal(q.logits(data.values, data.meta).data,
                                      back.logits(data.values, data.meta).data)
    save_checkpoint(tmp_path / "r.ckpt", back)
    assert _ckpt_bytes(tmp_path / "q.ckpt") == _ckpt_bytes(tmp_path / "r.ckpt")


def test_checkpoint_unknown_tensor_rejected(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", BiosignalModel(tiny_config()))
    manifest, _ = read_checkpoint(tmp_path / "a.ckpt")
    first = next(iter(manifest["tensors"].values()))
    manifest["tensors"]["bogus.weight"] = dict(first)
    (tmp_path / "a.ckpt").write_text(json.dumps(manifest))
    with pytest.raises((KeyError, ConfigError)):
        load_checkpoint(tmp_path / "a.ckpt")


# -- attention export -----------------------------------------------------------------

@pytest.fixture(scope="module")
def pretrained():
    m = BiosignalModel(tiny_config())
    m.retain_attn = True
    pretrain(m, make_pretrain_set(16, seed=0), TrainConfig(mode="pretrain", lr=1e-3, batch_size=8), steps=40)
    m.eval()
    return m


def test_dump_row_count_and_sums(pretrained):
    rec = generate_multimodal({"EEG": 2, "ECG": 1, "PPG": 1}, 2, seed=1)
    grid = segment_and_patch(preprocess_record(rec), 2.0)[0]
    attn = attention_scores(pretrained, grid.values, grid.meta)
    np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-6)
    rows = dump_attention(pretrained, rec)
    p, q = grid.values.shape[1], pretrained.config.num_queries
    assert len(rows) == p * q * 3
    back = read_attention_csv(rows_to_csv(rows))
    assert back == rows
    assert rows_to_csv(rows).splitlines()[0] == ",".join(CSV_HEADER)


def test_single_channel_scores_are_one(pretrained):
    rec = generate_synthetic("ECG", 1, seed=2)
    rows = dump_attention(pretrained, rec)
    assert all(s == pytest.approx(1.0, abs=1e-6) for *_, s in rows)


def test_retention_disabled():
    m = BiosignalModel(tiny_config())
    m.retain_attn = False
    with pytest.raises(ConfigError):
        dump_attention(m, generate_synthetic("ECG", 1, seed=0))


def test_top_ecg_query_stable(pretrained):
    tops = []
    for seed in (1, 2, 3):
        rec = preprocess_record(generate_multimodal({"EEG": 2, "ECG": 1, "PPG": 1}, 4, seed=seed))
        grid = segment_and_patch(rec, 4.0)[0]
        ecg = [i for i, m in enumerate(grid.meta) if m.modality == "ECG"][0]
        ptp = np.ptp(grid.values[ecg], axis=-1)
        spikes = set(np.nonzero(ptp >= np.quantile(ptp, 0.75))[0].tolist())
        rows = [r for r in dump_attention(pretrained, grid) if r[0] in spikes]
        tops.append(top_query(rows, "ECG"))
    assert len(set(tops)) == 1


def test_dump_is_deterministic(pretrained):
    rec = generate_multimodal({"EEG": 1, "ECG": 1}, 2, seed=9)
    assert dump_attention(pretrained, rec) == dump_attention(pretrained, rec)
