"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line at its pinned tolerance.

Run with ``pytest tests/test_acceptance.py -v``.  The overfit smoke test
(criterion 8) trains the tiny preset end to end and dominates the runtime.
"""
import contextlib
import sys
import time

import numpy as np
import pytest
import torch

from test_blocks import fd_check

from dmfnet import losses
from dmfnet.blocks import (DualPathMaskHead, EncoderBlock, Stcm,
                           apply_multiframe_filter)
from dmfnet.config import (BandLayout, DmfConfig, FilterConfig,
                           FrontendConfig, StcmConfig)
from dmfnet.data import (MixtureSpec, make_synthetic_corpus, realized_snr_db,
                         synthesize_pair, synthetic_voice)
from dmfnet.frontend import (ComplexSpectrogram, fuse_bands, istft,
                             split_bands, stft)
from dmfnet.metrics import lsd, si_snr, stoi
from dmfnet.model import DmfNet, full_forward, load_checkpoint
from dmfnet.train import param_hash, run_stage, stages_for


@contextlib.contextmanager
def criterion(num: int, title: str):
    """Emit one un-captured PASS/FAIL line per acceptance criterion."""
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num:2d} [{title}]: FAIL", file=sys.__stdout__,
              flush=True)
        raise
    print(f"ACCEPTANCE {num:2d} [{title}]: PASS", file=sys.__stdout__,
          flush=True)


# ---------------------------------------------------------------------------
# 1. STFT round trip
# ---------------------------------------------------------------------------

def test_criterion_1_stft_round_trip():
    with criterion(1, "stft round trip"):
        cfg = FrontendConfig.fullband()
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(48000)
            y = istft(stft(x, cfg), cfg, length=x.size)
            lo, hi = cfg.win_len_samples, x.size - cfg.win_len_samples
            err = (np.linalg.norm(y[lo:hi] - x[lo:hi])
                   / np.linalg.norm(x[lo:hi]))
            worst = max(worst, err)
        elapsed = time.perf_counter() - start
        assert worst <= 1e-6, f"round-trip relative error {worst:.3e}"
        assert elapsed < 10.0, f"round trip took {elapsed:.1f} s"


# ---------------------------------------------------------------------------
# 2. Band split / fuse identity
# ---------------------------------------------------------------------------

def test_criterion_2_split_fuse_identity():
    with criterion(2, "band split/fuse identity"):
        layout = BandLayout.default_481()
        rng = np.random.default_rng(202)
        for _ in range(100):
            t = int(rng.integers(2, 12))
            spec = ComplexSpectrogram(rng.standard_normal((t, 481))
                                      + 1j * rng.standard_normal((t, 481)))
            back = fuse_bands(*split_bands(spec, layout), layout)
            assert np.max(np.abs(back.values - spec.values)) <= 1e-12

        # overlap averaging vs a scalar accumulate-and-divide oracle
        t = 4
        bands = [rng.standard_normal((t, 161)) + 1j * rng.standard_normal((t, 161))
                 for _ in range(3)]
        fused = fuse_bands(ComplexSpectrogram(bands[0]),
                           ComplexSpectrogram(bands[1]),
                           ComplexSpectrogram(bands[2]), layout)
        ranges = (layout.low, layout.mid, layout.high)
        for ti in range(t):
            for f in range(481):
                acc, cnt = 0.0 + 0.0j, 0
                for band, (lo, hi) in zip(bands, ranges):
                    if lo <= f < hi:
                        acc += band[ti, f - lo]
                        cnt += 1
                assert abs(fused.values[ti, f] - acc / cnt) <= 1e-12


# ---------------------------------------------------------------------------
# 3. Multi-frame filter vs brute force
# ---------------------------------------------------------------------------

def test_criterion_3_multiframe_filter():
    with criterion(3, "multi-frame filter"):
        torch.manual_seed(303)
        for k in (1, 3, 5):
            cfg = FilterConfig(taps=k)
            masks = torch.randn(2, k, 7, 9, dtype=torch.float64)
            mag = torch.randn(2, 7, 9, dtype=torch.float64).abs()
            got = apply_multiframe_filter(masks, mag, cfg)
            want = torch.zeros_like(mag)
            for tau in range(k):  # offsets 0..k-1, zero-padded past
                for t in range(7):
                    for f in range(9):
                        if t - tau >= 0:
                            want[:, t, f] += masks[:, tau, t, f] * mag[:, t - tau, f]
            assert (got - want).abs().max().item() <= 1e-6

        # k = 1 with an all-ones mask is the exact identity filter
        mag = torch.randn(1, 5, 6, dtype=torch.float64).abs()
        out = apply_multiframe_filter(torch.ones(1, 1, 5, 6, dtype=torch.float64),
                                      mag, FilterConfig(taps=1))
        assert torch.equal(out, mag)


# ---------------------------------------------------------------------------
# 4. End-to-end causality (one STFT hop of tolerance at the cut)
# ---------------------------------------------------------------------------

def test_criterion_4_causality():
    with criterion(4, "causality"):
        cfg = DmfConfig.tiny()
        torch.manual_seed(404)
        model = DmfNet(cfg).eval()
        rng = np.random.default_rng(44)
        n = 24000  # 0.5 s at 48 kHz
        x = rng.standard_normal(n)
        base = full_forward(x, model, cfg)
        win = cfg.frontend.win_len_samples
        for cut in (8000, 12001, 16384):
            y = x.copy()
            y[cut:] += rng.standard_normal(n - cut)
            out = full_forward(y, model, cfg)
            # the analysis frame containing the cut reaches win - hop samples
            # back and overlap-add spreads one more hop: one window in total
            guard = cut - win
            diff = np.max(np.abs(out[:guard] - base[:guard]))
            assert diff <= 1e-6, f"cut {cut}: pre-cut change {diff:.3e}"


# ---------------------------------------------------------------------------
# 5. Gradient checks (blocks 1e-4, losses 1e-6, float64)
# ---------------------------------------------------------------------------

def test_criterion_5_gradient_checks():
    with criterion(5, "gradient checks"):
        start = time.perf_counter()
        torch.manual_seed(505)

        block = EncoderBlock(2, 4, kernel_freq=3).double()
        x = torch.randn(1, 2, 5, 9, dtype=torch.float64, requires_grad=True)
        fd_check(lambda: (block(x) ** 2).sum(), [x] + list(block.parameters()),
                 tol=1e-4)

        stcm = Stcm(4, StcmConfig(groups=1, bottleneck_channels=4),
                    dilation=2).double()
        with torch.no_grad():  # move zero biases off the PReLU kink
            for p in stcm.parameters():
                p.add_(0.05 * torch.randn_like(p))
        xs = torch.randn(1, 4, 6, dtype=torch.float64, requires_grad=True)
        fd_check(lambda: (stcm(xs) ** 2).sum(), [xs] + list(stcm.parameters()),
                 tol=1e-4)

        head = DualPathMaskHead(4).double()
        xh = torch.randn(1, 4, 5, 9, dtype=torch.float64, requires_grad=True)
        fd_check(lambda: (head(xh) ** 2).sum(), [xh] + list(head.parameters()),
                 tol=1e-4)

        est = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        tgt = torch.randn(3, 4, dtype=torch.float64)
        fd_check(lambda: losses.loss_dn(est, tgt), [est], eps=1e-6, tol=1e-6)
        fd_check(lambda: losses.loss_dr(est, tgt), [est], eps=1e-6, tol=1e-6)

        er = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        ei = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        tr = torch.randn(3, 4, dtype=torch.float64)
        ti = torch.randn(3, 4, dtype=torch.float64)
        fd_check(lambda: losses.loss_sr(er, ei, tr, ti), [er, ei],
                 eps=1e-6, tol=1e-6)

        em = torch.rand(3, 4, dtype=torch.float64, requires_grad=True)
        eh = torch.rand(3, 4, dtype=torch.float64, requires_grad=True)
        tm = torch.rand(3, 4, dtype=torch.float64)
        th = torch.rand(3, 4, dtype=torch.float64)
        fd_check(lambda: losses.loss_full(em, eh, tm, th), [em, eh],
                 eps=1e-6, tol=1e-6)

        assert time.perf_counter() - start < 300.0


# ---------------------------------------------------------------------------
# 6. Parameter counts
# ---------------------------------------------------------------------------

def test_criterion_6_parameter_counts():
    with criterion(6, "parameter counts"):
        import dataclasses

        full = DmfNet(DmfConfig.paper()).count_parameters()["total"]
        no_sr = DmfNet(dataclasses.replace(DmfConfig.paper(), use_sr_net=False)
                       ).count_parameters()["total"]
        assert abs(full - 7.84e6) / 7.84e6 <= 0.20, f"total {full}"
        assert abs(no_sr - 5.45e6) / 5.45e6 <= 0.20, f"w/o refinement {no_sr}"
        assert full - no_sr > 0


# ---------------------------------------------------------------------------
# 7. Freeze ledger
# ---------------------------------------------------------------------------

def test_criterion_7_freeze_ledger(corpus_48k, tmp_path):
    with criterion(7, "freeze ledger"):
        import dataclasses

        tiny = DmfConfig.tiny()
        cfg = dataclasses.replace(
            tiny, train=dataclasses.replace(tiny.train, max_steps_per_stage=6,
                                            validate_every=3, crop_seconds=0.5))
        stages = {s.name: s for s in stages_for(cfg)}

        torch.manual_seed(707)
        model = DmfNet(cfg)
        h_dn = param_hash(model, "dn")
        run_stage(stages["lf_dr"], model, corpus_48k, cfg, tmp_path / "dr")
        assert param_hash(model, "dn") == h_dn

        hashes = {n: param_hash(model, n) for n in ("dn", "dr", "sr")}
        run_stage(stages["full_mid_high"], model, corpus_48k, cfg,
                  tmp_path / "full")
        for n in ("dn", "dr", "sr"):
            assert param_hash(model, n) == hashes[n], f"{n} changed"


# ---------------------------------------------------------------------------
# 8. Overfit smoke test (tiny preset, 10 pairs, 200 steps per stage)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    manifest = make_synthetic_corpus(root / "corpus", num_items=10,
                                     duration_s=2.0, seed=7,
                                     snr_range=(-5.0, 0.0))
    cfg = DmfConfig.tiny()
    start = time.perf_counter()
    torch.manual_seed(cfg.train.master_seed)
    model = DmfNet(cfg)
    histories = {}
    for stage in stages_for(cfg):
        result = run_stage(stage, model, manifest, cfg, root / "runs")
        histories[stage.name] = result.history
        model, _ = load_checkpoint(result.checkpoint, cfg)
    elapsed = time.perf_counter() - start
    return cfg, model, manifest, histories, elapsed


def test_criterion_8_overfit_smoke(overfit_run):
    with criterion(8, "overfit smoke test"):
        cfg, model, manifest, histories, elapsed = overfit_run
        assert elapsed <= 1800.0, f"training took {elapsed:.0f} s"

        for name, hist in histories.items():
            assert len(hist) == 200, f"stage {name} stopped early"
            early = float(np.mean(hist[:10]))   # step-10 moving average
            late = float(np.mean(hist[-10:]))
            assert late <= 0.5 * early, \
                f"stage {name}: loss {early:.4g} -> {late:.4g}"

        noisy_db, enh_db = [], []
        for rec in manifest.records:
            pair = synthesize_pair(rec)
            enhanced = full_forward(pair.noisy, model, cfg)
            noisy_db.append(si_snr(pair.noisy, pair.target_clean))
            enh_db.append(si_snr(enhanced, pair.target_clean))
        gain = float(np.mean(enh_db) - np.mean(noisy_db))
        assert gain >= 5.0, f"SI-SNR gain {gain:.2f} dB"


def test_overfit_loss_moving_average_monotone(overfit_run):
    # 20-step moving average of the first-stage loss strictly decreases
    # over the first 100 steps of the smoke-test run
    _, _, _, histories, _ = overfit_run
    hist = histories["lf_dn"]
    ma = [float(np.mean(hist[t - 20:t])) for t in range(20, 101)]
    assert all(b < a for a, b in zip(ma, ma[1:]))


# ---------------------------------------------------------------------------
# 9. Data synthesis: SNR accuracy and byte determinism
# ---------------------------------------------------------------------------

def test_criterion_9_data_synthesis(corpus_48k):
    with criterion(9, "data synthesis"):
        rng = np.random.default_rng(909)
        cleans = [r.clean_path for r in corpus_48k.records]
        noises = [r.noise_path for r in corpus_48k.records]
        for i in range(100):
            spec = MixtureSpec(clean_path=str(rng.choice(cleans)),
                               noise_path=str(rng.choice(noises)),
                               snr_db=float(rng.uniform(-5.0, 15.0)),
                               seed=90000 + i)
            pair = synthesize_pair(spec)
            assert abs(realized_snr_db(pair) - spec.snr_db) <= 0.01
            again = synthesize_pair(spec)
            assert pair.noisy.tobytes() == again.noisy.tobytes()
            assert pair.target_clean.tobytes() == again.target_clean.tobytes()


# ---------------------------------------------------------------------------
# 10. Metric sanity
# ---------------------------------------------------------------------------

def test_criterion_10_metric_sanity():
    with criterion(10, "metric sanity"):
        rng = np.random.default_rng(1010)
        speech = synthetic_voice(3.0, 16000, rng, max_harmonic_hz=4000)
        assert stoi(speech, speech, 16000) >= 0.99

        noise = rng.standard_normal(speech.size)
        noise *= np.linalg.norm(speech) / np.linalg.norm(noise) * 10 ** (5 / 20)
        assert stoi(speech + noise, speech, 16000) < stoi(speech, speech, 16000)

        ref = rng.standard_normal(8000)
        est = ref + 0.2 * rng.standard_normal(8000)
        # binary-representable scale factors keep the samples bit-exact
        for scale in (2.0, 0.25, 512.0):
            assert si_snr(scale * est, ref) == si_snr(est, ref)

        spec = ComplexSpectrogram(rng.standard_normal((8, 33))
                                  + 1j * rng.standard_normal((8, 33)))
        assert lsd(spec, spec) == 0.0


# ---------------------------------------------------------------------------
# 11. Masking contracts
# ---------------------------------------------------------------------------

def test_criterion_11_masking_contracts():
    with criterion(11, "masking contracts"):
        cfg = DmfConfig.tiny()
        torch.manual_seed(1111)
        model = DmfNet(cfg).eval()
        bins = cfg.encoder.in_bins
        with torch.no_grad():
            for _ in range(10):  # 10 batches x 100 inputs
                mid = torch.rand(100, 6, bins) + 1e-3
                lf = torch.rand(100, 6, bins)
                high = torch.rand(100, 6, bins) + 1e-3
                g_mid = model.mf.gain(torch.stack([mid, lf], dim=1))
                est_mid = mid * g_mid
                g_high = model.hf.gain(torch.stack([high, lf, est_mid], dim=1))
                est_high = high * g_high
                for g in (g_mid, g_high):
                    assert g.min().item() > 0.0 and g.max().item() < 1.0
                assert (est_mid <= mid).all() and (est_high <= high).all()

        # mid/high phase is bitwise passthrough end to end
        rng = np.random.default_rng(11)
        wave = synthetic_voice(0.4, 48000, rng)
        _, details = full_forward(wave, model, cfg, return_details=True)
        from dmfnet import frontend as fe
        padded = np.concatenate([wave, np.zeros(cfg.frontend.hop_samples)])
        spec = fe.split_bands(fe.compress_spectrogram(
            fe.stft(padded, cfg.frontend), cfg.frontend.compression_beta), cfg.bands)
        assert np.array_equal(details.mid_phase, spec[1].phase)
        assert np.array_equal(details.high_phase, spec[2].phase)
