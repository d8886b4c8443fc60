import numpy as np
import pytest
from scipy.signal import resample_poly

from dmfnet.data import synthetic_voice
from dmfnet.frontend import ComplexSpectrogram
from dmfnet.metrics import MetricError, lsd, si_snr, stoi


# ---------------------------------------------------------------------------
# Independent loop-based STOI oracle (kept deliberately separate from the
# package implementation: own framing, own band edges, scalar loops).
# ---------------------------------------------------------------------------

def stoi_oracle(est, ref, fs):
    if fs != 10000:
        est = resample_poly(est, 10000, fs)
        ref = resample_poly(ref, 10000, fs)
    win = np.hanning(256 + 2)[1:-1]  # symmetric hann(256) without zero endpoints

    def frame(sig):
        out = []
        for start in range(0, len(sig) - 256 + 1, 128):
            out.append(sig[start:start + 256] * win)
        return np.array(out)

    rf, ef = frame(ref), frame(est)
    energies = [20 * np.log10(np.linalg.norm(f) + 1e-16) for f in rf]
    thr = max(energies) - 40.0
    keep = [i for i, e in enumerate(energies) if e > thr]

    def ola(frames, keep):
        sig = np.zeros((len(keep) - 1) * 128 + 256)
        for j, i in enumerate(keep):
            sig[j * 128:j * 128 + 256] += frames[i]
        return sig

    ref2, est2 = ola(rf, keep), ola(ef, keep)

    freqs = np.linspace(0, 5000, 257)
    bands = []
    for k in range(15):
        cf = 150.0 * 2 ** (k / 3.0)
        lo, hi = cf * 2 ** (-1 / 6), cf * 2 ** (1 / 6)
        lo_i = int(np.argmin((freqs - lo) ** 2))
        hi_i = int(np.argmin((freqs - hi) ** 2))
        bands.append((lo_i, hi_i))

    def tf_units(sig):
        frames = frame(sig)
        spec = np.abs(np.fft.rfft(frames, n=512, axis=1)) ** 2
        out = np.zeros((len(frames), 15))
        for m in range(len(frames)):
            for j, (lo_i, hi_i) in enumerate(bands):
                out[m, j] = np.sqrt(np.sum(spec[m, lo_i:hi_i]))
        return out

    X, Y = tf_units(ref2), tf_units(est2)
    N = 30
    scores = []
    for m in range(N, X.shape[0] + 1):
        for j in range(15):
            x = X[m - N:m, j]
            y = Y[m - N:m, j]
            alpha = np.sqrt(np.sum(x ** 2) / (np.sum(y ** 2) + 1e-300))
            yc = np.minimum(alpha * y, x * (1 + 10 ** (15 / 20)))
            xm, ym = x - x.mean(), yc - yc.mean()
            denom = np.linalg.norm(xm) * np.linalg.norm(ym)
            scores.append(np.sum(xm * ym) / (denom + 1e-300))
    return float(np.mean(scores))


@pytest.fixture(scope="module")
def speech():
    return synthetic_voice(3.0, 16000, np.random.default_rng(0), max_harmonic_hz=4000)


class TestSiSnr:
    def test_perfect_reconstruction_hits_cap(self, rng):
        x = rng.standard_normal(8000)
        assert si_snr(x, x) == 60.0

    def test_scale_invariance_exact(self, rng):
        ref = rng.standard_normal(8000)
        est = ref + 0.1 * rng.standard_normal(8000)
        assert si_snr(2.0 * est, ref) == si_snr(est, ref)
        assert si_snr(0.3 * est, ref) == si_snr(est, ref)

    def test_orthogonal_noise_power_ratio(self, rng):
        ref = rng.standard_normal(16000)
        ref -= ref.mean()
        noise = rng.standard_normal(16000)
        noise -= noise.mean()
        noise -= (noise @ ref) / (ref @ ref) * ref  # orthogonalize
        noise *= np.linalg.norm(ref) / np.linalg.norm(noise) / np.sqrt(10.0)
        assert si_snr(ref + noise, ref) == pytest.approx(10.0, abs=0.1)

    def test_zero_reference_rejected(self):
        with pytest.raises(MetricError):
            si_snr(np.ones(100), np.zeros(100))

    def test_inputs_not_mutated(self, rng):
        ref = rng.standard_normal(1000) + 1.0
        est = ref.copy() + 0.1
        ref0, est0 = ref.copy(), est.copy()
        si_snr(est, ref)
        assert np.array_equal(ref, ref0) and np.array_equal(est, est0)


class TestStoi:
    def test_self_similarity(self, speech):
        assert stoi(speech, speech, 16000) >= 0.99

    def test_noise_lowers_score(self, speech, rng):
        noise = rng.standard_normal(speech.size)
        noise *= np.linalg.norm(speech) / np.linalg.norm(noise) * 10 ** (5 / 20)
        noisy = speech + noise  # -5 dB SNR
        assert stoi(noisy, speech, 16000) < stoi(speech, speech, 16000)

    def test_matches_independent_oracle(self, speech, rng):
        noise = rng.standard_normal(speech.size)
        noise *= np.linalg.norm(speech) / np.linalg.norm(noise) * 10 ** (-2 / 20)
        noisy = speech + noise
        got = stoi(noisy, speech, 16000)
        want = stoi_oracle(noisy, speech, 16000)
        assert abs(got - want) <= 0.01

    def test_short_clip_rejected(self, rng):
        x = rng.standard_normal(1000)
        with pytest.raises(MetricError):
            stoi(x, x, 10000)

    def test_extended_variant_self_similarity(self, speech):
        assert stoi(speech, speech, 16000, extended=True) >= 0.99


class TestLsd:
    def test_identical_spectra(self, rng):
        spec = ComplexSpectrogram(rng.standard_normal((10, 33))
                                  + 1j * rng.standard_normal((10, 33)))
        assert lsd(spec, spec) == 0.0

    def test_power_scale_identity(self, rng):
        ref = np.abs(rng.standard_normal((5, 16))) + 0.1
        est = ref * np.sqrt(10.0)  # 10 dB everywhere in power
        assert lsd(est, ref) == pytest.approx(10.0, abs=1e-9)

    def test_matches_scalar_oracle(self, rng):
        est = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        ref = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        total = 0.0
        for t in range(4):
            acc = 0.0
            for f in range(6):
                d = 20 * (np.log10(abs(est[t, f]) + 1e-12)
                          - np.log10(abs(ref[t, f]) + 1e-12))
                acc += d * d
            total += np.sqrt(acc / 6)
        assert abs(lsd(est, ref) - total / 4) <= 1e-9

    def test_band_restriction(self, rng):
        ref = np.abs(rng.standard_normal((5, 10))) + 0.1
        est = ref.copy()
        est[:, 5:] *= 10.0
        assert lsd(est, ref, bins=(0, 5)) == pytest.approx(0.0, abs=1e-9)
        assert lsd(est, ref, bins=(5, 10)) == pytest.approx(20.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            lsd(np.zeros((2, 3)), np.zeros((3, 2)))
