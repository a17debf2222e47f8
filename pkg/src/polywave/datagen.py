"""Deterministic synthetic stand-ins for the note, digit and denoising corpora."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import WindowSpec, add_awgn, read_signal, slide, write_signal


def _default_fundamentals(n: int) -> tuple[float, ...]:
    # minor-third spacing from A3 keeps neighbouring classes ~19% apart
    return tuple(220.0 * 2.0 ** (3 * c / 12) for c in range(n))


@dataclass(frozen=True)
class ToneSpec:
    n_classes: int = 8
    fundamentals: tuple[float, ...] = field(default_factory=lambda: _default_fundamentals(8))
    harmonics: tuple[float, ...] = (1.0, 0.5, 0.3, 0.15)
    attack: float = 0.02
    decay: float = 0.04
    sustain: float = 0.7
    release: float = 0.04
    sample_rate: int = 16000
    duration: float = 0.2
    detune: float = 0.01
    jitter: float = 0.05

    def __post_init__(self):
        if len(self.fundamentals) != self.n_classes:
            raise ValueError("need one fundamental per class")
        if len(set(self.fundamentals)) != self.n_classes:
            raise ValueError("fundamentals must be distinct")

    @property
    def length(self) -> int:
        return int(round(self.duration * self.sample_rate))


def adsr(n: int, sr: int, attack: float, decay: float, sustain: float, release: float) -> np.ndarray:
    t = np.arange(n) / sr
    total = n / sr
    env = np.full(n, sustain)
    a = t < attack
    env[a] = t[a] / attack
    d = (t >= attack) & (t < attack + decay)
    env[d] = 1.0 - (1.0 - sustain) * (t[d] - attack) / decay
    r = t >= total - release
    env[r] = np.minimum(env[r], sustain * (total - t[r]) / release)
    return env


@dataclass
class LabeledSignals:
    signals: np.ndarray  # (count, samples)
    labels: np.ndarray  # (count,)
    sample_rate: int


def gen_tones(spec: ToneSpec, n_per_class: int, seed: int) -> LabeledSignals:
    """Enveloped harmonic stacks, ``n_per_class`` per class, detuned and amplitude-jittered."""
    rng = np.random.default_rng(seed)
    n = spec.length
    t = np.arange(n) / spec.sample_rate
    env = adsr(n, spec.sample_rate, spec.attack, spec.decay, spec.sustain, spec.release)
    signals = np.empty((spec.n_classes * n_per_class, n))
    labels = np.repeat(np.arange(spec.n_classes), n_per_class)
    for row, c in enumerate(labels):
        f0 = spec.fundamentals[c] * (1.0 + spec.detune * rng.uniform(-1.0, 1.0))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=len(spec.harmonics))
        s = sum(a * np.sin(2.0 * np.pi * (h + 1) * f0 * t + p)
                for h, (a, p) in enumerate(zip(spec.harmonics, phases)))
        s = s * env * (1.0 + spec.jitter * rng.standard_normal(n))
        signals[row] = s * (rng.uniform(0.5, 1.0) / np.max(np.abs(s)))
    return LabeledSignals(signals, labels, spec.sample_rate)


def windowed_classification_set(data: LabeledSignals, wspec: WindowSpec, n_classes: int):
    """Tapered windows ``(count, 1, w)``, one-hot targets and the source-signal id of each window."""
    xs, ys, groups = [], [], []
    for i, (sig, lab) in enumerate(zip(data.signals, data.labels)):
        wins, _ = slide(sig, wspec)
        xs.append(wins)
        ys.extend([lab] * len(wins))
        groups.extend([i] * len(wins))
    x = np.concatenate(xs)[:, None, :]
    y = np.eye(n_classes)[np.asarray(ys)]
    return x, y, np.asarray(groups)


def am_mixture(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """2-4 amplitude-modulated sinusoids in 100-1000 Hz, peak-normalized into [0.5, 0.95]."""
    t = np.arange(n) / sample_rate
    s = np.zeros(n)
    for _ in range(rng.integers(2, 5)):
        carrier = rng.uniform(100.0, 1000.0)
        mod_rate = rng.uniform(2.0, 8.0)
        depth = rng.uniform(0.3, 0.9)
        amp = rng.uniform(0.3, 1.0)
        s += (amp * (1.0 + depth * np.sin(2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi)))
              * np.sin(2 * np.pi * carrier * t + rng.uniform(0, 2 * np.pi)))
    peak = np.max(np.abs(s))
    return s * (rng.uniform(0.5, 0.95) / peak)


def gen_denoise_pairs(n: int, length: int, seed: int, snr_db: float, sample_rate: int = 16000):
    """``n`` clean AM mixtures of ``length`` samples and their AWGN-corrupted copies."""
    rng = np.random.default_rng(seed)
    clean = np.stack([am_mixture(length, sample_rate, rng) for _ in range(n)])
    noisy = np.stack([add_awgn(c, snr_db, rng) for c in clean])
    return clean, noisy


def denoise_training_set(n: int, wspec: WindowSpec, seed: int, snr_db: float, sample_rate: int = 16000):
    """Tapered (noisy, clean) window pairs shaped ``(n, 1, w)`` for training a window denoiser."""
    clean, noisy = gen_denoise_pairs(n, wspec.length, seed, snr_db, sample_rate)
    taper = wspec.taper()[None, :]
    return (noisy * taper)[:, None, :], (clean * taper)[:, None, :]


def dominant_frequency(x, sample_rate: int) -> float:
    spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=8 * len(x)))
    return float(np.argmax(spectrum) * sample_rate / (8 * len(x)))


def nearest_peak_classify(signals, spec: ToneSpec) -> np.ndarray:
    """Baseline classifier: the class whose fundamental is closest to the spectral peak."""
    f = np.array([dominant_frequency(s, spec.sample_rate) for s in signals])
    fund = np.asarray(spec.fundamentals)
    return np.argmin(np.abs(np.log(f[:, None] / fund[None, :])), axis=1)


# dataset directories ----------------------------------------------------------
#
# A dataset is a directory holding ``dataset.json`` (kind, count, length,
# sample rate, generator settings), one headerless float64 array per signal
# set with its ``.rate`` sidecar, and for labelled sets ``labels.txt`` with
# one class index per line.

def write_tone_dataset(path, data: LabeledSignals, n_classes: int, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_signal(path / "signals.f8", data.signals.ravel(), data.sample_rate)
    (path / "labels.txt").write_text("".join(f"{int(c)}\n" for c in data.labels))
    info = {"kind": "tones", "count": int(data.signals.shape[0]), "length": int(data.signals.shape[1]),
            "sample_rate": int(data.sample_rate), "n_classes": int(n_classes), **(meta or {})}
    (path / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return path


def write_denoise_dataset(path, clean, noisy, sample_rate: int, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_signal(path / "clean.f8", np.asarray(clean).ravel(), sample_rate)
    write_signal(path / "noisy.f8", np.asarray(noisy).ravel(), sample_rate)
    info = {"kind": "denoise", "count": int(clean.shape[0]), "length": int(clean.shape[1]),
            "sample_rate": int(sample_rate), **(meta or {})}
    (path / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> dict:
    """Load a dataset directory into a dict of arrays plus its ``dataset.json`` fields."""
    path = Path(path)
    info = json.loads((path / "dataset.json").read_text())
    shape = (info["count"], info["length"])
    if info["kind"] == "tones":
        signals, _ = read_signal(path / "signals.f8")
        labels = np.array([int(v) for v in (path / "labels.txt").read_text().split()])
        if labels.size != info["count"]:
            raise ValueError(f"{path}: {labels.size} labels for {info['count']} signals")
        return {**info, "signals": signals.reshape(shape), "labels": labels}
    if info["kind"] == "denoise":
        clean, _ = read_signal(path / "clean.f8")
        noisy, _ = read_signal(path / "noisy.f8")
        return {**info, "clean": clean.reshape(shape), "noisy": noisy.reshape(shape)}
    raise ValueError(f"{path}: unknown dataset kind {info['kind']!r}")
