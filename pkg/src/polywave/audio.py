"""Sliding windows, signal metrics, noise corruption and the windowed end-to-end denoiser."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

SNR_FLOOR = -10.0
SNR_CEILING = 35.0
SEGMENT_LEN = 160
# absorbs float error in (1 - alpha) * w, e.g. (1 - 0.9) * 4000 = 399.99999999999994
_INDEX_EPS = 1e-9


@dataclass(frozen=True)
class WindowSpec:
    length: int
    overlap: float = 0.5
    window_fn: str = "hamming"

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("window length must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if self.window_fn not in ("hamming", "rectangular"):
            raise ValueError(f"unknown window function {self.window_fn!r}")

    @property
    def hop(self) -> float:
        return (1.0 - self.overlap) * self.length

    def taper(self) -> np.ndarray:
        return hamming(self.length) if self.window_fn == "hamming" else np.ones(self.length)


def hamming(w: int) -> np.ndarray:
    if w < 2:
        raise ValueError("Hamming window needs w >= 2")
    n = np.arange(w)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (w - 1))


def window_count(n: int, spec: WindowSpec) -> int:
    n = max(n, spec.length)
    return math.floor((n - spec.length) / spec.hop + _INDEX_EPS) + 1


def window_starts(n: int, spec: WindowSpec) -> np.ndarray:
    return np.array([math.floor(i * spec.hop + _INDEX_EPS) for i in range(window_count(n, spec))], dtype=np.int64)


def slide(x, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Tapered windows ``(count, w)`` and their start indices.

    Signals shorter than the window are zero-padded to one full window.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < spec.length:
        x = np.pad(x, (0, spec.length - x.size))
    starts = window_starts(x.size, spec)
    idx = starts[:, None] + np.arange(spec.length)[None, :]
    return x[idx] * spec.taper()[None, :], starts


def mode_label(labels) -> int:
    """Most frequent class id; ties go to the smallest id."""
    counts = Counter(int(v) for v in labels)
    if not counts:
        raise ValueError("mode of an empty label list")
    best = max(counts.values())
    return min(c for c, n in counts.items() if n == best)


def signal_accuracy(window_pred, window_true, groups) -> float:
    """Accuracy after assigning each signal the mode of its windows' predicted classes."""
    window_pred = np.asarray(window_pred)
    window_true = np.asarray(window_true)
    groups = np.asarray(groups)
    hits = []
    for g in np.unique(groups):
        sel = groups == g
        hits.append(mode_label(window_pred[sel]) == mode_label(window_true[sel]))
    return float(np.mean(hits))


def add_awgn(x, target_snr_db: float, seed) -> np.ndarray:
    """Add white Gaussian noise scaled so the realized SNR equals ``target_snr_db``."""
    x = np.asarray(x, dtype=np.float64)
    p_signal = np.mean(x * x)
    if p_signal == 0:
        raise ValueError("cannot set an SNR against a zero-power signal")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape)
    p_noise = np.mean(noise * noise)
    scale = math.sqrt(p_signal / (p_noise * 10.0 ** (target_snr_db / 10.0)))
    return x + scale * noise


def _same_length(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def snr(clean, noisy, ceiling: float | None = None) -> float:
    """``10 log10(mean(s^2) / mean(n^2))`` with ``n = noisy - clean``.

    A perfect estimate gives ``+inf``, or ``ceiling`` when one is supplied.
    """
    clean, noisy = _same_length(clean, noisy)
    p_s = np.mean(clean * clean)
    p_n = np.mean((noisy - clean) ** 2)
    if p_n == 0:
        return math.inf if ceiling is None else ceiling
    if p_s == 0:
        return -math.inf
    return 10.0 * math.log10(p_s / p_n)


def mse(clean, estimate) -> float:
    clean, estimate = _same_length(clean, estimate)
    return float(np.mean((estimate - clean) ** 2))


def snrseg(clean, estimate, seg_len: int = SEGMENT_LEN, floor: float = SNR_FLOOR,
           ceiling: float = SNR_CEILING) -> float:
    """Mean of per-segment SNRs over contiguous ``seg_len`` blocks.

    Each block's SNR is clamped to ``[floor, ceiling]``; blocks with zero
    signal power are skipped. A trailing partial block is ignored unless the
    signal is shorter than one block.
    """
    clean, estimate = _same_length(clean, estimate)
    if seg_len < 1:
        raise ValueError("segment length must be >= 1")
    n_blocks = max(clean.size // seg_len, 1)
    vals = []
    for b in range(n_blocks):
        s = clean[b * seg_len:(b + 1) * seg_len] if clean.size >= seg_len else clean
        e = estimate[b * seg_len:(b + 1) * seg_len] if clean.size >= seg_len else estimate
        if not np.any(s):
            continue
        vals.append(min(max(snr(s, e, ceiling=ceiling), floor), ceiling))
    if not vals:
        raise ValueError("every segment of the clean signal is silent")
    return float(np.mean(vals))


@dataclass
class MetricReport:
    mse: float | None = None
    snr_db: float | None = None
    snrseg_db: float | None = None
    window_accuracy: float | None = None
    signal_accuracy: float | None = None

    @classmethod
    def for_signal(cls, clean, estimate, seg_len: int = SEGMENT_LEN) -> "MetricReport":
        return cls(mse=mse(clean, estimate), snr_db=snr(clean, estimate, ceiling=SNR_CEILING),
                   snrseg_db=snrseg(clean, estimate, seg_len))

    def as_dict(self) -> dict[str, float]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _as_window_model(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict"):
        width = model.spec.input_length

        def run(batch):
            if batch.shape[1] != width:
                raise ValueError(f"model input length {width} != window length {batch.shape[1]}")
            return model.predict(batch).reshape(batch.shape)

        return run
    return model


def denoise_end_to_end(model, x, spec: WindowSpec) -> np.ndarray:
    """Window the signal, run the model per window, untaper, and average overlaps.

    ``model`` is a :class:`~polywave.network.Network` or any callable mapping a
    ``(count, w)`` batch of tapered windows to same-shaped outputs. Samples past
    the last regular window are filled from one extra window aligned to the end
    of the signal.
    """
    run = _as_window_model(model)
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    w = spec.length
    padded = np.pad(x, (0, max(w - n, 0)))
    wins, starts = slide(padded, spec)
    taper = spec.taper()
    covered_to = int(starts[-1]) + w
    tail = covered_to < padded.size
    if tail:
        end_start = padded.size - w
        wins = np.vstack([wins, padded[end_start:] * taper])
    out = np.asarray(run(wins), dtype=np.float64)
    if out.shape != wins.shape:
        raise ValueError(f"model returned {out.shape}, expected {wins.shape}")
    out = out / taper[None, :]
    acc = np.zeros(padded.size)
    cnt = np.zeros(padded.size)
    for s, seg in zip(starts, out[: len(starts)]):
        acc[s:s + w] += seg
        cnt[s:s + w] += 1
    if tail:
        acc[covered_to:] = out[-1][covered_to - end_start:]
        cnt[covered_to:] = 1
    return (acc / cnt)[:n]


def to_unit_interval(x):
    """Map [-1, 1] audio to [0, 1] (used with relu/swish networks)."""
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def from_unit_interval(x):
    return np.asarray(x, dtype=np.float64) * 2.0 - 1.0


def write_signal(path, x, sample_rate: int) -> None:
    """Headerless little-endian float64 (``.txt``: one value per line) plus a ``.rate`` sidecar."""
    path = Path(path)
    x = np.asarray(x, dtype=np.float64)
    if path.suffix == ".txt":
        path.write_text("".join(f"{v!r}\n" for v in x.tolist()))
    else:
        path.write_bytes(x.astype("<f8").tobytes())
    Path(str(path) + ".rate").write_text(f"{int(sample_rate)}\n")


def read_signal(path) -> tuple[np.ndarray, int | None]:
    path = Path(path)
    if path.suffix == ".txt":
        x = np.array([float(v) for v in path.read_text().split()])
    else:
        x = np.frombuffer(path.read_bytes(), dtype="<f8").copy()
    rate_file = Path(str(path) + ".rate")
    rate = int(rate_file.read_text().strip()) if rate_file.exists() else None
    return x, rate
