"""Operation counts for polynomial vs plain conv neurons, and a per-neuron timing harness.

Counts follow the naive rule: every scalar addition or multiplication is one
operation, activations cost one operation per sample, and no algebraic
shortcuts are taken. Counts that can be half-integers are returned as
``Fraction``; whole results come back as ``int``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import trim_mean
from threadpoolctl import threadpool_limits

from .equivalence import equivalent_inner_width
from .network import Network, NetworkSpec, conv, pnn
from .training import MSE, SGD, backward_sweep


@dataclass(frozen=True)
class LayerDims:
    m_prev: int
    m: int
    n_prev: int
    k: int
    d: int = 1

    def __post_init__(self):
        if min(self.m_prev, self.m, self.n_prev, self.k, self.d) < 1:
            raise ValueError("all layer dimensions must be >= 1")

    def with_degree(self, d: int) -> "LayerDims":
        return LayerDims(self.m_prev, self.m, self.n_prev, self.k, d)


# first layer of the two-layer timing networks: 2 x 100 input, 10 neurons, kernel 25
REFERENCE_DIMS = LayerDims(m_prev=100, m=76, n_prev=2, k=25)
REFERENCE_NEURONS = 10
REFERENCE_OUTPUT_KERNEL = 25


def _tidy(x: Fraction):
    return int(x) if x.denominator == 1 else x


def cnn_forward_ops(dims: LayerDims) -> int:
    """Plain conv neuron: ``M (2 N_prev K - 1)`` for the sliding sums, then ``M`` bias adds and ``M`` activations."""
    return dims.m * (2 * dims.n_prev * dims.k - 1) + 2 * dims.m


def forward_ops(dims: LayerDims, cnn_ops=None):
    """Polynomial neuron forward count in terms of the plain neuron's count."""
    base = cnn_forward_ops(dims) if cnn_ops is None else cnn_ops
    d = dims.d
    extra = (d - 1) * (Fraction(dims.m_prev * dims.n_prev * d, 2) - 2 * dims.m)
    return _tidy(d * Fraction(base) + extra)


def cnn_learning_ops(dims: LayerDims, n_next: int = 1, k_next: int = 1) -> int:
    """One forward + backward + update cycle of a plain conv inner neuron.

    Output gradient: ``M (2 N_next K_next - 1)`` plus ``M`` products with the
    activation derivative. Weight gradients: ``K (2M - 1)`` per input channel,
    update ``2K`` per input channel. Bias: ``M - 1`` to sum, 2 to update.
    """
    m, k = dims.m, dims.k
    backward = m * (2 * n_next * k_next - 1) + m
    weights = dims.n_prev * (k * (2 * m - 1) + 2 * k)
    bias = (m - 1) + 2
    return cnn_forward_ops(dims) + backward + weights + bias


def learning_ops(dims: LayerDims, cnn_learning=None):
    base = cnn_learning_ops(dims) if cnn_learning is None else cnn_learning
    d = dims.d
    extra = (d - 1) * ((dims.m_prev * dims.n_prev + Fraction(dims.m, 2)) * d - dims.m)
    return _tidy(d * Fraction(base) + extra)


def curve_constants(dims: LayerDims, kind: str = "forward") -> tuple[Fraction, Fraction]:
    if kind == "forward":
        return Fraction(dims.m_prev * dims.n_prev, 2), Fraction(2 * dims.m)
    if kind == "learning":
        return Fraction(dims.m_prev * dims.n_prev) + Fraction(dims.m, 2), Fraction(dims.m)
    raise ValueError(f"kind must be 'forward' or 'learning', got {kind!r}")


def time_curve(t0: float, dims: LayerDims, degrees, kind: str = "forward") -> np.ndarray:
    """Extrapolate a degree-1 time ``t0`` to other degrees using the operation counts.

    The per-operation time is the smallest value that keeps the curve
    non-decreasing in the degree: ``t0 / (c1 + c2)``.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    c1, c2 = (float(c) for c in curve_constants(dims, kind))
    t_op = t0 / (c1 + c2)
    d = np.asarray(list(degrees), dtype=np.float64)
    return d * t0 + (d - 1) * (c1 * d - c2) * t_op


# benchmark ------------------------------------------------------------------

@dataclass
class BenchResult:
    degree: int
    cnn_fwd_s: float
    pnn_fwd_s: float
    equiv_fwd_s: float
    theory_fwd_s: float
    cnn_learn_s: float
    pnn_learn_s: float
    equiv_learn_s: float
    theory_learn_s: float
    repetitions: int
    equiv_width: int


BENCH_COLUMNS = ["degree", "cnn_fwd_s", "pnn_fwd_s", "equiv_fwd_s", "theory_fwd_s",
                 "cnn_learn_s", "pnn_learn_s", "equiv_learn_s", "theory_learn_s"]


def _two_layer(first, dims: LayerDims, seed: int) -> Network:
    spec = NetworkSpec(dims.n_prev, dims.m_prev, (first, conv(1, REFERENCE_OUTPUT_KERNEL, "tanh")))
    return Network(spec, seed)


def _timed_interleaved(fns, reps: int, warmup: float) -> list[float]:
    """Trimmed-mean seconds per call for each of ``fns``, timed round-robin so drift hits all alike."""
    samples = [[] for _ in fns]
    for _ in range(reps):
        for fn, acc in zip(fns, samples):
            t = time.perf_counter()
            fn()
            acc.append(time.perf_counter() - t)
    skip = int(reps * warmup)
    return [float(trim_mean(acc[skip:], 0.1)) for acc in samples]


def _cycle_fns(net: Network, x, target):
    loss = MSE()
    opt = SGD(1e-6)
    out_layer = net.layers[-1]
    hidden, _ = net.layers[0].forward(x)

    def fwd():
        net.forward(x)

    def learn():
        out, caches = net.forward(x)
        opt.step(net.params, [g for gs in backward_sweep(net, caches, out, target, loss) for g in gs])

    def out_fwd():
        out_layer.forward(hidden)

    def out_learn():
        out, cache = out_layer.forward(hidden)
        out_layer.backward(cache, loss.grad(target, out))

    return fwd, learn, out_fwd, out_learn


def neuron_times(nets: list[Network], n_neurons: int, reps: int, warmup: float, rng) -> list[tuple[float, float]]:
    """Per-neuron (forward, learning) seconds for each net.

    Whole-net time minus output-layer time, over ``n_neurons``. All nets are
    timed in one interleaved loop.
    """
    fns = []
    for net in nets:
        x = rng.standard_normal((1,) + net.shapes[0])
        target = rng.standard_normal((1,) + net.shapes[-1])
        fns.extend(_cycle_fns(net, x, target))
    t = _timed_interleaved(fns, reps, warmup)
    return [((t[i] - t[i + 2]) / n_neurons, (t[i + 1] - t[i + 3]) / n_neurons) for i in range(0, len(t), 4)]


def run_bench(degrees=range(1, 11), reps: int = 1000, dims: LayerDims = REFERENCE_DIMS,
              n_neurons: int = REFERENCE_NEURONS, warmup: float = 0.1, seed: int = 0) -> list[BenchResult]:
    """Time plain, polynomial and parameter-matched first layers for each degree.

    The parameter-matched layer uses the inner-layer width formula for the
    first layer; the kernel-25 output neuron is timed separately and
    subtracted, as in the polynomial and plain cases.
    """
    rng = np.random.default_rng(seed)
    degrees = list(degrees)
    raw = []
    with threadpool_limits(1):
        for d in degrees:
            cnn_net = _two_layer(conv(n_neurons, dims.k, "tanh"), dims, seed)
            pnn_net = _two_layer(pnn(n_neurons, dims.k, d, "tanh"), dims, seed)
            width = equivalent_inner_width(n_neurons, dims.n_prev, dims.k, d, dims.n_prev)
            eq_net = _two_layer(conv(width, dims.k, "tanh"), dims, seed)
            times = neuron_times([cnn_net, pnn_net, eq_net], n_neurons, reps, warmup, rng)
            raw.append((d, width, times))
    base = [t for d, _, t in raw if d == 1]
    if base:
        t0_fwd, t0_learn = base[0][1]
    else:
        t0_fwd = float(np.mean([t[0][0] for _, _, t in raw]))
        t0_learn = float(np.mean([t[0][1] for _, _, t in raw]))
    ref = dims.with_degree(1)
    theory_fwd = time_curve(max(t0_fwd, 1e-12), ref, degrees, "forward")
    theory_learn = time_curve(max(t0_learn, 1e-12), ref, degrees, "learning")
    results = []
    for i, (d, width, ((cf, cl), (pf, pl), (ef, el))) in enumerate(raw):
        results.append(BenchResult(d, cf, pf, ef, float(theory_fwd[i]), cl, pl, el, float(theory_learn[i]),
                                   reps, width))
    return results


def write_bench_csv(results: list[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in results:
            w.writerow([r.degree] + [repr(getattr(r, c)) for c in BENCH_COLUMNS[1:]])
