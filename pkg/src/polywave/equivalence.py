"""Parameter-matched and performance-matched plain convolution networks.

A polynomial layer with ``N`` neurons over ``N_prev`` channels, kernel ``K``
and degree ``D`` holds ``N*N_prev*K*D + N`` parameters. The parameter-matched
network replaces each such layer by a degree-1 layer whose width is chosen so
its own count ``N'*N'_prev*K + N'`` is as close as possible. The last
polynomial layer is followed by an extra kernel-1 layer that restores the
original channel count, and its width absorbs the remaining surplus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from .network import LayerSpec, NetworkSpec, conv, param_count

log = logging.getLogger(__name__)


class EquivalenceError(ValueError):
    """A constructed layer width rounded down to zero."""


def _round_half_up(num: int, den: int) -> int:
    """``floor(num / den + 1/2)`` in exact integer arithmetic."""
    return (2 * num + den) // (2 * den)


def equivalent_inner_width(n: int, n_prev: int, k: int, d: int, n_prev_eq: int) -> int:
    if min(n, n_prev, k, d, n_prev_eq) < 1:
        raise ValueError("all inputs must be >= 1")
    width = _round_half_up(n * (n_prev * k * d + 1), n_prev_eq * k + 1)
    if width < 1:
        raise EquivalenceError(f"inner layer width rounds to {width}")
    return width


def equivalent_output_width(n: int, n_prev: int, k: int, d: int, n_prev_eq: int,
                            activation: str = "tanh") -> tuple[int, LayerSpec]:
    """Width of the last converted layer plus the kernel-1 layer that restores ``n`` channels."""
    if min(n, n_prev, k, d, n_prev_eq) < 1:
        raise ValueError("all inputs must be >= 1")
    width = _round_half_up(n * n_prev * k * d, n_prev_eq * k + n + 1)
    if width < 1:
        raise EquivalenceError(f"output layer width rounds to {width}")
    return width, conv(n, 1, activation)


@dataclass
class EquivalenceReport:
    source: NetworkSpec
    constructed: NetworkSpec
    widths: list[int]  # converted widths, one per source conv layer
    source_params: int
    constructed_params: int
    restorer_added: bool = False

    @property
    def difference(self) -> int:
        return self.constructed_params - self.source_params

    def rounding_bound(self) -> float:
        """Largest parameter mismatch the half-up rounding can produce."""
        if not self.restorer_added:
            return 0.0
        convs = [l for l in self.source.layers if l.is_conv]
        prev = [self.source.input_channels] + self.widths[:-1]
        bound = sum((prev[i] * convs[i].kernel + 1) / 2 for i in range(len(convs) - 1))
        return bound + (prev[-1] * convs[-1].kernel + convs[-1].units + 1) / 2

    def to_text(self) -> str:
        lines = ["# equivalence report",
                 f"# source params: {self.source_params}",
                 f"# constructed params: {self.constructed_params}",
                 f"# difference: {self.difference:+d}"]
        convs = [l for l in self.source.layers if l.is_conv]
        for i, (layer, w) in enumerate(zip(convs, self.widths)):
            lines.append(f"# conv layer {i}: {layer.to_line()} -> width {w}")
        if self.restorer_added:
            lines.append(f"# appended: conv {convs[-1].units} 1 {convs[-1].activation}")
        return "\n".join(lines) + "\n"

    def width_mismatches(self, expected: list[int]) -> list[tuple[int, int, int]]:
        """``(layer, computed, expected)`` wherever a reference width list disagrees."""
        return [(i, w, e) for i, (w, e) in enumerate(zip(self.widths, expected)) if w != e]


def build_equivalent(spec: NetworkSpec) -> EquivalenceReport:
    """Parameter-matched degree-1 network.

    A spec whose conv layers are all degree 1 is returned unchanged, without
    the restoring layer.
    """
    convs = [i for i, l in enumerate(spec.layers) if l.is_conv]
    src_params = param_count(spec)
    if all(spec.layers[i].degree == 1 for i in convs):
        return EquivalenceReport(spec, spec, [spec.layers[i].units for i in convs], src_params, src_params)
    layers: list[LayerSpec] = []
    widths: list[int] = []
    n_prev = n_prev_eq = spec.input_channels
    last = convs[-1]
    for i, layer in enumerate(spec.layers):
        if not layer.is_conv:
            layers.append(layer)
            continue
        if i == last:
            width, restorer = equivalent_output_width(layer.units, n_prev, layer.kernel, layer.degree,
                                                      n_prev_eq, layer.activation)
            layers += [conv(width, layer.kernel, layer.activation), restorer]
        else:
            width = equivalent_inner_width(layer.units, n_prev, layer.kernel, layer.degree, n_prev_eq)
            layers.append(conv(width, layer.kernel, layer.activation))
        widths.append(width)
        n_prev, n_prev_eq = layer.units, width
    out = spec.with_layers(layers)
    return EquivalenceReport(spec, out, widths, src_params, param_count(out), restorer_added=True)


@dataclass
class GrowResult:
    spec: NetworkSpec
    metric: float
    met: bool
    steps: int
    history: list[tuple[tuple[int, ...], float]] = field(default_factory=list)


def growable_layers(spec: NetworkSpec) -> list[int]:
    """Conv layers whose width may change without altering the network's output shape.

    Excludes kernel-1 restoring layers and, for fully convolutional nets, the
    final conv layer (it fixes the output channel count).
    """
    convs = [i for i, l in enumerate(spec.layers) if l.is_conv]
    if not convs:
        return []
    last = convs[-1]
    restorer = len(convs) > 1 and spec.layers[last].kernel == 1 and convs[-2] == last - 1
    out = convs[:-1]
    if not restorer and any(l.kind == "dense" for l in spec.layers):
        out.append(last)
    return out


def _widen(spec: NetworkSpec, idx: int) -> NetworkSpec:
    layers = list(spec.layers)
    old = layers[idx]
    layers[idx] = LayerSpec(old.kind, old.units + 1, old.kernel, old.degree, old.activation)
    return spec.with_layers(layers)


def grow_to_performance(base: EquivalenceReport | NetworkSpec, target: float,
                        eval_fn: Callable[[NetworkSpec], float], max_steps: int = 64) -> GrowResult:
    """Add one neuron at a time, round-robin from the first conv layer, until ``eval_fn >= target``.

    Returns the first spec that meets the target, or the best one seen with
    ``met=False`` once ``max_steps`` widenings are spent.
    """
    spec = base.constructed if isinstance(base, EquivalenceReport) else base
    order = growable_layers(spec)
    if not order:
        raise ValueError("no conv layer can be widened")
    metric = eval_fn(spec)
    history = [(tuple(l.units for l in spec.layers if l.is_conv), metric)]
    best = (metric, spec)
    steps = 0
    while metric < target and steps < max_steps:
        spec = _widen(spec, order[steps % len(order)])
        steps += 1
        metric = eval_fn(spec)
        history.append((tuple(l.units for l in spec.layers if l.is_conv), metric))
        log.info("grow step %d: %s -> %.6g", steps, history[-1][0], metric)
        if metric > best[0]:
            best = (metric, spec)
    if metric >= target:
        return GrowResult(spec, metric, True, steps, history)
    return GrowResult(best[1], best[0], False, steps, history)
