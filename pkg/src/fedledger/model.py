"""One-hidden-layer softmax classifier on a flat parameter vector.

The model is deliberately small: input -> tanh hidden layer -> softmax.
All parameters live in a single float64 vector partitioned by a
:class:`LayerLayout`, which is what the personalization masks and the
privacy mechanisms operate on. forward/loss/gradient/accuracy are pure
functions: same inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .rng import RngStream

PROB_FLOOR = 1e-12

HIDDEN_WEIGHTS = "hidden_weights"
HIDDEN_BIAS = "hidden_bias"
OUTPUT_WEIGHTS = "output_weights"
OUTPUT_BIAS = "output_bias"

_MLP_LAYER_ORDER = (HIDDEN_WEIGHTS, HIDDEN_BIAS, OUTPUT_WEIGHTS, OUTPUT_BIAS)


class ConfigurationError(ValueError):
    """Incompatible shapes or layouts passed to an operation."""


@dataclass(frozen=True)
class LayerSpan:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class LayerLayout:
    """Named, contiguous, non-overlapping spans covering [0, total_dim)."""

    layers: tuple[LayerSpan, ...]
    total_dim: int

    def __post_init__(self):
        expected = 0
        for span in self.layers:
            if span.length <= 0:
                raise ConfigurationError(f"layer {span.name!r} has length {span.length}")
            if span.offset != expected:
                raise ConfigurationError(
                    f"layer {span.name!r} starts at {span.offset}, expected {expected}"
                )
            expected += span.length
        if expected != self.total_dim:
            raise ConfigurationError(
                f"layers cover {expected} coordinates, total_dim is {self.total_dim}"
            )

    def span(self, name: str) -> LayerSpan:
        for span in self.layers:
            if span.name == name:
                return span
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(span.name for span in self.layers)


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    layout: LayerLayout

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.shape[0] != self.layout.total_dim:
            raise ConfigurationError(
                f"parameter vector has {values.shape} values, layout expects "
                f"({self.layout.total_dim},)"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("parameter vector contains non-finite entries")

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if inputs.ndim != 2:
            raise ConfigurationError("batch inputs must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ConfigurationError("batch has mismatched input/label counts")
        if not np.all(np.isfinite(inputs)):
            raise ConfigurationError("batch inputs contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def mlp_layout(input_dim: int, hidden_dim: int, num_classes: int) -> LayerLayout:
    if input_dim < 1 or hidden_dim < 1 or num_classes < 2:
        raise ConfigurationError(
            f"bad model dimensions ({input_dim}, {hidden_dim}, {num_classes})"
        )
    sizes = (input_dim * hidden_dim, hidden_dim, hidden_dim * num_classes, num_classes)
    spans = []
    offset = 0
    for name, size in zip(_MLP_LAYER_ORDER, sizes):
        spans.append(LayerSpan(name, offset, size))
        offset += size
    return LayerLayout(tuple(spans), offset)


def layout_dims(layout: LayerLayout) -> tuple[int, int, int]:
    """(input_dim, hidden_dim, num_classes) recovered from an MLP layout."""
    if layout.names != _MLP_LAYER_ORDER:
        raise ConfigurationError(f"not an MLP layout: layers {layout.names}")
    hidden_dim = layout.span(HIDDEN_BIAS).length
    num_classes = layout.span(OUTPUT_BIAS).length
    input_dim, rem = divmod(layout.span(HIDDEN_WEIGHTS).length, hidden_dim)
    if rem != 0 or layout.span(OUTPUT_WEIGHTS).length != hidden_dim * num_classes:
        raise ConfigurationError("layout spans do not factor into MLP shapes")
    return input_dim, hidden_dim, num_classes


def init_params(layout: LayerLayout, stream: RngStream) -> ParameterVector:
    """Uniform init in [-0.05, 0.05] drawn from the given stream."""
    values = stream.uniform(-0.05, 0.05, layout.total_dim)
    return ParameterVector(values, layout)


def _check_batch(params: ParameterVector, batch: Batch) -> tuple[int, int, int]:
    dims = layout_dims(params.layout)
    if len(batch) == 0:
        raise ConfigurationError("batch is empty")
    if batch.inputs.shape[1] != dims[0]:
        raise ConfigurationError(
            f"batch input_dim {batch.inputs.shape[1]} != model input_dim {dims[0]}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= dims[2]:
        raise ConfigurationError("batch labels out of class range")
    return dims


def forward(params: ParameterVector, batch: Batch) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1."""
    dims = _check_batch(params, batch)
    return kernels.forward_probs(params.values, batch.inputs, *dims)


def loss(params: ParameterVector, batch: Batch) -> float:
    """Mean cross-entropy; probabilities floored at 1e-12 inside the log."""
    dims = _check_batch(params, batch)
    return kernels.loss_value(params.values, batch.inputs, batch.labels, *dims)


def gradient(params: ParameterVector, batch: Batch) -> ParameterVector:
    dims = _check_batch(params, batch)
    _, grad = kernels.loss_and_grad(params.values, batch.inputs, batch.labels, *dims)
    return ParameterVector(grad, params.layout)


def loss_and_gradient(params: ParameterVector, batch: Batch) -> tuple[float, np.ndarray]:
    """Fused loss + raw gradient array (the training-loop hot path)."""
    dims = _check_batch(params, batch)
    return kernels.loss_and_grad(params.values, batch.inputs, batch.labels, *dims)


def accuracy(params: ParameterVector, batch: Batch) -> float:
    """Fraction of argmax predictions matching labels; ties pick the lowest class."""
    probs = forward(params, batch)
    return float(np.mean(np.argmax(probs, axis=1) == batch.labels))
