"""Fisher-based layer importance and personalization masks.

Importance is the empirical diagonal Fisher information (mean per-sample
squared log-likelihood gradient, observed labels), summed per layer and
normalized to shares. A layer is personalized when its share reaches the
threshold tau; masks are layer-granular, i.e. constant across each span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .data import Dataset
from .model import ConfigurationError, LayerLayout, ParameterVector, layout_dims


class DegenerateModelError(ValueError):
    """The Fisher diagonal vanished everywhere; no layer carries information."""


@dataclass(frozen=True)
class PersonalizationMask:
    """Binary per-coordinate selector; bit 1 keeps the coordinate local."""

    bits: np.ndarray
    layout: LayerLayout
    tau: float

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.shape != (self.layout.total_dim,):
            raise ConfigurationError("mask length does not match layout")
        for span in self.layout.layers:
            seg = bits[span.offset : span.offset + span.length]
            if seg.any() and not seg.all():
                raise ConfigurationError(f"mask not constant over layer {span.name!r}")

    @property
    def personalized_layers(self) -> tuple[str, ...]:
        return tuple(
            span.name
            for span in self.layout.layers
            if self.bits[span.offset]
        )


def all_shared_mask(layout: LayerLayout, tau: float = 1.0) -> PersonalizationMask:
    """All-zero mask: every coordinate follows the global model."""
    return PersonalizationMask(np.zeros(layout.total_dim, dtype=bool), layout, tau)


@dataclass(frozen=True)
class ImportanceProfile:
    """Per-layer shares of total Fisher information; shares sum to 1."""

    per_layer: tuple[tuple[str, float], ...]
    layout: LayerLayout

    def __post_init__(self):
        shares = [value for _, value in self.per_layer]
        if any(value < 0 for value in shares):
            raise ValueError("importance shares must be non-negative")
        if abs(sum(shares) - 1.0) > 1e-9:
            raise ValueError(f"importance shares sum to {sum(shares)!r}, expected 1")

    def share(self, name: str) -> float:
        for layer_name, value in self.per_layer:
            if layer_name == name:
                return value
        raise KeyError(name)


def fisher_diagonal(params: ParameterVector, shard: Dataset) -> np.ndarray:
    """Empirical diagonal Fisher of the model on a data shard."""
    if len(shard) == 0:
        raise ValueError("shard is empty")
    dims = layout_dims(params.layout)
    if shard.input_dim != dims[0] or shard.num_classes > dims[2]:
        raise ConfigurationError("shard shape does not match model layout")
    return kernels.fisher_diag(params.values, shard.inputs, shard.labels, *dims)


def layer_importance(fisher: np.ndarray, layout: LayerLayout) -> ImportanceProfile:
    fisher = np.asarray(fisher, dtype=np.float64)
    if fisher.shape != (layout.total_dim,):
        raise ValueError("fisher vector length does not match layout")
    if np.any(fisher < 0) or not np.all(np.isfinite(fisher)):
        raise ValueError("fisher entries must be finite and non-negative")
    total = float(fisher.sum())
    if total <= 0.0:
        raise DegenerateModelError("fisher information is zero everywhere")
    shares = tuple(
        (span.name, float(fisher[span.offset : span.offset + span.length].sum() / total))
        for span in layout.layers
    )
    return ImportanceProfile(shares, layout)


def build_mask(profile: ImportanceProfile, tau: float) -> PersonalizationMask:
    """Personalize every layer whose share is >= tau (ties personalize)."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    bits = np.zeros(profile.layout.total_dim, dtype=bool)
    for span in profile.layout.layers:
        if profile.share(span.name) >= tau:
            bits[span.offset : span.offset + span.length] = True
    return PersonalizationMask(bits, profile.layout, tau)


def merge_models(
    prev_local: ParameterVector,
    global_params: ParameterVector,
    mask: PersonalizationMask,
) -> ParameterVector:
    """Masked coordinates from the previous local model, the rest global."""
    if prev_local.layout != global_params.layout or mask.layout != prev_local.layout:
        raise ConfigurationError("merge requires identical layouts")
    merged = np.where(mask.bits, prev_local.values, global_params.values)
    return ParameterVector(merged, prev_local.layout)
