"""Deterministic, addressable random streams.

Every stream is identified by a label path such as ``(seed, "noise", round,
client_id)``. The path is hashed into a 256-bit key for a counter-based
Philox generator, so two streams with different paths are independent and a
stream's output never depends on when (or on which thread) it is consumed.
Gaussian variates are produced by Box-Muller on top of the uniform source so
the exact sample values are pinned by this module, not by the platform's
normal sampler.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_DOMAIN = b"fedledger.rng.v1"


def _encode_label(label) -> bytes:
    if isinstance(label, bytes):
        return b"B" + len(label).to_bytes(4, "big") + label
    if isinstance(label, str):
        raw = label.encode("utf-8")
        return b"S" + len(raw).to_bytes(4, "big") + raw
    if isinstance(label, (int, np.integer)):
        return b"I" + int(label).to_bytes(16, "big", signed=True)
    raise TypeError(f"unsupported stream label type: {type(label).__name__}")


def derive_key(*labels) -> bytes:
    """32-byte key for a label path; also used for client MAC keys."""
    h = hashlib.sha256(_DOMAIN)
    for label in labels:
        h.update(_encode_label(label))
    return h.digest()


class RngStream:
    """Counter-based random stream addressed by a label path."""

    def __init__(self, *labels):
        self.labels = labels
        # Philox takes a 128-bit key; use the top half of the derived digest.
        key = int.from_bytes(derive_key(*labels)[:16], "big")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RngStream":
        return RngStream(*self.labels, *labels)

    def random(self, n: int | None = None):
        """Uniform float64 in [0, 1)."""
        return self._gen.random() if n is None else self._gen.random(n)

    def uniform(self, low: float, high: float, n: int | None = None):
        u = self.random(n)
        return low + (high - low) * u

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """Gaussian N(0, sigma^2) via Box-Muller."""
        pairs = (n + 1) // 2
        u1 = self.random(pairs)
        u2 = self.random(pairs)
        # 1 - u1 lies in (0, 1], keeping the log finite.
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return sigma * z[:n]

    def laplace(self, scale: float, n: int) -> np.ndarray:
        """Laplace(0, scale) as the difference of two unit exponentials."""
        e1 = -np.log1p(-self.random(n))
        e2 = -np.log1p(-self.random(n))
        return scale * (e1 - e2)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
