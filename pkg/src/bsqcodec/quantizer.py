"""Binary spherical quantization.

Latents are snapped to the nearest vertex of the scaled binary hypercube
on the unit sphere: code components are +-1/sqrt(D), one bit per
component. There is no learned codebook; the integer token index IS the
bit pattern (little-endian: bit b <-> component b, a file-format
contract). sign(0) counts as +1 so files are bit-exact across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Tensor, _make, _needs


class DegenerateInputError(ValueError):
    """A latent vector with zero norm cannot be placed on the sphere."""


@dataclass(frozen=True)
class BsqConfig:
    """Quantizer geometry: bits per token == latent dimensionality."""

    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= 24:
            raise ValueError(f"bits must be in [1, 24], got {self.bits}")

    @property
    def codebook_size(self) -> int:
        return 1 << self.bits


def _signs(z: np.ndarray) -> np.ndarray:
    # >= 0 maps to +1: the deterministic sign(0) := +1 tie-break.
    return np.where(z >= 0.0, 1.0, -1.0).astype(DTYPE)


def quantize_array(z: np.ndarray) -> np.ndarray:
    """Nearest code for each row of z (no gradient, rejects zero rows)."""
    z = np.asarray(z, dtype=DTYPE)
    flat = z.reshape(-1, z.shape[-1])
    if np.any(np.all(flat == 0.0, axis=-1)):
        raise DegenerateInputError("zero vector cannot be quantized")
    scale = DTYPE(1.0 / np.sqrt(z.shape[-1]))
    return _signs(z) * scale


def codes_to_indices(codes: np.ndarray) -> np.ndarray:
    """Pack the sign pattern of each row into an integer, bit b = component b."""
    codes = np.asarray(codes)
    bits = (codes[..., :] >= 0.0).astype(np.int64)
    weights = (1 << np.arange(codes.shape[-1], dtype=np.int64))
    return (bits * weights).sum(axis=-1)


def indices_to_codes(indices: np.ndarray, cfg: BsqConfig) -> np.ndarray:
    """Unit-norm code vectors for integer indices; inverse of codes_to_indices."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= cfg.codebook_size):
        raise ValueError(f"token index out of range for {cfg.bits}-bit codebook")
    shifts = np.arange(cfg.bits, dtype=np.int64)
    bits = (indices[..., None] >> shifts) & 1
    scale = DTYPE(1.0 / np.sqrt(cfg.bits))
    return np.where(bits == 1, scale, -scale).astype(DTYPE)


def bsq_encode(z: np.ndarray) -> tuple[np.ndarray, int]:
    """Quantize one latent vector; returns (code, token index)."""
    z = np.asarray(z, dtype=DTYPE)
    if z.ndim != 1:
        raise ValueError("bsq_encode expects a single vector")
    code = quantize_array(z)
    return code, int(codes_to_indices(code))


def bsq_decode(index: int, cfg: BsqConfig) -> np.ndarray:
    return indices_to_codes(np.asarray(index), cfg)


def nearest_code_distance(z: np.ndarray) -> float:
    """Euclidean distance from a unit vector to its own quantization."""
    z = np.asarray(z, dtype=DTYPE)
    code = quantize_array(z)
    return float(np.linalg.norm(z - code))


def bsq_ste(z: Tensor) -> Tensor:
    """Quantize rows of z[N, D] with a straight-through backward.

    Forward emits the exact codes; backward pretends the op was the smooth
    L2 row-normalization, so upstream parameters keep a usable gradient
    through the (piecewise-constant) quantizer.
    """
    norms = np.linalg.norm(z.data, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero row passed to bsq_ste")
    codes = quantize_array(z.data)
    y = z.data / norms  # normalization point the surrogate gradient is taken at

    def bw(g):
        if _needs(z):
            dot = np.sum(g * y, axis=-1, keepdims=True)
            z._accumulate(((g - y * dot) / norms).astype(DTYPE))

    return _make(codes, (z,), bw)
