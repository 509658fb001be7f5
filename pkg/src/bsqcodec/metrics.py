"""Codebook and throughput statistics: code usage, normalized entropy,
bitrate arithmetic, and real-time factor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class TokenHistogram:
    """Occurrence counts per codebook entry."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def codebook_size(self) -> int:
        return int(self.counts.shape[0])

    @classmethod
    def from_tokens(cls, indices: np.ndarray, codebook_size: int) -> "TokenHistogram":
        counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=codebook_size)
        if counts.shape[0] > codebook_size:
            raise ValueError("token index exceeds codebook size")
        return cls(counts)


def code_usage(h: TokenHistogram) -> float:
    """Percentage of codebook entries observed at least once."""
    if h.total < 1:
        raise ValueError("empty histogram")
    return 100.0 * int(np.count_nonzero(h.counts)) / h.codebook_size


def normalized_entropy(h: TokenHistogram) -> float:
    """Shannon entropy of the empirical distribution over its maximum (0 log 0 := 0)."""
    if h.total < 1:
        raise ValueError("empty histogram")
    p = h.counts[h.counts > 0] / h.total
    entropy_bits = float(-(p * np.log2(p)).sum())
    return entropy_bits / math.log2(h.codebook_size)


def bitrate(token_rate: float, codebook_size: int) -> float:
    """Token rate times bits per token, in kbps."""
    if codebook_size < 2 or codebook_size & (codebook_size - 1):
        raise ValueError("codebook_size must be a power of two")
    return token_rate * math.log2(codebook_size) / 1000.0


def display_bitrate(kbps: float) -> str:
    """Two-decimal bitrate as reported in the codec tables (truncated, not
    rounded: 0.808 kbps is listed as 0.80)."""
    return f"{math.floor(kbps * 100) / 100:.2f}"


def real_time_factor(audio_duration_s: float, wall_clock_s: float) -> float:
    """Audio seconds per wall-clock second; > 1 is faster than real time."""
    if wall_clock_s <= 0:
        raise ValueError("wall clock time must be positive")
    return audio_duration_s / wall_clock_s


def stats_report(h: TokenHistogram, token_rate: float, payload_bytes: int | None = None) -> str:
    """Plain-table summary consumed by the CLI stats command."""
    duration = h.total / token_rate if token_rate > 0 else 0.0
    bits = math.log2(h.codebook_size)
    lines = [
        f"tokens:              {h.total}",
        f"bits per token:      {bits:g}",
        f"duration:            {duration:.3f} s",
        f"code usage:          {code_usage(h):.1f} %",
        f"normalized entropy:  {normalized_entropy(h):.3f}",
        f"theoretical bitrate: {display_bitrate(bitrate(token_rate, h.codebook_size))} kbps",
    ]
    if payload_bytes is not None and duration > 0:
        measured = payload_bytes * 8.0 / duration / 1000.0
        lines.append(f"payload bitrate:     {measured:.3f} kbps")
    return "\n".join(lines)
