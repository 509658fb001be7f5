"""Tiny RIFF/WAVE reader and writer: mono PCM-16 or IEEE float32 only.

The stdlib ``wave`` module cannot read float WAVs, and this codec's decode
side wants a lossless float carrier, so the two chunk layouts are handled
directly.
"""

from __future__ import annotations

import struct

import numpy as np

FORMAT_PCM = 1
FORMAT_FLOAT = 3


class WavError(ValueError):
    """File is not a WAV this tool accepts."""


def read_wav(path) -> tuple[np.ndarray, int]:
    """Returns (float32 samples in [-1, 1], sample_rate)."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) != 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise WavError("not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            chunk_head = fh.read(8)
            if len(chunk_head) < 8:
                break
            cid, size = struct.unpack("<4sI", chunk_head)
            body = fh.read(size)
            if len(body) != size:
                raise WavError("truncated WAV chunk")
            if size % 2:
                fh.read(1)  # chunks are word-aligned
            if cid == b"fmt ":
                fmt = body
            elif cid == b"data":
                data = body
        if fmt is None or data is None:
            raise WavError("missing fmt or data chunk")
        audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
        if channels != 1:
            raise WavError(f"expected mono audio, got {channels} channels")
        if audio_format == FORMAT_PCM and bits == 16:
            samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
        elif audio_format == FORMAT_FLOAT and bits == 32:
            samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
        else:
            raise WavError(f"unsupported WAV encoding (format {audio_format}, {bits}-bit)")
        return samples, rate


def write_wav(path, samples: np.ndarray, rate: int, float_format: bool = True) -> None:
    samples = np.asarray(samples, dtype=np.float32).reshape(-1)
    if float_format:
        payload = samples.astype("<f4").tobytes()
        audio_format, bits = FORMAT_FLOAT, 32
    else:
        clipped = np.clip(samples, -1.0, 1.0)
        payload = (clipped * 32767.0).astype("<i2").tobytes()
        audio_format, bits = FORMAT_PCM, 16
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", audio_format, 1, rate, rate * block_align, block_align, bits)
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<I", len(fmt)))
        fh.write(fmt)
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        if len(payload) % 2:
            fh.write(b"\x00")
