"""Full codec: configuration, encoder/bottleneck/decoder stacks, streaming
sessions, latency accounting, and weight serialization.

Both offline entry points run through the same streaming sessions used by
``session_push`` (input is consumed in fixed attention-chunk quanta), so
offline and streaming outputs are identical by construction, not just
within tolerance.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as tz
from .layers import (
    CausalConv1d,
    ChunkedAttention,
    ConvNeXtBlock,
    DyT,
    FeedForward,
    FlattenHead,
    FocalBlock,
    Linear,
    Module,
    Refiner,
)
from .quantizer import BsqConfig, codes_to_indices, indices_to_codes, quantize_array
from .tensor import DTYPE, Tensor, gelu_raw


class FormatError(ValueError):
    """A serialized artifact (weights, tokens, audio) violates its format."""


class SessionClosedError(RuntimeError):
    """push() after flush() on a streaming session."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    """Every architectural hyperparameter; defaults are the desk-scale model.

    ``paper_shape()`` builds the full-size configuration (constructible for
    latency/bitrate audits, far too large to train here).
    """

    sample_rate_in: int = 16000
    frame_rate: int = 50
    extractor_channels: tuple[int, ...] = (24, 40, 64)
    extractor_kernels: tuple[int, ...] = (16, 10, 16)
    extractor_strides: tuple[int, ...] = (8, 5, 8)
    model_dim: int = 64
    encoder_layers: int = 2
    attn_heads: int = 4
    encoder_ffn: int = 128
    posemb_kernel: int = 32
    posemb_groups: int = 8
    attn_chunk: int = 4
    past_window: int = 64
    compressor_dims: tuple[int, ...] = (48, 32)
    focal_window: int = 14
    focal_factor: int = 4
    pool_kernel: int = 14
    focal_ffn_mult: int = 2
    bsq_bits: int = 8
    refiner_chunk: int = 4
    decoder_hidden: int = 64
    decoder_ffn: int = 128
    decoder_blocks: int = 2
    decoder_kernel: int = 7
    upsample: int = 480

    def __post_init__(self):
        if self.sample_rate_in % self.frame_rate:
            raise ValueError("sample_rate_in must be a multiple of frame_rate")
        if math.prod(self.extractor_strides) != self.samples_per_frame:
            raise ValueError("extractor strides must multiply to samples_per_frame")
        if not (len(self.extractor_channels) == len(self.extractor_kernels) == len(self.extractor_strides)):
            raise ValueError("extractor channel/kernel/stride lists must align")
        if self.extractor_channels[-1] != self.model_dim:
            raise ValueError("last extractor channel count must equal model_dim")
        if self.model_dim % self.attn_heads:
            raise ValueError("model_dim must divide evenly into attention heads")
        BsqConfig(self.bsq_bits)  # range check

    @property
    def samples_per_frame(self) -> int:
        return self.sample_rate_in // self.frame_rate

    @property
    def sample_rate_out(self) -> int:
        return self.frame_rate * self.upsample

    @property
    def codebook_size(self) -> int:
        return 1 << self.bsq_bits

    @property
    def bsq(self) -> BsqConfig:
        return BsqConfig(self.bsq_bits)

    @property
    def latency_frames(self) -> int:
        return max(self.attn_chunk, self.refiner_chunk)

    @property
    def latency_ms(self) -> float:
        return self.latency_frames * 1000.0 / self.frame_rate

    @property
    def bitrate_bps(self) -> float:
        return self.frame_rate * self.bsq_bits

    @classmethod
    def desk(cls, bits: int = 8) -> "CodecConfig":
        return cls(bsq_bits=bits)

    @classmethod
    def paper_shape(cls, bits: int = 11) -> "CodecConfig":
        return cls(
            extractor_channels=(512, 512, 512, 512, 512, 512, 1024),
            extractor_kernels=(10, 3, 3, 3, 3, 2, 2),
            extractor_strides=(5, 2, 2, 2, 2, 2, 2),
            model_dim=1024,
            encoder_layers=6,
            attn_heads=16,
            encoder_ffn=4096,
            posemb_kernel=128,
            posemb_groups=16,
            attn_chunk=4,
            past_window=512,
            compressor_dims=(1024, 1024, 1024),
            focal_window=14,
            focal_factor=4,
            pool_kernel=14,
            bsq_bits=bits,
            refiner_chunk=4,
            decoder_hidden=1024,
            decoder_ffn=2048,
            decoder_blocks=8,
            decoder_kernel=7,
            upsample=480,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, val in d.items():
            if key not in known:
                raise FormatError(f"unknown config key: {key}")
            default = known[key].default
            if isinstance(default, tuple):
                kwargs[key] = tuple(int(x) for x in val)
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# token stream carrier
# ---------------------------------------------------------------------------


@dataclass
class TokenStream:
    """In-memory token sequence plus the header metadata the file format needs."""

    indices: np.ndarray  # int64 [N]
    bits_per_token: int
    frame_rate: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def validate(self) -> "TokenStream":
        if len(self) and (self.indices.min() < 0 or self.indices.max() >= (1 << self.bits_per_token)):
            raise FormatError("token index out of range for the declared codebook")
        return self


# ---------------------------------------------------------------------------
# stacks
# ---------------------------------------------------------------------------


class EncoderStack(Module):
    """Strided causal feature extractor, positional-embedding conv, and the
    chunked-attention transformer body. ``centered=True`` builds the
    non-causal (teacher) twin: same shapes, symmetric padding, full-context
    attention."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, centered: bool = False):
        self.centered = centered
        self.extractor = []
        c_prev = 1
        for c, k, s in zip(cfg.extractor_channels, cfg.extractor_kernels, cfg.extractor_strides):
            # gain 2 compensates the ~0.5x GELU slope so random-init features
            # keep usable variance for the bottleneck
            self.extractor.append(CausalConv1d(c_prev, c, k, rng, stride=s,
                                               centered=centered, gain=2.0))
            c_prev = c
        self.posemb = CausalConv1d(cfg.model_dim, cfg.model_dim, cfg.posemb_kernel, rng,
                                   centered=centered, groups=cfg.posemb_groups)
        self.posemb_norm = DyT(cfg.model_dim)
        self.attn_layers = []
        self.ffn_layers = []
        for _ in range(cfg.encoder_layers):
            self.attn_layers.append(ChunkedAttention(
                cfg.model_dim, cfg.attn_heads, cfg.attn_chunk, cfg.past_window, rng,
                full_context=centered))
            self.ffn_layers.append(FeedForward(cfg.model_dim, cfg.encoder_ffn, rng))

    def extract(self, wave: Tensor) -> Tensor:
        """Waveform [1, T] -> frame features [T_f, D]."""
        x = wave
        for conv in self.extractor:
            x = tz.gelu(conv.forward(x))
        return tz.transpose(x)

    def posemb_forward(self, feats: Tensor) -> Tensor:
        """The distillable positional-embedding sublayer: x + GELU(conv(x))."""
        pe = tz.transpose(tz.gelu(self.posemb.forward(tz.transpose(feats))))
        return feats + pe

    def body(self, feats: Tensor, collect: bool = False):
        h = self.posemb_norm.forward(self.posemb_forward(feats))
        per_layer = []
        for attn, ffn in zip(self.attn_layers, self.ffn_layers):
            h = ffn.forward(attn.forward(h))
            if collect:
                per_layer.append(h)
        return (h, per_layer) if collect else h

    def forward(self, wave: Tensor) -> Tensor:
        return self.body(self.extract(wave))

    def layer_outputs(self, wave: Tensor) -> list[Tensor]:
        _, per_layer = self.body(self.extract(wave), collect=True)
        return per_layer


class Compressor(Module):
    """Focal-modulation downscaling stages ending in the D_q-dim latent."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, centered: bool = False):
        self.projs = []
        self.blocks = []
        d_prev = cfg.model_dim
        for d in cfg.compressor_dims:
            self.projs.append(Linear(d_prev, d, rng))
            self.blocks.append(FocalBlock(d, cfg.focal_window, cfg.focal_factor,
                                          cfg.pool_kernel, cfg.focal_ffn_mult * d, rng,
                                          centered=centered))
            d_prev = d
        self.out = Linear(d_prev, cfg.bsq_bits, rng)

    def forward(self, x: Tensor) -> Tensor:
        for proj, block in zip(self.projs, self.blocks):
            x = block.forward(proj.forward(x))
        return self.out.forward(x)


class Decompressor(Module):
    """Mirror of the compressor: latent codes back to model_dim features."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, centered: bool = False):
        dims = tuple(reversed(cfg.compressor_dims))
        self.inp = Linear(cfg.bsq_bits, dims[0], rng)
        self.blocks = []
        self.projs = []
        for i, d in enumerate(dims):
            self.blocks.append(FocalBlock(d, cfg.focal_window, cfg.focal_factor,
                                          cfg.pool_kernel, cfg.focal_ffn_mult * d, rng,
                                          centered=centered))
            d_next = dims[i + 1] if i + 1 < len(dims) else cfg.model_dim
            self.projs.append(Linear(d, d_next, rng))

    def forward(self, x: Tensor) -> Tensor:
        x = self.inp.forward(x)
        for block, proj in zip(self.blocks, self.projs):
            x = proj.forward(block.forward(x))
        return x


class Decoder(Module):
    """Causal ConvNeXt body plus the project-and-flatten waveform head."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        self.inp = Linear(cfg.model_dim, cfg.decoder_hidden, rng)
        self.blocks = [
            ConvNeXtBlock(cfg.decoder_hidden, cfg.decoder_kernel, cfg.decoder_ffn, rng)
            for _ in range(cfg.decoder_blocks)
        ]
        self.norm = DyT(cfg.decoder_hidden)
        self.head = FlattenHead(cfg.decoder_hidden, cfg.upsample, rng)

    def forward(self, feats: Tensor) -> Tensor:
        h = self.inp.forward(feats)
        for block in self.blocks:
            h = block.forward(h)
        return self.head.forward(self.norm.forward(h))


class CodecModel(Module):
    """The trainable codec; all parameters seeded from one generator."""

    def __init__(self, cfg: CodecConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = EncoderStack(cfg, rng)
        self.compressor = Compressor(cfg, rng)
        self.decompressor = Decompressor(cfg, rng)
        self.refiner = Refiner(cfg.model_dim, cfg.refiner_chunk, rng, zero_init=True)
        self.decoder = Decoder(cfg, rng)

    # differentiable paths used by training ---------------------------------

    def encode_features(self, wave: Tensor) -> Tensor:
        return self.encoder.forward(wave)

    def bottleneck(self, feats: Tensor, quantized: bool = True) -> Tensor:
        from .quantizer import bsq_ste

        z = self.compressor.forward(feats)
        if quantized:
            z = bsq_ste(z)
        return self.decompressor.forward(z)

    def encode_session(self) -> "EncoderSession":
        return EncoderSession(self)

    def decode_session(self) -> "DecoderSession":
        return DecoderSession(self)


# ---------------------------------------------------------------------------
# streaming sessions
# ---------------------------------------------------------------------------


class EncoderSession:
    """Audio in, tokens out. Input is buffered and consumed in fixed quanta
    of attn_chunk frames' worth of samples so every chunking of the same
    audio triggers the identical kernel sequence (tokens are bit-identical
    across chunkings, including the all-at-once offline call)."""

    def __init__(self, model: CodecModel):
        cfg = model.cfg
        self.model = model
        self.cfg = cfg
        self.quantum = cfg.attn_chunk * cfg.samples_per_frame
        self._sample_buf = np.zeros(0, dtype=DTYPE)
        self.samples_in = 0
        self.tokens_out = 0
        self.closed = False
        enc = model.encoder
        self._ext_states = [c.init_state() for c in enc.extractor]
        self._pe_state = enc.posemb.init_state()
        self._attn_states = [a.init_state() for a in enc.attn_layers]
        comp = model.compressor
        self._comp_states = [b.init_state() for b in comp.blocks]

    def _advance(self, samples: np.ndarray) -> np.ndarray:
        enc = self.model.encoder
        x = samples[None, :]
        for conv, st in zip(enc.extractor, self._ext_states):
            x = gelu_raw(conv.step(st, x))
        frames = x.T  # [n, D]
        pe = gelu_raw(enc.posemb.step(self._pe_state, frames.T)).T
        h = enc.posemb_norm.fwd_np(frames + pe)
        for attn, ffn, st in zip(enc.attn_layers, enc.ffn_layers, self._attn_states):
            h = ffn.fwd_np(attn.step(st, h))
        return self._bottleneck_in(h)

    def _bottleneck_in(self, h: np.ndarray) -> np.ndarray:
        comp = self.model.compressor
        for proj, block, st in zip(comp.projs, comp.blocks, self._comp_states):
            h = block.step(st, proj.fwd_np(h))
        z = comp.out.fwd_np(h)
        if z.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return codes_to_indices(quantize_array(z))

    def push(self, samples: np.ndarray) -> np.ndarray:
        """Feed input samples; returns any token indices that completed."""
        if self.closed:
            raise SessionClosedError("push() after flush()")
        samples = np.asarray(samples, dtype=DTYPE).reshape(-1)
        self.samples_in += samples.shape[0]
        self._sample_buf = np.concatenate([self._sample_buf, samples])
        out = []
        while self._sample_buf.shape[0] >= self.quantum:
            block = self._sample_buf[: self.quantum]
            self._sample_buf = self._sample_buf[self.quantum :]
            out.append(self._advance(block))
        toks = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
        self.tokens_out += toks.shape[0]
        return toks

    def flush(self) -> np.ndarray:
        """Process the tail and drain the attention chunk accumulators."""
        if self.closed:
            raise SessionClosedError("flush() called twice")
        self.closed = True
        out = [self._advance(self._sample_buf)]
        self._sample_buf = np.zeros(0, dtype=DTYPE)
        enc = self.model.encoder
        carry = np.zeros((0, self.cfg.model_dim), dtype=DTYPE)
        for attn, ffn, st in zip(enc.attn_layers, enc.ffn_layers, self._attn_states):
            h = np.concatenate([attn.step(st, carry), attn.flush(st)], axis=0)
            carry = ffn.fwd_np(h)
        out.append(self._bottleneck_in(carry))
        toks = np.concatenate(out)
        self.tokens_out += toks.shape[0]
        return toks


class DecoderSession:
    """Tokens in, waveform samples out; processed in refiner-chunk quanta."""

    def __init__(self, model: CodecModel):
        cfg = model.cfg
        self.model = model
        self.cfg = cfg
        self.quantum = cfg.refiner_chunk
        self._token_buf = np.zeros(0, dtype=np.int64)
        self.tokens_in = 0
        self.samples_out = 0
        self.closed = False
        dec = model.decompressor
        self._dec_states = [b.init_state() for b in dec.blocks]
        self._ref_state = model.refiner.init_state()
        self._cnx_states = [b.init_state() for b in model.decoder.blocks]

    def _decompress(self, tokens: np.ndarray) -> np.ndarray:
        dec = self.model.decompressor
        h = dec.inp.fwd_np(indices_to_codes(tokens, self.cfg.bsq))
        for block, proj, st in zip(dec.blocks, dec.projs, self._dec_states):
            h = proj.fwd_np(block.step(st, h))
        return h

    def _decode_frames(self, feats: np.ndarray) -> np.ndarray:
        dec = self.model.decoder
        h = dec.inp.fwd_np(feats)
        for block, st in zip(dec.blocks, self._cnx_states):
            h = block.step(st, h)
        return dec.head.fwd_np(dec.norm.fwd_np(h))

    def push(self, tokens: np.ndarray) -> np.ndarray:
        if self.closed:
            raise SessionClosedError("push() after flush()")
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.codebook_size):
            raise FormatError("token index out of range for the codebook")
        self.tokens_in += tokens.shape[0]
        self._token_buf = np.concatenate([self._token_buf, tokens])
        out = []
        while self._token_buf.shape[0] >= self.quantum:
            block = self._token_buf[: self.quantum]
            self._token_buf = self._token_buf[self.quantum :]
            feats = self.model.refiner.step(self._ref_state, self._decompress(block))
            out.append(self._decode_frames(feats))
        samples = np.concatenate(out) if out else np.zeros(0, dtype=DTYPE)
        self.samples_out += samples.shape[0]
        return samples

    def flush(self) -> np.ndarray:
        if self.closed:
            raise SessionClosedError("flush() called twice")
        self.closed = True
        feats = self._decompress(self._token_buf)
        self._token_buf = np.zeros(0, dtype=np.int64)
        feats = np.concatenate([
            self.model.refiner.step(self._ref_state, feats),
            self.model.refiner.flush(self._ref_state),
        ], axis=0)
        samples = self._decode_frames(feats)
        self.samples_out += samples.shape[0]
        return samples


def encode_offline(model: CodecModel, audio: np.ndarray) -> TokenStream:
    """Whole-file encode; runs the streaming session once over all input."""
    session = model.encode_session()
    toks = np.concatenate([session.push(audio), session.flush()])
    return TokenStream(toks, model.cfg.bsq_bits, float(model.cfg.frame_rate))


def decode_offline(model: CodecModel, tokens: TokenStream) -> np.ndarray:
    if tokens.bits_per_token != model.cfg.bsq_bits:
        raise FormatError(
            f"token stream carries {tokens.bits_per_token}-bit tokens, "
            f"model expects {model.cfg.bsq_bits}")
    tokens.validate()
    session = model.decode_session()
    return np.concatenate([session.push(tokens.indices), session.flush()])


# ---------------------------------------------------------------------------
# latency accounting
# ---------------------------------------------------------------------------


@dataclass
class ModuleLatency:
    name: str
    lookahead_frames: int
    lookahead_ms: float
    past_frames: float
    past_seconds: float


@dataclass
class LatencyReport:
    modules: list[ModuleLatency]
    latency_frames: int
    latency_ms: float
    bitrate_kbps: float
    over_budget: list[str] = field(default_factory=list)

    def format_table(self) -> str:
        lines = [f"{'module':<22}{'lookahead':>12}{'past context':>16}"]
        for m in self.modules:
            look = f"{m.lookahead_frames} f/{m.lookahead_ms:.0f} ms"
            past = f"{m.past_frames:g} f/{m.past_seconds:.2f} s"
            lines.append(f"{m.name:<22}{look:>12}{past:>16}")
        lines.append(f"total theoretical latency: {self.latency_ms:.0f} ms "
                     f"({self.latency_frames} frames)")
        lines.append(f"bitrate: {self.bitrate_kbps:.3f} kbps")
        for name in self.over_budget:
            lines.append(f"WARNING: {name} lookahead exceeds the attention chunk budget")
        return "\n".join(lines)


def latency_report(cfg: CodecConfig) -> LatencyReport:
    """Pure config arithmetic: per-module lookahead and past receptive field."""
    frame_ms = 1000.0 / cfg.frame_rate

    rf = 1
    for k, s in zip(reversed(cfg.extractor_kernels), reversed(cfg.extractor_strides)):
        rf = (rf - 1) * s + k
    extractor_s = rf / cfg.sample_rate_in
    extractor_frames = rf / cfg.samples_per_frame

    focal_rf = 1
    for l in range(cfg.focal_factor):
        focal_rf += cfg.focal_window + l * cfg.focal_factor - 1
    focal_rf += cfg.pool_kernel - 1
    comp_rf = 1 + (focal_rf - 1) * len(cfg.compressor_dims)

    dec_rf = 1 + cfg.decoder_blocks * (cfg.decoder_kernel - 1)

    modules = [
        ModuleLatency("feature extractor", 0, 0.0, extractor_frames, extractor_s),
        ModuleLatency("positional embedding", 0, 0.0, cfg.posemb_kernel,
                      cfg.posemb_kernel / cfg.frame_rate),
        ModuleLatency(f"encoder attention x{cfg.encoder_layers}", cfg.attn_chunk - 1,
                      (cfg.attn_chunk - 1) * frame_ms, cfg.past_window,
                      cfg.past_window / cfg.frame_rate),
        ModuleLatency("compressor", 0, 0.0, comp_rf, comp_rf / cfg.frame_rate),
        ModuleLatency("quantizer", 0, 0.0, 1, 1 / cfg.frame_rate),
        ModuleLatency("decompressor", 0, 0.0, comp_rf, comp_rf / cfg.frame_rate),
        ModuleLatency("refiner", cfg.refiner_chunk - 1, (cfg.refiner_chunk - 1) * frame_ms,
                      cfg.refiner_chunk, cfg.refiner_chunk / cfg.frame_rate),
        ModuleLatency("decoder", 0, 0.0, dec_rf, dec_rf / cfg.frame_rate),
    ]
    over = [m.name for m in modules if m.lookahead_frames > cfg.attn_chunk - 1]
    return LatencyReport(
        modules=modules,
        latency_frames=cfg.latency_frames,
        latency_ms=cfg.latency_ms,
        bitrate_kbps=cfg.bitrate_bps / 1000.0,
        over_budget=over,
    )


# ---------------------------------------------------------------------------
# weight serialization
# ---------------------------------------------------------------------------

WEIGHT_MAGIC = b"FCSW"
WEIGHT_VERSION = 1


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    arr = np.asarray(arr, dtype=DTYPE)
    fh.write(struct.pack("<B", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(arr.astype("<f4").tobytes(order="C"))


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("weight file truncated")
    return buf


def save_weights(model: CodecModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<H", WEIGHT_VERSION))
        for key, val in model.cfg.to_dict().items():
            _write_record(fh, f"config/{key}", np.atleast_1d(np.asarray(val, dtype=np.float64)))
        for name, t in model.named_params():
            _write_record(fh, name, t.data)


def _read_records(path) -> dict[str, np.ndarray]:
    records: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHT_MAGIC:
            raise FormatError("not a weight file (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != WEIGHT_VERSION:
            raise FormatError(f"unsupported weight file version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise FormatError("weight file truncated")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank)
            )
            count = math.prod(shape) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
            records[name] = data.astype(DTYPE)
    return records


def load_weights(path) -> CodecModel:
    """Rebuild a model from a weight file; forward-equivalent to the saved one."""
    records = _read_records(path)
    cfg_dict = {}
    for name in list(records):
        if name.startswith("config/"):
            val = records.pop(name)
            key = name[len("config/"):]
            cfg_dict[key] = val.tolist() if val.size > 1 else int(val[0])
    cfg = CodecConfig.from_dict(cfg_dict)
    model = CodecModel(cfg, seed=0)
    for name, t in model.named_params():
        if name not in records:
            raise FormatError(f"weight file is missing tensor: {name}")
        arr = records.pop(name)
        if arr.shape != t.data.shape:
            raise FormatError(
                f"tensor {name} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr.copy()
    if records:
        raise FormatError(f"weight file has unknown tensor: {next(iter(records))}")
    return model
