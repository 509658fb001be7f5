"""Neural building blocks with paired offline and streaming forwards.

Every sequence-processing layer comes in two flavours:

* ``forward(x)`` — whole-sequence, differentiable (Tensor graph), used by
  training and as the reference the streaming path is tested against;
* ``init_state()`` / ``step(state, chunk)`` — incremental numpy path that
  consumes explicit per-stream state and, concatenated over any chunking
  of the input, reproduces the offline output.

Convolutions are causal (left padding only, zero history at stream
start); attention sees its own fixed-size chunk plus a bounded past
window, which is the single source of lookahead in the stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .tensor import DTYPE, ContractError, ShapeError, Tensor, gelu_raw


class Module:
    """Bare-bones parameter container (attribute scan, no hooks)."""

    def named_params(self, prefix: str = ""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield f"{prefix}{name}", val
            elif isinstance(val, Module):
                yield from val.named_params(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{prefix}{name}.{i}", item

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def set_trainable(self, flag: bool) -> None:
        for t in self.param_tensors():
            t.requires_grad = flag

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_params():
            t.data = arrays[name].copy()


def _param(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(DTYPE), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=True)


# ---------------------------------------------------------------------------
# frame-local layers
# ---------------------------------------------------------------------------


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = _param(rng, (d_in, d_out), 1.0 / math.sqrt(d_in))
        self.b = _zeros(d_out)

    def forward(self, x: Tensor) -> Tensor:
        return tz.matmul(x, self.w) + self.b

    def fwd_np(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.data + self.b.data


def dyt(x: Tensor, alpha: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Elementwise gamma * tanh(alpha * x) + beta; the normalization substitute."""
    return tz.tanh(x * alpha) * gamma + beta


class DyT(Module):
    """Learnable tanh squashing used in place of layer normalization."""

    def __init__(self, dim: int, alpha0: float = 1.0):
        self.alpha = Tensor(np.full((1,), alpha0, dtype=DTYPE), requires_grad=True)
        self.gamma = Tensor(np.ones(dim, dtype=DTYPE), requires_grad=True)
        self.beta = _zeros(dim)

    def forward(self, x: Tensor) -> Tensor:
        return dyt(x, self.alpha, self.gamma, self.beta)

    def fwd_np(self, x: np.ndarray) -> np.ndarray:
        return (np.tanh(x * self.alpha.data) * self.gamma.data + self.beta.data).astype(DTYPE)


class FeedForward(Module):
    """Position-wise MLP sublayer: x + W2 GELU(W1 DyT(x))."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.norm = DyT(dim)
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        u = self.norm.forward(x)
        return x + self.lin2.forward(tz.gelu(self.lin1.forward(u)))

    def fwd_np(self, x: np.ndarray) -> np.ndarray:
        u = self.norm.fwd_np(x)
        return x + self.lin2.fwd_np(gelu_raw(self.lin1.fwd_np(u)))


# ---------------------------------------------------------------------------
# causal convolutions
# ---------------------------------------------------------------------------


@dataclass
class ConvRingState:
    """Most recent past inputs a causal conv needs to continue the stream.

    For stride 1 the buffer holds exactly the last (K-1)*dilation input
    frames (zeros before enough input exists); strided layers additionally
    keep up to stride-1 frames of phase remainder.
    """

    buffer: np.ndarray
    frames_seen: int = 0


class CausalConv1d(Module):
    """1-D conv over [C, T] with zero lookahead (or centered pads for teachers).

    Output frame j is aligned so it depends on inputs up to index
    (j+1)*stride - 1: exactly floor(T / stride) frames come out of T
    inputs, which is what keeps token counts at floor(samples / 320).
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, dilation: int = 1, centered: bool = False,
                 gain: float = 1.0, groups: int = 1):
        if (kernel - 1) * dilation < stride - 1:
            raise ContractError("kernel span must cover the stride")
        if c_in % groups or c_out % groups:
            raise ShapeError("channel counts must divide evenly into groups")
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.centered = centered
        self.groups = groups
        total_pad = (kernel - 1) * dilation - (stride - 1)
        if centered:
            self.pad_left = total_pad // 2
            self.pad_right = total_pad - self.pad_left
        else:
            self.pad_left = total_pad
            self.pad_right = 0
        fan_in = (c_in // groups) * kernel
        self.w = _param(rng, (c_out, c_in // groups, kernel), gain / math.sqrt(fan_in))
        self.b = _zeros(c_out)

    @property
    def span(self) -> int:
        return (self.kernel - 1) * self.dilation + 1

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x.shape[0]}")
        if self.groups == 1:
            y = tz.conv1d(x, self.w, self.pad_left, self.pad_right,
                          stride=self.stride, dilation=self.dilation)
        else:
            gi, go = self.c_in // self.groups, self.c_out // self.groups
            parts = []
            for g in range(self.groups):
                parts.append(tz.conv1d(x[g * gi : (g + 1) * gi],
                                       self.w[g * go : (g + 1) * go],
                                       self.pad_left, self.pad_right,
                                       stride=self.stride, dilation=self.dilation))
            y = tz.cat(parts, axis=0)
        return y + tz.reshape(self.b, (self.c_out, 1))

    def init_state(self) -> ConvRingState:
        if self.centered:
            raise ContractError("centered (teacher) convolutions do not stream")
        return ConvRingState(buffer=np.zeros((self.c_in, self.pad_left), dtype=DTYPE))

    def step(self, state: ConvRingState, x_new: np.ndarray) -> np.ndarray:
        if x_new.shape[0] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x_new.shape[0]}")
        data = np.concatenate([state.buffer, x_new.astype(DTYPE, copy=False)], axis=1)
        total = data.shape[1]
        if total < self.span:
            n_out = 0
        else:
            n_out = (total - self.span) // self.stride + 1
        out = np.zeros((self.c_out, n_out), dtype=DTYPE)
        if n_out > 0:
            gi, go = self.c_in // self.groups, self.c_out // self.groups
            for k in range(self.kernel):
                lo = k * self.dilation
                xs = data[:, lo : lo + (n_out - 1) * self.stride + 1 : self.stride]
                if self.groups == 1:
                    out += self.w.data[:, :, k] @ xs
                else:
                    for g in range(self.groups):
                        out[g * go : (g + 1) * go] += (
                            self.w.data[g * go : (g + 1) * go, :, k]
                            @ xs[g * gi : (g + 1) * gi])
            out += self.b.data[:, None]
        state.buffer = data[:, n_out * self.stride :]
        state.frames_seen += x_new.shape[1]
        return out


class DepthwiseCausalConv(Module):
    """Per-channel causal conv on [C, T]; bias-free."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator,
                 centered: bool = False, uniform_init: bool = False):
        self.dim = dim
        self.kernel = kernel
        self.centered = centered
        if centered:
            self.pad_left = (kernel - 1) // 2
            self.pad_right = kernel - 1 - self.pad_left
        else:
            self.pad_left = kernel - 1
            self.pad_right = 0
        if uniform_init:
            self.w = Tensor(np.full((dim, kernel), 1.0 / kernel, dtype=DTYPE), requires_grad=True)
        else:
            self.w = _param(rng, (dim, kernel), 1.0 / math.sqrt(kernel))

    def forward(self, x: Tensor) -> Tensor:
        return tz.dwconv1d(x, self.w, self.pad_left, self.pad_right)

    def init_state(self) -> ConvRingState:
        if self.centered:
            raise ContractError("centered (teacher) convolutions do not stream")
        return ConvRingState(buffer=np.zeros((self.dim, self.pad_left), dtype=DTYPE))

    def step(self, state: ConvRingState, x_new: np.ndarray) -> np.ndarray:
        data = np.concatenate([state.buffer, x_new.astype(DTYPE, copy=False)], axis=1)
        n_out = x_new.shape[1]
        out = np.zeros((self.dim, n_out), dtype=DTYPE)
        for k in range(self.kernel):
            out += self.w.data[:, k : k + 1] * data[:, k : k + n_out]
        state.buffer = data[:, n_out:]
        state.frames_seen += n_out
        return out


# ---------------------------------------------------------------------------
# chunked sliding-window attention
# ---------------------------------------------------------------------------


def relative_buckets(rel: np.ndarray, n_buckets: int, max_distance: int) -> np.ndarray:
    """Map signed key-minus-query distances to log-spaced bucket ids."""
    half = n_buckets // 2
    out = np.where(rel > 0, half, 0).astype(np.int64)
    a = np.abs(rel).astype(np.int64)
    max_exact = max(half // 2, 1)
    ratio = max(max_distance, max_exact + 1) / max_exact
    large = max_exact + (
        np.log(np.maximum(a, 1) / max_exact) / math.log(ratio) * (half - max_exact)
    ).astype(np.int64)
    large = np.minimum(large, half - 1)
    out += np.where(a < max_exact, a, large)
    return out


@dataclass
class AttnWindowState:
    """Bounded key/value cache plus the not-yet-complete chunk.

    The cache never exceeds the past window, so memory stays constant no
    matter how long the stream runs; old context simply falls out.
    """

    pending: np.ndarray
    k_cache: np.ndarray
    v_cache: np.ndarray
    seen: int = 0


class ChunkedAttention(Module):
    """Gated multi-head attention over [past window + current chunk].

    Frames inside one chunk attend to each other freely (lookahead up to
    chunk-1 frames) and to at most ``past_window`` earlier frames counted
    from the chunk start. A learned bucketed relative-position bias is
    added to the logits and a sigmoid gate scales the output before the
    residual add. ``full_context=True`` builds the non-causal teacher
    variant (one chunk spanning the whole input, unbounded window).
    """

    def __init__(self, dim: int, heads: int, chunk: int, past_window: int,
                 rng: np.random.Generator, n_buckets: int = 32, full_context: bool = False):
        if dim % heads:
            raise ShapeError("dim must divide evenly into heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.chunk = chunk
        self.past_window = past_window
        self.n_buckets = n_buckets
        self.full_context = full_context
        self.norm = DyT(dim)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.gate = Linear(dim, dim, rng)
        self.rel_bias = Tensor(self._locality_bias_init(), requires_grad=True)

    def _locality_bias_init(self) -> np.ndarray:
        """Distance-decaying initial bias (one slope per head) so attention
        starts locally concentrated instead of averaging the whole window."""
        max_dist = self.past_window if not self.full_context else 1024
        dists = np.arange(-max_dist, max(self.chunk or 8, 8))
        buckets = relative_buckets(dists, self.n_buckets, max(max_dist, 2))
        rep = np.zeros(self.n_buckets)
        for b in range(self.n_buckets):
            members = np.abs(dists[buckets == b])
            rep[b] = members.mean() if members.size else 0.0
        slopes = 2.0 ** -(np.arange(self.heads) + 1.0)
        return (-rep[:, None] * slopes[None, :]).astype(DTYPE)

    # -- shared geometry -----------------------------------------------------

    def _chunk_bounds(self, T: int):
        if self.full_context:
            yield 0, T, 0
            return
        for cs in range(0, T, self.chunk):
            ce = min(cs + self.chunk, T)
            yield cs, ce, max(0, cs - self.past_window)

    def _bucket_matrix(self, cs: int, ce: int, ctx0: int) -> np.ndarray:
        q_pos = np.arange(cs, ce)
        k_pos = np.arange(ctx0, ce)
        rel = k_pos[None, :] - q_pos[:, None]
        max_dist = self.past_window if not self.full_context else max(ce, 2)
        return relative_buckets(rel, self.n_buckets, max_dist)

    # -- offline (differentiable) ---------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        T = x.shape[0]
        u = self.norm.forward(x)
        q = self.wq.forward(u)
        k = self.wk.forward(u)
        v = self.wv.forward(u)
        scale = 1.0 / math.sqrt(self.head_dim)
        outs = []
        for cs, ce, ctx0 in self._chunk_bounds(T):
            n, m = ce - cs, ce - ctx0
            qh = tz.transpose(tz.reshape(q[cs:ce], (n, self.heads, self.head_dim)), (1, 0, 2))
            kh = tz.transpose(tz.reshape(k[ctx0:ce], (m, self.heads, self.head_dim)), (1, 0, 2))
            vh = tz.transpose(tz.reshape(v[ctx0:ce], (m, self.heads, self.head_dim)), (1, 0, 2))
            scores = tz.matmul(qh, tz.transpose(kh, (0, 2, 1))) * scale
            bias = tz.transpose(self.rel_bias[self._bucket_matrix(cs, ce, ctx0)], (2, 0, 1))
            attn = tz.softmax(scores + bias, axis=-1)
            ctx = tz.matmul(attn, vh)
            rows = tz.reshape(tz.transpose(ctx, (1, 0, 2)), (n, self.dim))
            outs.append(rows)
        y = self.wo.forward(outs[0] if len(outs) == 1 else tz.cat(outs, axis=0))
        g = tz.sigmoid(self.gate.forward(u))
        return x + g * y

    # -- streaming -------------------------------------------------------------

    def init_state(self) -> AttnWindowState:
        if self.full_context:
            raise ContractError("full-context (teacher) attention does not stream")
        empty = np.zeros((0, self.dim), dtype=DTYPE)
        return AttnWindowState(pending=empty, k_cache=empty.copy(), v_cache=empty.copy())

    def _step_chunk(self, state: AttnWindowState, xc: np.ndarray) -> np.ndarray:
        n = xc.shape[0]
        cs = state.seen
        u = self.norm.fwd_np(xc)
        qn = self.wq.fwd_np(u)
        kn = self.wk.fwd_np(u)
        vn = self.wv.fwd_np(u)
        ks = np.concatenate([state.k_cache, kn], axis=0)
        vs = np.concatenate([state.v_cache, vn], axis=0)
        m = ks.shape[0]
        ctx0 = cs + n - m
        scale = 1.0 / math.sqrt(self.head_dim)
        qh = qn.reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)
        kh = ks.reshape(m, self.heads, self.head_dim).transpose(1, 0, 2)
        vh = vs.reshape(m, self.heads, self.head_dim).transpose(1, 0, 2)
        scores = np.matmul(qh, kh.transpose(0, 2, 1)) * scale
        scores += self.rel_bias.data[self._bucket_matrix(cs, cs + n, ctx0)].transpose(2, 0, 1)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        attn = (e / e.sum(axis=-1, keepdims=True)).astype(DTYPE)
        ctx = np.matmul(attn, vh).transpose(1, 0, 2).reshape(n, self.dim)
        y = self.wo.fwd_np(ctx)
        g = 1.0 / (1.0 + np.exp(-self.gate.fwd_np(u)))
        out = (xc + g.astype(DTYPE) * y).astype(DTYPE)
        state.k_cache = ks[-self.past_window :] if self.past_window else ks[:0]
        state.v_cache = vs[-self.past_window :] if self.past_window else vs[:0]
        state.seen += n
        return out

    def step(self, state: AttnWindowState, frames: np.ndarray) -> np.ndarray:
        """Buffer frames; emit outputs whenever a full chunk completes."""
        state.pending = np.concatenate([state.pending, frames.astype(DTYPE, copy=False)], axis=0)
        outs = []
        while state.pending.shape[0] >= self.chunk:
            xc = state.pending[: self.chunk]
            state.pending = state.pending[self.chunk :]
            outs.append(self._step_chunk(state, xc))
        if not outs:
            return np.zeros((0, self.dim), dtype=DTYPE)
        return np.concatenate(outs, axis=0)

    def flush(self, state: AttnWindowState) -> np.ndarray:
        """Emit the trailing partial chunk (its frames simply see a shorter context)."""
        if state.pending.shape[0] == 0:
            return np.zeros((0, self.dim), dtype=DTYPE)
        xc = state.pending
        state.pending = np.zeros((0, self.dim), dtype=DTYPE)
        return self._step_chunk(state, xc)


# ---------------------------------------------------------------------------
# focal modulation block
# ---------------------------------------------------------------------------


@dataclass
class FocalState:
    level_states: list[ConvRingState]
    pool_state: ConvRingState


class FocalBlock(Module):
    """Attention-free token mixer: hierarchical depthwise causal convs,
    gated aggregation, and a large-kernel causal pooling conv that plays
    the role of global pooling as a learnable sliding moving average
    (initialized uniform, i.e. an exact moving average), followed by a
    position-wise feed-forward sublayer.

    Level l uses kernel ``focal_window + l * focal_factor`` and there are
    ``focal_factor`` levels.
    """

    def __init__(self, dim: int, focal_window: int, focal_factor: int, pool_kernel: int,
                 ffn_hidden: int, rng: np.random.Generator, centered: bool = False):
        self.dim = dim
        self.levels = focal_factor
        self.norm1 = DyT(dim)
        # fused projection: [query | context | level gates (+1 for pooled)]
        self.proj_in = Linear(dim, 2 * dim + self.levels + 1, rng)
        self.level_convs = [
            DepthwiseCausalConv(dim, focal_window + l * focal_factor, rng, centered=centered)
            for l in range(self.levels)
        ]
        self.pool_conv = DepthwiseCausalConv(dim, pool_kernel, rng,
                                             centered=centered, uniform_init=True)
        self.proj_mod = Linear(dim, dim, rng)
        self.proj_out = Linear(dim, dim, rng)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        D = self.dim
        u = self.norm1.forward(x)
        f = self.proj_in.forward(u)
        q = f[:, :D]
        gates = f[:, 2 * D :]
        zc = tz.transpose(f[:, D : 2 * D])  # [D, T] for the depthwise convs
        m_sum = None
        for l, conv in enumerate(self.level_convs):
            zc = tz.gelu(conv.forward(zc))
            term = gates[:, l : l + 1] * tz.transpose(zc)
            m_sum = term if m_sum is None else m_sum + term
        pooled = tz.transpose(self.pool_conv.forward(zc))
        m_sum = m_sum + gates[:, self.levels : self.levels + 1] * pooled
        y = self.proj_out.forward(q * self.proj_mod.forward(m_sum))
        x = x + y
        return self.ffn.forward(x)

    def init_state(self) -> FocalState:
        return FocalState(
            level_states=[c.init_state() for c in self.level_convs],
            pool_state=self.pool_conv.init_state(),
        )

    def step(self, state: FocalState, x_new: np.ndarray) -> np.ndarray:
        D = self.dim
        u = self.norm1.fwd_np(x_new)
        f = self.proj_in.fwd_np(u)
        q = f[:, :D]
        gates = f[:, 2 * D :]
        zc = f[:, D : 2 * D].T
        m_sum = np.zeros_like(x_new)
        for l, conv in enumerate(self.level_convs):
            zc = gelu_raw(conv.step(state.level_states[l], zc))
            m_sum += gates[:, l : l + 1] * zc.T
        pooled = self.pool_conv.step(state.pool_state, zc).T
        m_sum += gates[:, self.levels : self.levels + 1] * pooled
        y = self.proj_out.fwd_np(q * self.proj_mod.fwd_np(m_sum))
        x = (x_new + y).astype(DTYPE)
        return self.ffn.fwd_np(x)


# ---------------------------------------------------------------------------
# refiner / decoder pieces
# ---------------------------------------------------------------------------


@dataclass
class RefinerState:
    pending: np.ndarray


class Refiner(Module):
    """Residual chunk-wise feed-forward over flattened chunks of C frames.

    Frames are reshaped [N, D] -> [N/C, C*D]; each chunk vector gets
    c + W_out GELU(W_in c + b_in) + b_out and is reshaped back, so the
    transform never crosses a chunk boundary. Zero weights/biases make it
    the exact identity, which is also the training starting point.
    """

    def __init__(self, dim: int, chunk: int, rng: np.random.Generator, zero_init: bool = True):
        self.dim = dim
        self.chunk = chunk
        cd = chunk * dim
        self.w_in = _param(rng, (cd, cd), 1.0 / math.sqrt(cd))
        self.b_in = _zeros(cd)
        self.w_out = _zeros((cd, cd)) if zero_init else _param(rng, (cd, cd), 1.0 / math.sqrt(cd))
        self.b_out = _zeros(cd)

    def forward(self, x: Tensor) -> Tensor:
        n, d = x.shape
        if d != self.dim:
            raise ShapeError(f"expected feature dim {self.dim}, got {d}")
        if n % self.chunk:
            raise ContractError("frame count must be a multiple of the refiner chunk")
        xc = tz.reshape(x, (n // self.chunk, self.chunk * self.dim))
        h = tz.gelu(tz.matmul(xc, self.w_in) + self.b_in)
        yc = xc + tz.matmul(h, self.w_out) + self.b_out
        return tz.reshape(yc, (n, d))

    def _apply_np(self, xc: np.ndarray) -> np.ndarray:
        h = gelu_raw(xc @ self.w_in.data + self.b_in.data)
        return (xc + h @ self.w_out.data + self.b_out.data).astype(DTYPE)

    def init_state(self) -> RefinerState:
        return RefinerState(pending=np.zeros((0, self.dim), dtype=DTYPE))

    def step(self, state: RefinerState, frames: np.ndarray) -> np.ndarray:
        state.pending = np.concatenate([state.pending, frames.astype(DTYPE, copy=False)], axis=0)
        n_full = (state.pending.shape[0] // self.chunk) * self.chunk
        if n_full == 0:
            return np.zeros((0, self.dim), dtype=DTYPE)
        ready = state.pending[:n_full]
        state.pending = state.pending[n_full:]
        xc = ready.reshape(n_full // self.chunk, self.chunk * self.dim)
        return self._apply_np(xc).reshape(n_full, self.dim)

    def flush(self, state: RefinerState) -> np.ndarray:
        """Zero-pad the trailing partial chunk, transform, truncate."""
        r = state.pending.shape[0]
        if r == 0:
            return np.zeros((0, self.dim), dtype=DTYPE)
        padded = np.zeros((self.chunk, self.dim), dtype=DTYPE)
        padded[:r] = state.pending
        state.pending = np.zeros((0, self.dim), dtype=DTYPE)
        out = self._apply_np(padded.reshape(1, self.chunk * self.dim))
        return out.reshape(self.chunk, self.dim)[:r]


class ConvNeXtBlock(Module):
    """Causal ConvNeXt-style block: depthwise conv, DyT, pointwise MLP, residual."""

    def __init__(self, dim: int, kernel: int, ffn_hidden: int, rng: np.random.Generator,
                 centered: bool = False):
        self.dw = DepthwiseCausalConv(dim, kernel, rng, centered=centered)
        self.norm = DyT(dim)
        self.lin1 = Linear(dim, ffn_hidden, rng)
        self.lin2 = Linear(ffn_hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        u = tz.transpose(self.dw.forward(tz.transpose(x)))
        u = self.norm.forward(u)
        return x + self.lin2.forward(tz.gelu(self.lin1.forward(u)))

    def init_state(self) -> ConvRingState:
        return self.dw.init_state()

    def step(self, state: ConvRingState, x_new: np.ndarray) -> np.ndarray:
        u = self.dw.step(state, x_new.T).T
        u = self.norm.fwd_np(u)
        return (x_new + self.lin2.fwd_np(gelu_raw(self.lin1.fwd_np(u)))).astype(DTYPE)


class FlattenHead(Module):
    """Project each frame to K waveform samples and flatten them in order."""

    def __init__(self, dim: int, k_up: int, rng: np.random.Generator):
        self.k_up = k_up
        self.proj = _param(rng, (dim, k_up), 1.0 / math.sqrt(dim))

    def forward(self, x: Tensor) -> Tensor:
        T = x.shape[0]
        return tz.reshape(tz.matmul(x, self.proj), (T * self.k_up,))

    def fwd_np(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.proj.data).reshape(-1).astype(DTYPE)
