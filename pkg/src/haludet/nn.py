"""Minimal neural-network kernel: a seedable deterministic RNG, the layer
primitives the detector needs (linear, width-3 conv1d, ReLU, tanh, softmax,
masked pooling, stable BCE), their hand-derived backward passes, and the
parameter store used by the optimizer.

Everything is plain numpy. Forward/backward run at whatever dtype the inputs
carry (float32 in production; the gradient checker re-runs at float64).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

DTYPE = np.float32


def _splitmix64_mix(z: int) -> int:
    """Output function of splitmix64 applied to a 64-bit value."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit seed from a master seed and a stream tag.

    derive(seed, k) = splitmix64_mix(seed + (k + 1) * 0x9E3779B97F4A7C15 mod 2^64).
    """
    return _splitmix64_mix((seed + (stream + 1) * _GOLDEN) & MASK64)


class Rng:
    """Deterministic 64-bit PRNG with an exactly reproducible stream.

    Algorithm (every implementation must reproduce this stream bit-for-bit):

    1. Run scalar splitmix64 from ``seed``: state <- state + 0x9E3779B97F4A7C15
       (mod 2^64); each output is state passed through the splitmix64 finalizer
       (xor-shift 30, * 0xBF58476D1CE4E5B9, xor-shift 27, * 0x94D049BB133111EB,
       xor-shift 31).
    2. The first 256 splitmix64 outputs seed 64 independent xoshiro256**
       generators; lane j's state is outputs (4j, 4j+1, 4j+2, 4j+3).
    3. The produced uint64 stream interleaves the lanes round-robin: output i
       comes from lane i mod 64 at step i div 64. One xoshiro256** step emits
       rotl(s1 * 5, 7) * 9 and advances the state with the standard xorshift
       recurrence (t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3;
       s2 ^= t; s3 = rotl(s3, 45)).

    Derived values are defined on top of that stream:
      * uniform: (u >> 11) * 2^-53, in [0, 1)
      * open-interval uniform for Box-Muller: ((u >> 11) + 1) * 2^-53, in (0, 1]
      * standard normals: Box-Muller pairs, z0 = sqrt(-2 ln a) cos(2 pi b),
        z1 = sqrt(-2 ln a) sin(2 pi b), consuming uniforms (a, b) in order
      * bounded integers: rejection sampling on the raw uint64 stream
    """

    LANES = 64

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        sm = self.seed
        raw = []
        for _ in range(4 * self.LANES):
            sm = (sm + _GOLDEN) & MASK64
            raw.append(_splitmix64_mix(sm))
        states = np.array(raw, dtype=np.uint64).reshape(self.LANES, 4)
        self._s0 = states[:, 0].copy()
        self._s1 = states[:, 1].copy()
        self._s2 = states[:, 2].copy()
        self._s3 = states[:, 3].copy()
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    @staticmethod
    def _rotl(x: np.ndarray, k: int) -> np.ndarray:
        return (x << np.uint64(k)) | (x >> np.uint64(64 - k))

    def _step(self) -> np.ndarray:
        out = self._rotl(self._s1 * np.uint64(5), 7) * np.uint64(9)
        t = self._s1 << np.uint64(17)
        self._s2 ^= self._s0
        self._s3 ^= self._s1
        self._s1 ^= self._s2
        self._s0 ^= self._s3
        self._s2 ^= t
        self._s3 = self._rotl(self._s3, 45)
        return out

    def u64(self, n: int) -> np.ndarray:
        """Next n raw uint64 values of the stream."""
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        chunks = []
        need = n
        if self._pos < self._buf.size:
            take = min(self._buf.size - self._pos, need)
            chunks.append(self._buf[self._pos:self._pos + take])
            self._pos += take
            need -= take
        while need > 0:
            block = self._step()
            if need < self.LANES:
                chunks.append(block[:need])
                self._buf = block
                self._pos = need
                need = 0
            else:
                chunks.append(block)
                need -= self.LANES
        return chunks[0] if len(chunks) == 1 else np.concatenate(chunks)

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, n: int | None = None) -> np.ndarray | float:
        """Uniforms in [0, 1) at float64."""
        m = 1 if n is None else n
        u = (self.u64(m) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return float(u[0]) if n is None else u

    def normal(self, n: int | None = None) -> np.ndarray | float:
        """Standard normals via Box-Muller."""
        m = 1 if n is None else n
        pairs = (m + 1) // 2
        raw = self.u64(2 * pairs)
        a = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
        b = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(a))
        theta = 2.0 * math.pi * b
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:m]
        return float(z[0]) if n is None else z

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection on the uint64 stream."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


@dataclass
class Param:
    """One named tensor plus its gradient and AdamW moment buffers."""

    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Ordered collection of named parameters; insertion order is the
    canonical manifest order for checkpoints."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        z = np.zeros_like(value)
        self._entries[name] = Param(value, z.copy(), z.copy(), z.copy())

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad[...] = 0

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self._entries.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self._entries.items():
            out._entries[name] = Param(p.value.copy(), p.grad.copy(), p.m.copy(), p.v.copy())
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, p in self._entries.items():
            out.add(name, p.value.astype(dtype))
        return out


# ---------------------------------------------------------------------------
# Layer primitives with hand-derived backward passes
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y[i, o] = sum_j W[o, j] x[i, j] + b[o]."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: x has {x.shape[-1]} inputs, W expects {W.shape[1]}")
    return x @ W.T + b


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    dx = dy @ W
    dW = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dW, db


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """Unfold a zero-padded (B, L, c) signal into (B, L, 3c) tap windows,
    laid out as [tap0 channels, tap1 channels, tap2 channels]."""
    B, L, cin = x.shape
    xp = np.zeros((B, L + 2, cin), dtype=x.dtype)
    xp[:, 1:L + 1] = x
    return np.concatenate([xp[:, 0:L], xp[:, 1:L + 1], xp[:, 2:L + 2]], axis=2)


def _kernel_matrix(K: np.ndarray) -> np.ndarray:
    # (c_out, c_in, 3) -> (c_out, 3*c_in) matching the _conv_cols layout
    return K.transpose(0, 2, 1).reshape(K.shape[0], 3 * K.shape[1])


def conv1d(x: np.ndarray, K: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Width-3, stride-1, zero-padding-1 convolution along the time axis.

    x: (B, L, c_in) or (L, c_in); K: (c_out, c_in, 3); b: (c_out,).
    Output length equals input length. Computed as one flattened matmul over
    the unfolded tap windows.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, L, cin = x.shape
    cout, kin, kw = K.shape
    if kw != 3:
        raise ValueError("conv1d: kernel width must be 3")
    if kin != cin:
        raise ValueError(f"conv1d: x has {cin} channels, K expects {kin}")
    cols = _conv_cols(x).reshape(B * L, 3 * cin)
    y = (cols @ _kernel_matrix(K).T + b.astype(x.dtype)).reshape(B, L, cout)
    return y[0] if squeeze else y


def conv1d_backward(dy: np.ndarray, x: np.ndarray, K: np.ndarray):
    squeeze = x.ndim == 2
    if squeeze:
        x, dy = x[None], dy[None]
    B, L, cin = x.shape
    cout = K.shape[0]
    cols = _conv_cols(x).reshape(B * L, 3 * cin)
    dy2 = dy.reshape(B * L, cout)
    dK = (dy2.T @ cols).reshape(cout, 3, cin).transpose(0, 2, 1)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ _kernel_matrix(K)).reshape(B, L, 3, cin)
    dxp = np.zeros((B, L + 2, cin), dtype=x.dtype)
    for k in range(3):
        dxp[:, k:k + L] += dcols[:, :, k]
    dx = dxp[:, 1:L + 1]
    return (dx[0] if squeeze else dx), dK, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def masked_mean_pool(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Average x[b, t, :] over t < lengths[b].

    This single primitive realizes both the scalar-branch mean pooling and the
    conv-branch global average pooling (adaptive pooling to output size 1);
    unmasked pooling is the special case lengths == L.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, L, C = x.shape
    lengths = np.asarray(lengths).reshape(-1)
    if lengths.shape[0] != B:
        raise ValueError("masked_mean_pool: lengths must match batch size")
    if (lengths < 1).any() or (lengths > L).any():
        raise ValueError("masked_mean_pool: lengths must lie in [1, L]")
    mask = (np.arange(L)[None, :] < lengths[:, None]).astype(x.dtype)
    y = (x * mask[:, :, None]).sum(axis=1) / lengths[:, None].astype(x.dtype)
    return y[0] if squeeze else y


def masked_mean_pool_backward(dy: np.ndarray, x_shape: tuple, lengths: np.ndarray, dtype) -> np.ndarray:
    B, L, C = x_shape
    lengths = np.asarray(lengths).reshape(-1)
    mask = (np.arange(L)[None, :] < lengths[:, None]).astype(dtype)
    scale = mask / lengths[:, None].astype(dtype)
    return scale[:, :, None] * dy[:, None, :]


def bce_with_logits(logit, y):
    """Binary cross-entropy from the raw logit, in the stable softplus form:
    max(s, 0) - s*y + log(1 + exp(-|s|)). Never produces NaN for finite s."""
    s = np.asarray(logit, dtype=np.result_type(logit, np.float32))
    yv = np.asarray(y, dtype=s.dtype)
    out = np.maximum(s, 0) - s * yv + np.log1p(np.exp(-np.abs(s)))
    return out if out.ndim else float(out)


def bce_grad(logit, y):
    """d bce / d logit = sigmoid(logit) - y."""
    s = np.asarray(logit)
    return sigmoid(s) - np.asarray(y, dtype=s.dtype if s.dtype.kind == "f" else np.float64)


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------

def kaiming_uniform(shape: tuple, fan_in: int, rng: Rng, dtype=DTYPE) -> np.ndarray:
    """ReLU-gain fan-in uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    return ((rng.uniform(n) * 2.0 - 1.0) * bound).astype(dtype).reshape(shape)


def xavier_uniform(shape: tuple, fan_in: int, fan_out: int, rng: Rng, dtype=DTYPE) -> np.ndarray:
    """Glorot uniform init: U(-sqrt(6/(fan_in+fan_out)), +...)."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return ((rng.uniform(n) * 2.0 - 1.0) * bound).astype(dtype).reshape(shape)
