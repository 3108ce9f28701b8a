"""Attention mechanisms: conventional multi-head, frequency-spectrum (fsatten),
scaled-orthogonal (soatten), head-coupling convolution, orthogonal init.

Heads are carried as stacked (H, N, d) tensors. Pre-convolution attention
weights are row-stochastic; after head-coupling convolution only
nonnegativity is guaranteed (no renormalization is applied).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError
from .spectral import MssWeights

MECHANISMS = ("conventional", "fsatten", "soatten")


@dataclass(frozen=True)
class AttentionTensor:
    """Immutable per-layer snapshot of (H, N, N) attention weights."""

    weights: np.ndarray
    layer_index: int
    mechanism: str

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape[1] != self.weights.shape[2]:
            raise ShapeError(f"AttentionTensor: expected (H, N, N), got shape {self.weights.shape}")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"AttentionTensor: unknown mechanism {self.mechanism!r}")


@dataclass(frozen=True)
class LayerAttention:
    """Attention snapshots of one encoder layer pass.

    `pre_hcc` is the row-stochastic softmax output; `final` is what actually
    multiplies the values (identical to `pre_hcc` unless a head-coupling
    convolution was applied).
    """

    pre_hcc: AttentionTensor
    final: AttentionTensor


def snapshot(weights, layer_index, mechanism):
    arr = np.array(weights.data if isinstance(weights, nm.Tensor) else weights, copy=True)
    arr.setflags(write=False)
    return AttentionTensor(weights=arr, layer_index=layer_index, mechanism=mechanism)


def orthogonal_init(in_dim, out_dim, seed):
    """Deterministic orthogonal matrix of shape (in_dim, out_dim).

    Columns are orthonormal when in_dim >= out_dim, rows otherwise; built by
    QR of a seeded standard-normal draw with sign correction so the result
    is unique for a given seed.
    """
    if in_dim < 1 or out_dim < 1:
        raise ShapeError(f"orthogonal_init: dimensions must be positive, got {in_dim}x{out_dim}")
    rng = np.random.default_rng(int(seed))
    transpose = in_dim < out_dim
    rows, cols = (out_dim, in_dim) if transpose else (in_dim, out_dim)
    gauss = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    return q.T.copy() if transpose else q


def split_heads(x, heads):
    """(N, D) -> (H, N, D/H); head h gets the h-th contiguous column block."""
    n, d = x.shape
    if d % heads != 0:
        raise ConfigError(f"split_heads: width {d} not divisible by {heads} heads")
    return nm.transpose(nm.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def merge_heads(x):
    """(H, N, d) -> (N, H*d), inverse of split_heads."""
    h, n, d = x.shape
    return nm.reshape(nm.transpose(x, (1, 0, 2)), (n, h * d))


def hcc(weights, kernel):
    """Head-coupling convolution: H->H conv over the N x N plane, then ReLU.

    Stride 1, zero padding (K-1)/2 keeps the weight matrix size; K must be
    odd. Output is nonnegative but rows are not renormalized.
    """
    if isinstance(weights, AttentionTensor):
        weights = weights.weights
    w = weights if isinstance(weights, nm.Tensor) else nm.Tensor(weights)
    k = kernel if isinstance(kernel, nm.Tensor) else nm.Tensor(kernel)
    if k.data.ndim != 4 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"hcc: kernel must be (H, H, K, K), got shape {k.shape}")
    if k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
        raise ConfigError(f"hcc: kernel size must be odd and square, got {k.shape[2]}x{k.shape[3]}")
    if w.data.ndim != 3 or w.shape[0] != k.shape[1]:
        raise ShapeError(f"hcc: weights {w.shape} do not match kernel {k.shape}")
    return nm.relu(nm.conv2d(w, k))


def dirac_kernel(heads, size):
    """Identity kernel for hcc: each head passes through unchanged."""
    if size % 2 == 0:
        raise ConfigError(f"dirac_kernel: size must be odd, got {size}")
    k = np.zeros((heads, heads, size, size))
    center = size // 2
    for h in range(heads):
        k[h, h, center, center] = 1.0
    return k


def scaled_dot_attention(q, k, v, scale, hcc_kernel=None):
    """Per-head softmax(Q Kᵀ / scale) followed by the weighted value sum.

    q, k: (H, N, d); v: (H, N, d_v); returns (pre_hcc_weights,
    effective_weights, output) where effective_weights multiplied v. When
    `hcc_kernel` is given, the head-coupling convolution is applied to the
    softmax output before the value product.
    """
    if scale <= 0:
        raise ConfigError(f"scaled_dot_attention: scale must be positive, got {scale}")
    q = q if isinstance(q, nm.Tensor) else nm.Tensor(q)
    k = k if isinstance(k, nm.Tensor) else nm.Tensor(k)
    v = v if isinstance(v, nm.Tensor) else nm.Tensor(v)
    if q.data.ndim != 3 or k.data.ndim != 3 or v.data.ndim != 3:
        raise ShapeError(
            f"scaled_dot_attention: expected (H, N, d) stacks, got {q.shape}/{k.shape}/{v.shape}"
        )
    if q.shape != k.shape or q.shape[:2] != v.shape[:2]:
        raise ShapeError(
            f"scaled_dot_attention: inconsistent head shapes {q.shape}/{k.shape}/{v.shape}"
        )
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 2, 1))), 1.0 / float(scale))
    weights = nm.softmax_rows(scores)
    effective = hcc(weights, hcc_kernel) if hcc_kernel is not None else weights
    output = nm.matmul(effective, v)
    return weights, effective, output


def _qk_heads(source, heads, mss_q, mss_k):
    """Q/K head stacks from a shared (tokens, F) source.

    mss_q / mss_k are either (H, tokens, F) spectrum-scaling parameters
    (Hadamard route) or (H, F, F) dense maps (the linear ablation arm).
    """
    tiled = nm.tile_planes(source, heads)
    if mss_q.shape[1:] == source.shape:
        return nm.mul(tiled, mss_q), nm.mul(tiled, mss_k)
    return nm.matmul(tiled, mss_q), nm.matmul(tiled, mss_k)


class ConventionalAttention:
    """Standard multi-head self-attention over D-dimensional tokens (scale sqrt(D/H))."""

    mechanism = "conventional"

    def __init__(self, width, heads, make_param):
        if width % heads != 0:
            raise ConfigError(f"attention width {width} not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        std = 1.0 / math.sqrt(width)
        self.wq = make_param("wq", ("normal", std, (width, width)))
        self.bq = make_param("bq", ("zeros", (width,)))
        self.wk = make_param("wk", ("normal", std, (width, width)))
        self.bk = make_param("bk", ("zeros", (width,)))
        self.wv = make_param("wv", ("normal", std, (width, width)))
        self.bv = make_param("bv", ("zeros", (width,)))
        self.wo = make_param("wo", ("normal", std, (width, width)))
        self.bo = make_param("bo", ("zeros", (width,)))

    def forward(self, hidden, qk_source, layer_index, capture=None):
        q = split_heads(nm.add(nm.matmul(hidden, self.wq), self.bq), self.heads)
        k = split_heads(nm.add(nm.matmul(hidden, self.wk), self.bk), self.heads)
        v = split_heads(nm.add(nm.matmul(hidden, self.wv), self.bv), self.heads)
        weights, effective, out = scaled_dot_attention(q, k, v, math.sqrt(self.head_dim))
        if capture is not None:
            snap = snapshot(weights, layer_index, self.mechanism)
            capture.append(LayerAttention(pre_hcc=snap, final=snap))
        return nm.add(nm.matmul(merge_heads(out), self.wo), self.bo)


class SpectrumAttention:
    """Q/K from a shared (tokens, F) source via per-head spectrum scaling.

    Covers both the frequency-spectrum mechanism (source = amplitude matrix)
    and the scaled-orthogonal mechanism (source = orthogonally-initialized
    embedding, optionally with head-coupling convolution on the weights).
    The value path stays a conventional linear projection of the hidden
    state, and scores are scaled by sqrt(F).
    """

    def __init__(self, mechanism, width, heads, tokens, bin_count, make_param,
                 mss_enabled=True, kernel_size=None, kernel_noise=0.01):
        if mechanism not in ("fsatten", "soatten"):
            raise ConfigError(f"SpectrumAttention: unsupported mechanism {mechanism!r}")
        if width % heads != 0:
            raise ConfigError(f"attention width {width} not divisible by {heads} heads")
        self.mechanism = mechanism
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.tokens = tokens
        self.bin_count = bin_count
        self.mss_enabled = mss_enabled
        std = 1.0 / math.sqrt(width)
        if mss_enabled:
            # All-ones start: untrained scores are raw source correlation.
            self.mss_q = MssWeights(make_param("mss_q", ("ones", (heads, tokens, bin_count))))
            self.mss_k = MssWeights(make_param("mss_k", ("ones", (heads, tokens, bin_count))))
        else:
            lin_std = 1.0 / math.sqrt(bin_count)
            self.lin_q = make_param("lin_q", ("normal", lin_std, (heads, bin_count, bin_count)))
            self.lin_k = make_param("lin_k", ("normal", lin_std, (heads, bin_count, bin_count)))
        self.wv = make_param("wv", ("normal", std, (width, width)))
        self.bv = make_param("bv", ("zeros", (width,)))
        self.wo = make_param("wo", ("normal", std, (width, width)))
        self.bo = make_param("bo", ("zeros", (width,)))
        self.kernel = None
        if kernel_size is not None:
            init = dirac_kernel(heads, kernel_size)
            self.kernel = make_param("hcc_kernel", ("dirac_noise", init, kernel_noise))

    def forward(self, hidden, qk_source, layer_index, capture=None):
        if qk_source is None:
            raise ShapeError(f"{self.mechanism}: missing Q/K source matrix")
        if qk_source.shape != (self.tokens, self.bin_count):
            raise ShapeError(
                f"{self.mechanism}: source shape {qk_source.shape} does not match "
                f"({self.tokens}, {self.bin_count})"
            )
        if self.mss_enabled:
            q, k = _qk_heads(qk_source, self.heads, self.mss_q.param, self.mss_k.param)
        else:
            q, k = _qk_heads(qk_source, self.heads, self.lin_q, self.lin_k)
        v = split_heads(nm.add(nm.matmul(hidden, self.wv), self.bv), self.heads)
        weights, effective, out = scaled_dot_attention(
            q, k, v, math.sqrt(self.bin_count), hcc_kernel=self.kernel
        )
        if capture is not None:
            capture.append(LayerAttention(
                pre_hcc=snapshot(weights, layer_index, self.mechanism),
                final=snapshot(effective, layer_index, self.mechanism),
            ))
        return nm.add(nm.matmul(merge_heads(out), self.wo), self.bo)


def conventional_mha_forward(hidden, layer, layer_index=0):
    """One conventional attention pass; returns (mixed output, LayerAttention)."""
    capture = []
    hidden = hidden if isinstance(hidden, nm.Tensor) else nm.Tensor(hidden)
    out = layer.forward(hidden, None, layer_index, capture)
    return out, capture[0]


def fsatten_forward(x_raw, hidden, layer, layer_index=0):
    """Frequency-spectrum attention on raw (C, L) input and (C, D) hidden state.

    The amplitude matrix is derived from x_raw; Q/K come from per-head
    spectrum scaling of it, V from a linear projection of the hidden state.
    """
    from .spectral import amplitude_matrix

    amps = nm.Tensor(amplitude_matrix(np.asarray(x_raw, dtype=np.float64)))
    hidden = hidden if isinstance(hidden, nm.Tensor) else nm.Tensor(hidden)
    capture = []
    out = layer.forward(hidden, amps, layer_index, capture)
    return out, capture[0]


def soatten_forward(tokens_raw, hidden, layer, qk_embedding, layer_index=0):
    """Scaled-orthogonal attention on raw tokens and their hidden state.

    tokens_raw: (N_tok, in_dim); qk_embedding: (in_dim, F) orthogonally
    initialized matrix (a Parameter in trained models). The embedding's
    orthogonality is not re-enforced after gradient updates.
    """
    tokens = tokens_raw if isinstance(tokens_raw, nm.Tensor) else nm.Tensor(tokens_raw)
    embed = qk_embedding if isinstance(qk_embedding, nm.Tensor) else nm.Tensor(qk_embedding)
    hidden = hidden if isinstance(hidden, nm.Tensor) else nm.Tensor(hidden)
    source = nm.matmul(tokens, embed)
    capture = []
    out = layer.forward(hidden, source, layer_index, capture)
    return out, capture[0]
