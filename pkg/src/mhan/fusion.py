"""Per-node fusion of the two channel embeddings.

Each evidence node ends a layer with two d-vectors, one per channel, and
one of three mechanisms blends them: a perceptron-scored softmax convex
combination, a learned per-node per-dimension gate squashed into (0, 1), or
multi-head attention where the co-reference embedding queries the stacked
pair. Element nodes bypass fusion entirely.

All functions accept (n, d) matrices and fuse row by row; 1-D inputs are
treated as a single row and returned 1-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


@dataclass
class AdaptiveFusionParams:
    """2-layer perceptron (d -> hidden, tanh, hidden -> 1) scoring each row.

    The output layer carries no bias: a constant added to both channel
    scores cancels in the softmax, so it could never train.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor


@dataclass
class SharedMatrixParams:
    """Free per-node gate logits; sigmoid at use keeps the blend in (0, 1)."""

    raw: Tensor

    def gate(self) -> Tensor:
        return ad.sigmoid(self.raw)


@dataclass
class FusionalAttentionParams:
    heads: int
    dim: int
    q_proj: list[tuple[Tensor, Tensor]]  # per head (d, d/N) + bias
    k_proj: list[tuple[Tensor, Tensor]]
    v_proj: list[tuple[Tensor, Tensor]]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def init_adaptive_params(store: ParamStore, prefix: str, dim: int) -> AdaptiveFusionParams:
    hidden = max(1, dim // 2)
    return AdaptiveFusionParams(
        w1=store.glorot(f"{prefix}.mlp.w1", dim, hidden),
        b1=store.zeros(f"{prefix}.mlp.b1", (hidden,)),
        w2=store.glorot(f"{prefix}.mlp.w2", hidden, 1),
    )


def init_shared_params(store: ParamStore, prefix: str, num_nodes: int, dim: int) -> SharedMatrixParams:
    # zero logits start the gate at an even 0.5/0.5 blend
    return SharedMatrixParams(raw=store.zeros(f"{prefix}.gate", (num_nodes, dim)))


def init_fusional_params(store: ParamStore, prefix: str, dim: int, heads: int) -> FusionalAttentionParams:
    if dim % heads != 0:
        raise ValueError(f"fusion dim {dim} not divisible by {heads} heads")
    dk = dim // heads

    def linear(name: str, h: int) -> tuple[Tensor, Tensor]:
        return (
            store.glorot(f"{prefix}.{name}.h{h}.weight", dim, dk),
            store.zeros(f"{prefix}.{name}.h{h}.bias", (dk,)),
        )

    return FusionalAttentionParams(
        heads=heads,
        dim=dim,
        q_proj=[linear("q", h) for h in range(heads)],
        k_proj=[linear("k", h) for h in range(heads)],
        v_proj=[linear("v", h) for h in range(heads)],
    )


def _as_rows(x: Tensor) -> tuple[Tensor, bool]:
    if x.value.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def _restore(x: Tensor, was_vector: bool) -> Tensor:
    return ad.reshape(x, (x.shape[1],)) if was_vector else x


def _check_dims(hc: Tensor, ht: Tensor) -> None:
    if hc.value.shape != ht.value.shape:
        raise ad.ShapeError(f"channel embeddings differ in shape: {hc.value.shape} vs {ht.value.shape}")


def _affine(x: Tensor, wb: tuple[Tensor, Tensor]) -> Tensor:
    w, b = wb
    return ad.add(ad.matmul(x, w), b)


def adaptive_fuse(hc: Tensor, ht: Tensor, params: AdaptiveFusionParams) -> Tensor:
    """Softmax over two perceptron scores, then the convex combination."""
    _check_dims(hc, ht)
    hc, was_vector = _as_rows(hc)
    ht, _ = _as_rows(ht)

    def score(x: Tensor) -> Tensor:
        hidden = ad.tanh(ad.add(ad.matmul(x, params.w1), params.b1))
        return ad.matmul(hidden, params.w2)  # (n, 1)

    scores = ad.concat([score(hc), score(ht)], axis=1)  # (n, 2)
    alpha = ad.softmax(scores, axis=1)
    fused = ad.add(
        ad.mul(ad.col_slice(alpha, 0, 1), hc),
        ad.mul(ad.col_slice(alpha, 1, 2), ht),
    )
    return _restore(fused, was_vector)


def shared_matrix_fuse(hc: Tensor, ht: Tensor, gate: Tensor) -> Tensor:
    """gate * hc + (1 - gate) * ht elementwise; gate rows lie in (0, 1)."""
    _check_dims(hc, ht)
    if gate.value.shape != hc.value.shape:
        raise ad.ShapeError(f"gate shape {gate.value.shape} does not match embeddings {hc.value.shape}")
    ones = ad.const(1.0)
    return ad.add(ad.mul(gate, hc), ad.mul(ad.sub(ones, gate), ht))


def fusional_attention(hc: Tensor, ht: Tensor, params: FusionalAttentionParams) -> Tensor:
    """Two-row attention per head: the co-reference embedding is the query,
    the stacked (co-reference, text) pair provides keys and values."""
    _check_dims(hc, ht)
    hc, was_vector = _as_rows(hc)
    ht, _ = _as_rows(ht)
    if hc.shape[1] != params.dim:
        raise ad.ShapeError(f"expected dim {params.dim}, got {hc.shape[1]}")
    inv_sqrt = 1.0 / math.sqrt(params.head_dim)
    head_outputs = []
    for h in range(params.heads):
        q = _affine(hc, params.q_proj[h])  # (n, dk)
        k_c = _affine(hc, params.k_proj[h])
        k_t = _affine(ht, params.k_proj[h])
        v_c = _affine(hc, params.v_proj[h])
        v_t = _affine(ht, params.v_proj[h])
        logits = ad.concat(
            [
                ad.reshape(ad.scale(ad.rows_dot(q, k_c), inv_sqrt), (q.shape[0], 1)),
                ad.reshape(ad.scale(ad.rows_dot(q, k_t), inv_sqrt), (q.shape[0], 1)),
            ],
            axis=1,
        )  # (n, 2)
        att = ad.softmax(logits, axis=1)
        head_outputs.append(
            ad.add(
                ad.mul(ad.col_slice(att, 0, 1), v_c),
                ad.mul(ad.col_slice(att, 1, 2), v_t),
            )
        )
    fused = head_outputs[0] if params.heads == 1 else ad.concat(head_outputs, axis=1)
    return _restore(fused, was_vector)
