"""The two embedding channels.

The heterogeneous channel runs typed multi-head attention over the
co-reference graph: per-node-kind key/query/value projections, per-relation
attention and message matrices, a scalar prior per relation, softmax pooled
over all in-neighbors of a target, head concatenation, then a per-kind
output projection squashed by sigmoid and added to a residual of the
previous layer (resized when the layer changes width).

The homogeneous channel runs shared-weight attention over the text graph:
per-head projections, logits from an attention vector applied to the
concatenated target/source features, softmax over in-neighbors (self-loops
included), attention-weighted sums, head averaging, sigmoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graphs import RELATION_KINDS, EcgGraph, EtgGraph


@dataclass
class HgtParams:
    heads: int
    out_dim: int
    key: dict[str, tuple[Tensor, Tensor]]
    query: dict[str, tuple[Tensor, Tensor]]
    value: dict[str, tuple[Tensor, Tensor]]
    out_proj: dict[str, tuple[Tensor, Tensor]]
    att: dict[str, list[Tensor]]  # relation -> per-head (dk, dk) matrices
    msg: dict[str, list[Tensor]]
    prior: dict[str, Tensor]  # relation -> scalar
    residual_proj: dict[str, tuple[Tensor, Tensor]] | None = None

    @property
    def head_dim(self) -> int:
        return self.out_dim // self.heads


@dataclass
class GatParams:
    heads: int
    out_dim: int
    weight: list[Tensor]  # per head (d_in, out_dim)
    attn: list[Tensor]  # per head (2 * out_dim,)


@dataclass
class ChannelOutput:
    embeddings: dict[str, Tensor]
    # (relation, head) -> per-edge attention weights, edge order as stored
    attention: dict[tuple[str, int], np.ndarray]


def init_hgt_params(
    store: ParamStore,
    prefix: str,
    kinds: dict[str, int],
    relations: tuple[str, ...],
    d_in: int,
    d_out: int,
    heads: int,
    resize_residual: bool,
) -> HgtParams:
    if d_out % heads != 0:
        raise ValueError(f"hidden dim {d_out} not divisible by {heads} heads")
    dk = d_out // heads

    def linear(name: str, rows: int, cols: int) -> tuple[Tensor, Tensor]:
        return (
            store.glorot(f"{prefix}.{name}.weight", rows, cols),
            store.zeros(f"{prefix}.{name}.bias", (cols,)),
        )

    key = {k: linear(f"key.{k}", d_in, d_out) for k in kinds}
    query = {k: linear(f"query.{k}", d_in, d_out) for k in kinds}
    value = {k: linear(f"value.{k}", d_in, d_out) for k in kinds}
    out_proj = {k: linear(f"out.{k}", d_out, d_out) for k in kinds}
    att = {r: [store.glorot(f"{prefix}.att.{r}.h{h}", dk, dk) for h in range(heads)] for r in relations}
    msg = {r: [store.glorot(f"{prefix}.msg.{r}.h{h}", dk, dk) for h in range(heads)] for r in relations}
    prior = {r: store.full(f"{prefix}.prior.{r}", (), 1.0) for r in relations}
    residual = {k: linear(f"residual.{k}", d_in, d_out) for k in kinds} if resize_residual else None
    return HgtParams(
        heads=heads,
        out_dim=d_out,
        key=key,
        query=query,
        value=value,
        out_proj=out_proj,
        att=att,
        msg=msg,
        prior=prior,
        residual_proj=residual,
    )


def init_gat_params(store: ParamStore, prefix: str, d_in: int, d_out: int, heads: int) -> GatParams:
    weight = [store.glorot(f"{prefix}.head{h}.weight", d_in, d_out) for h in range(heads)]
    attn = [
        store.glorot(f"{prefix}.head{h}.attn", 2 * d_out, 1, shape=(2 * d_out,))
        for h in range(heads)
    ]
    return GatParams(heads=heads, out_dim=d_out, weight=weight, attn=attn)


def _affine(x: Tensor, wb: tuple[Tensor, Tensor]) -> Tensor:
    w, b = wb
    return ad.add(ad.matmul(x, w), b)


def hgt_layer(g: EcgGraph, h_prev: dict[str, Tensor], params: HgtParams) -> ChannelOutput:
    """One heterogeneous attention layer over the co-reference graph.

    Attention per head for target node j: softmax over all in-edges (i -> j),
    pooled across relation kinds, of (K_i W_att Q_j) * prior / sqrt(head dim).
    Messages V_i W_msg are attention-weighted, summed per target, and heads
    concatenated; the result goes through sigmoid(per-kind linear) plus the
    residual. Targets with no in-neighbors keep the bare residual.
    """
    for rel in g.edges:
        if rel not in params.att:
            raise ValueError(f"no parameters for relation kind {rel!r}")
    dk = params.head_dim
    inv_sqrt_dk = 1.0 / math.sqrt(dk)

    kinds = [k for k, n in g.node_counts.items() if n > 0]
    k_all = {k: _affine(h_prev[k], params.key[k]) for k in kinds}
    q_all = {k: _affine(h_prev[k], params.query[k]) for k in kinds}
    v_all = {k: _affine(h_prev[k], params.value[k]) for k in kinds}

    attention: dict[tuple[str, int], np.ndarray] = {}
    out: dict[str, Tensor] = {}
    for target in kinds:
        n_t = g.node_counts[target]
        incoming = [
            rel
            for rel in g.edges
            if RELATION_KINDS[rel][1] == target and g.edges[rel][0].shape[0] > 0
        ]
        residual = h_prev[target]
        if params.residual_proj is not None:
            residual = _affine(residual, params.residual_proj[target])
        if not incoming:
            out[target] = residual
            continue

        head_outputs: list[Tensor] = []
        seg = np.concatenate([g.edges[rel][1] for rel in incoming])
        for h in range(params.heads):
            logit_parts: list[Tensor] = []
            msg_parts: list[Tensor] = []
            for rel in incoming:
                src_idx, dst_idx = g.edges[rel]
                src_kind = RELATION_KINDS[rel][0]
                k_h = ad.col_slice(k_all[src_kind], h * dk, (h + 1) * dk)
                q_h = ad.col_slice(q_all[target], h * dk, (h + 1) * dk)
                v_h = ad.col_slice(v_all[src_kind], h * dk, (h + 1) * dk)
                kw = ad.matmul(ad.take_rows(k_h, src_idx), params.att[rel][h])
                raw = ad.rows_dot(kw, ad.take_rows(q_h, dst_idx))
                logit_parts.append(ad.scale(ad.mul(raw, params.prior[rel]), inv_sqrt_dk))
                msg_parts.append(ad.matmul(ad.take_rows(v_h, src_idx), params.msg[rel][h]))
            logits = logit_parts[0] if len(logit_parts) == 1 else ad.concat(logit_parts, axis=0)
            att = ad.segment_softmax(logits, seg, n_t)
            offset = 0
            for rel in incoming:
                m = g.edges[rel][0].shape[0]
                attention[(rel, h)] = att.value[offset : offset + m].copy()
                offset += m
            messages = msg_parts[0] if len(msg_parts) == 1 else ad.concat(msg_parts, axis=0)
            weighted = ad.mul(ad.reshape(att, (att.shape[0], 1)), messages)
            head_outputs.append(ad.segment_sum(weighted, seg, n_t))
        agg = head_outputs[0] if params.heads == 1 else ad.concat(head_outputs, axis=1)
        transformed = ad.sigmoid(_affine(agg, params.out_proj[target]))
        has_neighbors = np.zeros((n_t, 1))
        has_neighbors[np.unique(seg)] = 1.0
        out[target] = ad.add(ad.mul(ad.const(has_neighbors), transformed), residual)
    return ChannelOutput(embeddings=out, attention=attention)


def gat_layer(
    g: EtgGraph,
    h_prev: Tensor,
    params: GatParams,
    mean_mode: str = "heads",
) -> ChannelOutput:
    """One homogeneous attention layer over the text graph.

    ``mean_mode="heads"`` averages the per-head attention-weighted sums;
    ``"neighbors"`` additionally divides each target's aggregate by its
    in-neighbor count before averaging heads.
    """
    if mean_mode not in ("heads", "neighbors"):
        raise ValueError(f"unknown gat mean mode {mean_mode!r}")
    n = g.num_nodes
    if h_prev.shape[0] != n:
        raise ValueError(f"feature rows {h_prev.shape[0]} do not match {n} nodes")
    self_loops = set(g.src[g.src == g.dst].tolist())
    missing = [i for i in range(n) if i not in self_loops]
    if missing:
        raise ValueError(f"node {missing[0]} has no self-loop")

    attention: dict[tuple[str, int], np.ndarray] = {}
    head_outputs: list[Tensor] = []
    inv_degree = None
    if mean_mode == "neighbors":
        inv_degree = ad.const(1.0 / np.bincount(g.dst, minlength=n)[:, None])
    for h in range(params.heads):
        projected = ad.matmul(h_prev, params.weight[h])
        src_feat = ad.take_rows(projected, g.src)
        dst_feat = ad.take_rows(projected, g.dst)
        pair = ad.concat([dst_feat, src_feat], axis=1)
        logits = ad.reshape(
            ad.matmul(pair, ad.reshape(params.attn[h], (2 * params.out_dim, 1))),
            (g.src.shape[0],),
        )
        att = ad.segment_softmax(logits, g.dst, n)
        attention[("related", h)] = att.value.copy()
        weighted = ad.mul(ad.reshape(att, (att.shape[0], 1)), src_feat)
        agg = ad.segment_sum(weighted, g.dst, n)
        if inv_degree is not None:
            agg = ad.mul(agg, inv_degree)
        head_outputs.append(agg)
    total = head_outputs[0]
    for extra in head_outputs[1:]:
        total = ad.add(total, extra)
    merged = ad.sigmoid(ad.scale(total, 1.0 / params.heads))
    return ChannelOutput(embeddings={"evidence": merged}, attention=attention)
