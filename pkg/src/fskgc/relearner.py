"""Meta relation learner: set-transformer encoding of the support set,
attention-weighted transfer from related tasks, and the merge layer.

The transformer carries no positional parameters, so the meta-representation
is permutation-invariant in the support triplets by construction.  The merge
layer is initialized to pass the base representation through unchanged when
the transferred component is zero, which keeps the warm-up phase (transfer
disabled) continuous with the transfer phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numkit import (
    Tensor, add, concat, gather, layer_norm, matmul, mul, relu, reshape,
    softmax, tanh, tmean, transpose,
)


def _glorot(shape, rng):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MrlParams:
    dim: int
    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ff1: Tensor
    ff1_bias: Tensor
    ff2: Tensor
    ff2_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    out_w1: Tensor
    out_b1: Tensor
    out_w2: Tensor
    out_b2: Tensor
    transfer_w: Tensor
    merge_w: Tensor
    merge_b: Tensor

    @classmethod
    def create(cls, dim: int, heads: int, rng: np.random.Generator) -> "MrlParams":
        width = 3 * dim
        if width % heads != 0:
            raise ContractError(
                f"token width {width} is not divisible by {heads} heads"
            )
        ff = 4 * width

        def p(shape):
            return Tensor(_glorot(shape, rng), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape), requires_grad=True)

        merge_init = np.zeros((2 * dim, dim))
        merge_init[:dim, :] = np.eye(dim)
        return cls(
            dim=dim, heads=heads,
            wq=p((width, width)), bq=zeros(width),
            wk=p((width, width)), bk=zeros(width),
            wv=p((width, width)), bv=zeros(width),
            wo=p((width, width)), bo=zeros(width),
            ln1_gain=ones(width), ln1_bias=zeros(width),
            ff1=p((width, ff)), ff1_bias=zeros(ff),
            ff2=p((ff, width)), ff2_bias=zeros(width),
            ln2_gain=ones(width), ln2_bias=zeros(width),
            out_w1=p((width, dim)), out_b1=zeros(dim),
            out_w2=p((dim, dim)), out_b2=zeros(dim),
            transfer_w=p((dim, dim)),
            merge_w=Tensor(merge_init, requires_grad=True),
            merge_b=zeros(dim),
        )

    def tensors(self) -> dict[str, Tensor]:
        names = [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain",
            "ln1_bias", "ff1", "ff1_bias", "ff2", "ff2_bias", "ln2_gain",
            "ln2_bias", "out_w1", "out_b1", "out_w2", "out_b2", "transfer_w",
            "merge_w", "merge_b",
        ]
        return {f"mrl.{n}": getattr(self, n) for n in names}


@dataclass
class MetaRelation:
    """Relation representation and its transfer/adaptation variants."""

    relation: int
    base: Tensor
    transferred: Tensor | None = None
    merged: Tensor | None = None
    adapted: Tensor | None = None


def encode_support(ent_emb: Tensor, rel_emb: Tensor,
                   pairs: list[tuple[int, int]], relation: int) -> Tensor:
    """Per-triplet encodings h_i || R || t_i, shape (K, 3d)."""
    if not pairs:
        raise ContractError("support set must contain at least one pair")
    heads = gather(ent_emb, [h for h, _ in pairs])
    tails = gather(ent_emb, [t for _, t in pairs])
    rel_rows = gather(rel_emb, [relation] * len(pairs))
    return concat([heads, rel_rows, tails], axis=-1)


def _attention_block(x: Tensor, params: MrlParams) -> Tensor:
    b, k, width = x.data.shape
    h = params.heads
    dh = width // h
    scale = 1.0 / np.sqrt(dh)

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (b, k, h, dh)), (0, 2, 1, 3))

    q = split(add(matmul(x, params.wq), params.bq))
    key = split(add(matmul(x, params.wk), params.bk))
    v = split(add(matmul(x, params.wv), params.bv))
    scores = mul(matmul(q, transpose(key, (0, 1, 3, 2))), scale)
    ctx = matmul(softmax(scores), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, k, width))
    return add(matmul(ctx, params.wo), params.bo)


def transformer_encode(x: Tensor, params: MrlParams) -> Tensor:
    """One encoder layer (self-attention + feed-forward, post-norm)."""
    attn = _attention_block(x, params)
    h1 = layer_norm(add(x, attn), params.ln1_gain, params.ln1_bias)
    ff = add(
        matmul(relu(add(matmul(h1, params.ff1), params.ff1_bias)), params.ff2),
        params.ff2_bias,
    )
    return layer_norm(add(h1, ff), params.ln2_gain, params.ln2_bias)


def mrl_forward(support: Tensor, params: MrlParams) -> Tensor:
    """Meta-representation R: transformer over support tokens, a per-token
    MLP down to width d, then the mean over tokens.

    ``support`` is (K, 3d) for one task or (B, K, 3d) for a batch; the
    result is (d,) or (B, d) accordingly.
    """
    single = support.data.ndim == 2
    if single:
        support = reshape(support, (1,) + support.data.shape)
    if support.data.ndim != 3 or support.data.shape[-1] != 3 * params.dim:
        raise ContractError(
            f"support encodings must be (..., K, {3 * params.dim}), "
            f"got {support.data.shape}"
        )
    if support.data.shape[1] < 1:
        raise ContractError("support set must contain at least one token")
    tokens = transformer_encode(support, params)
    hidden = tanh(add(matmul(tokens, params.out_w1), params.out_b1))
    mapped = add(matmul(hidden, params.out_w2), params.out_b2)
    pooled = tmean(mapped, axis=1)
    return reshape(pooled, (params.dim,)) if single else pooled


def transfer_aggregate(alpha: Tensor, neighbor_base: Tensor,
                       params: MrlParams) -> Tensor:
    """Transferred representation tanh(sum_j alpha_j W R_j)."""
    if alpha.data.ndim != 1 or alpha.data.shape[0] != neighbor_base.data.shape[0]:
        raise ContractError(
            f"attention weights {alpha.data.shape} do not match "
            f"{neighbor_base.data.shape[0]} neighbor representations"
        )
    mixed = reshape(
        matmul(reshape(alpha, (1, -1)), neighbor_base), (params.dim,)
    )
    return tanh(
        reshape(matmul(params.transfer_w, reshape(mixed, (params.dim, 1))),
                (params.dim,))
    )


def merge(base: Tensor, transferred: Tensor, params: MrlParams) -> Tensor:
    """Fused representation MLP([R || R']); identity on R at initialization."""
    if base.data.shape != transferred.data.shape:
        raise ContractError(
            f"merge inputs disagree: {base.data.shape} vs "
            f"{transferred.data.shape}"
        )
    joint = concat([base, transferred], axis=-1)
    single = joint.data.ndim == 1
    if single:
        joint = reshape(joint, (1, -1))
    out = add(matmul(joint, params.merge_w), params.merge_b)
    return reshape(out, (params.dim,)) if single else out
