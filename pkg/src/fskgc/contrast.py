"""Contrastive relation refinement.

A triple's context is the union of outgoing (relation, entity) tuples of its
head and tail in the background graph.  Contexts are encoded by one
multi-head self-attention layer followed by learned-query pooling, giving a
convex combination of the tuple encodings.  A temperature-scaled softmax
over cosine similarities separates the true context from corrupted ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kgdata.graph import KnowledgeGraph, Triple
from .numkit import (
    Tensor, add, concat, cosine, gather, log, matmul, mul, reshape, softmax,
    transpose, tsum,
)

_MASK_OFF = -1e30


def _glorot(shape, rng):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Context:
    """Deduplicated (relation, entity) neighbor tuples of a target triple."""

    tuples: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.tuples)


def gather_context(graph: KnowledgeGraph, triple: Triple, cap: int = 50,
                   rng: np.random.Generator | None = None) -> Context:
    """Union of outgoing tuples of the triple's head and tail.

    The target triple itself never contributes a tuple.  When more than
    ``cap`` tuples exist, a uniform random subset of size ``cap`` is kept.
    """
    outgoing = graph.outgoing_index()
    tuples: set[tuple[int, int]] = set()
    for node in (triple.head, triple.tail):
        if node >= len(outgoing):
            continue
        for idx in outgoing[node]:
            t = graph.triples[idx]
            if t == triple:
                continue
            tuples.add((t.relation, t.tail))
    ordered = sorted(tuples)
    if cap and len(ordered) > cap:
        if rng is None:
            rng = np.random.default_rng(0)
        keep = rng.choice(len(ordered), size=cap, replace=False)
        ordered = [ordered[i] for i in sorted(keep)]
    return Context(ordered)


def corrupt_context(ctx: Context, n_relations: int, n_entities: int,
                    rng: np.random.Generator) -> Context:
    """A false context differing from ``ctx`` in at least one tuple.

    Each tuple is independently corrupted with probability 1/2 by replacing
    either its relation or its entity with a uniform draw.
    """
    if not ctx.tuples:
        raise ContractError("cannot corrupt an empty context")
    while True:
        corrupted = []
        for rel, ent in ctx.tuples:
            if rng.random() < 0.5:
                if rng.random() < 0.5:
                    rel = int(rng.integers(n_relations))
                else:
                    ent = int(rng.integers(n_entities))
            corrupted.append((rel, ent))
        if corrupted != ctx.tuples:
            return Context(corrupted)


@dataclass
class MsaParams:
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
    pool_q: Tensor

    @classmethod
    def create(cls, dim: int, heads: int, rng: np.random.Generator) -> "MsaParams":
        width = 2 * dim
        if width % heads != 0:
            raise ContractError(
                f"context width {width} is not divisible by {heads} heads"
            )

        def p(shape):
            return Tensor(_glorot(shape, rng), requires_grad=True)

        return cls(
            dim=dim, heads=heads,
            wq=p((width, width)), bq=Tensor(np.zeros(width), requires_grad=True),
            wk=p((width, width)), bk=Tensor(np.zeros(width), requires_grad=True),
            wv=p((width, width)), bv=Tensor(np.zeros(width), requires_grad=True),
            wo=p((width, width)), bo=Tensor(np.zeros(width), requires_grad=True),
            pool_q=Tensor(rng.normal(scale=1.0 / np.sqrt(width), size=width),
                          requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "pool_q"]
        return {f"msa.{n}": getattr(self, n) for n in names}


def context_tokens(contexts: list[Context], ent_emb: Tensor,
                   rel_emb: Tensor) -> tuple[Tensor, np.ndarray]:
    """Padded token stack (n, T, 2d) plus a validity mask (n, T).

    Padding rows gather row 0 of the tables but are masked out of both the
    attention and the pooling, so they never influence the encoding.
    """
    if not contexts:
        raise ContractError("context batch must be non-empty")
    if any(len(c) == 0 for c in contexts):
        raise ContractError("empty context in batch; caller must skip these")
    t_max = max(len(c) for c in contexts)
    n = len(contexts)
    rel_ids = np.zeros((n, t_max), dtype=np.int64)
    ent_ids = np.zeros((n, t_max), dtype=np.int64)
    mask = np.zeros((n, t_max))
    for i, ctx in enumerate(contexts):
        for j, (rel, ent) in enumerate(ctx.tuples):
            rel_ids[i, j] = rel
            ent_ids[i, j] = ent
            mask[i, j] = 1.0
    d = ent_emb.data.shape[1]
    rel_rows = reshape(gather(rel_emb, rel_ids.reshape(-1)), (n, t_max, d))
    ent_rows = reshape(gather(ent_emb, ent_ids.reshape(-1)), (n, t_max, d))
    tokens = concat([rel_rows, ent_rows], axis=-1)
    return tokens, mask


def encode_contexts(contexts: list[Context], ent_emb: Tensor, rel_emb: Tensor,
                    params: MsaParams) -> Tensor:
    """Context embeddings (n, 2d): MSA then learned-query softmax pooling."""
    tokens, mask = context_tokens(contexts, ent_emb, rel_emb)
    n, t_max, width = tokens.data.shape
    h = params.heads
    dh = width // h
    scale = 1.0 / np.sqrt(dh)

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (n, t_max, h, dh)), (0, 2, 1, 3))

    q = split(add(matmul(tokens, params.wq), params.bq))
    k = split(add(matmul(tokens, params.wk), params.bk))
    v = split(add(matmul(tokens, params.wv), params.bv))
    key_mask = Tensor((mask - 1.0).reshape(n, 1, 1, t_max) * -_MASK_OFF)
    scores = add(mul(matmul(q, transpose(k, (0, 1, 3, 2))), scale), key_mask)
    ctx = matmul(softmax(scores), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t_max, width))
    msa_out = add(matmul(ctx, params.wo), params.bo)

    pool_scores = mul(
        reshape(matmul(msa_out, reshape(params.pool_q, (width, 1))),
                (n, t_max)),
        1.0 / np.sqrt(width),
    )
    pool_mask = Tensor((mask - 1.0) * -_MASK_OFF)
    alpha = softmax(add(pool_scores, pool_mask))
    pooled = matmul(reshape(alpha, (n, 1, t_max)), tokens)
    return reshape(pooled, (n, width))


def encode_context(ctx: Context, ent_emb: Tensor, rel_emb: Tensor,
                   params: MsaParams) -> Tensor:
    """Single-context embedding c (2d,); the empty context is a contract error."""
    if len(ctx) == 0:
        raise ContractError("cannot encode an empty context")
    return reshape(encode_contexts([ctx], ent_emb, rel_emb, params),
                   (2 * params.dim,))


def contrastive_loss(anchor: Tensor, true_ctx: Tensor, false_ctxs: Tensor,
                     tau: float) -> Tensor:
    """-log softmax probability of the true context among true + falses.

    ``anchor`` and ``true_ctx`` are (2d,); ``false_ctxs`` is (N, 2d) with
    N >= 1.  The true context appears in the denominator, so the loss is
    always nonnegative.
    """
    if tau <= 0:
        raise ContractError("temperature must be positive")
    if false_ctxs.data.ndim != 2 or false_ctxs.data.shape[0] < 1:
        raise ContractError("need at least one false context")
    sims = concat(
        [reshape(cosine(anchor, true_ctx), (1,)), cosine(anchor, false_ctxs)],
        axis=0,
    )
    probs = softmax(mul(sims, 1.0 / tau))
    one_hot = np.zeros(probs.data.shape[0])
    one_hot[0] = 1.0
    p_true = tsum(mul(probs, Tensor(one_hot)))
    return mul(log(p_true), -1.0)


def batch_contrastive_loss(anchors: Tensor, true_ctxs: Tensor,
                           false_ctxs: Tensor, tau: float,
                           row_weights: np.ndarray | None = None) -> Tensor:
    """Summed contrastive loss over rows.

    ``anchors``/``true_ctxs`` are (K, 2d); ``false_ctxs`` is (K, N, 2d).
    ``row_weights`` (constant, default all-ones) scales each row's term.
    """
    if tau <= 0:
        raise ContractError("temperature must be positive")
    k, width = anchors.data.shape
    n_false = false_ctxs.data.shape[1]
    sim_true = reshape(cosine(anchors, true_ctxs), (k, 1))
    sim_false = cosine(reshape(anchors, (k, 1, width)), false_ctxs)
    logits = mul(concat([sim_true, sim_false], axis=1), 1.0 / tau)
    probs = softmax(logits)
    one_hot = np.zeros((1, n_false + 1))
    one_hot[0, 0] = 1.0
    p_true = tsum(mul(probs, Tensor(one_hot)), axis=1)
    terms = log(p_true)
    if row_weights is not None:
        terms = mul(terms, Tensor(row_weights))
    return mul(tsum(terms), -1.0)


def combined_objective(task_loss: Tensor, contrast_loss: Tensor | None,
                       lam: float) -> Tensor:
    """task_loss + lam * contrast_loss; the contrastive term may be absent."""
    if contrast_loss is None:
        return task_loss
    return add(task_loss, mul(contrast_loss, lam))
