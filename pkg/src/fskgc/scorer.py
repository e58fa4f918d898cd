"""Triplet scoring: relation-aware entity projection with a skip connection
and the squared-translation score, plus the margin ranking loss.

An entity's projected embedding is MLP((r_p . e_p) * e) + e, where e_p and
r_p are learnable per-entity / per-relation projection vectors.  The MLP's
final layer starts at zero, so scoring begins from the plain translational
score of the raw embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numkit import (
    Tensor, add, concat, gather, matmul, mul, relu, reshape, sqnorm, sub,
    tanh, tsum,
)


def _glorot(shape, rng):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ProjectionBank:
    """Embedding tables, projection vectors, and the shared projection MLP."""

    ent_emb: Tensor    # (n_ent, d)
    rel_emb: Tensor    # (n_rel, d)
    ent_proj: Tensor   # (n_ent, d)
    rel_proj: Tensor   # (n_rel, d)
    mlp_w1: Tensor     # (d, d)
    mlp_b1: Tensor     # (d,)
    mlp_w2: Tensor     # (d, d), zero-initialized
    mlp_b2: Tensor     # (d,), zero-initialized

    @property
    def dim(self) -> int:
        return self.ent_emb.data.shape[1]

    @classmethod
    def create(cls, ent_emb: np.ndarray, rel_emb: np.ndarray,
               rng: np.random.Generator) -> "ProjectionBank":
        d = ent_emb.shape[1]
        return cls(
            ent_emb=Tensor(ent_emb.copy(), requires_grad=True),
            rel_emb=Tensor(rel_emb.copy(), requires_grad=True),
            ent_proj=Tensor(ent_emb.copy(), requires_grad=True),
            rel_proj=Tensor(rel_emb.copy(), requires_grad=True),
            mlp_w1=Tensor(_glorot((d, d), rng), requires_grad=True),
            mlp_b1=Tensor(np.zeros(d), requires_grad=True),
            mlp_w2=Tensor(np.zeros((d, d)), requires_grad=True),
            mlp_b2=Tensor(np.zeros(d), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "ent_emb": self.ent_emb, "rel_emb": self.rel_emb,
            "ent_proj": self.ent_proj, "rel_proj": self.rel_proj,
            "proj.mlp_w1": self.mlp_w1, "proj.mlp_b1": self.mlp_b1,
            "proj.mlp_w2": self.mlp_w2, "proj.mlp_b2": self.mlp_b2,
        }


def projection_mlp(x: Tensor, bank: ProjectionBank) -> Tensor:
    hidden = tanh(add(matmul(x, bank.mlp_w1), bank.mlp_b1))
    return add(matmul(hidden, bank.mlp_w2), bank.mlp_b2)


def project(e: Tensor, e_p: Tensor, r_p: Tensor, bank: ProjectionBank) -> Tensor:
    """Projected embedding MLP((r_p . e_p) * e) + e.

    Rows broadcast: ``e``/``e_p`` may be (n, d) with ``r_p`` either (d,) or
    (n, d); the inner product is taken per row.
    """
    if e.data.shape != e_p.data.shape:
        raise ContractError(
            f"embedding/projection shapes differ: {e.data.shape} vs "
            f"{e_p.data.shape}"
        )
    if e.data.shape[-1] != r_p.data.shape[-1]:
        raise ContractError(
            f"relation projection width {r_p.data.shape[-1]} does not match "
            f"entity width {e.data.shape[-1]}"
        )
    single = e.data.ndim == 1
    if single:
        e = reshape(e, (1, -1))
        e_p = reshape(e_p, (1, -1))
    if r_p.data.ndim == 1:
        r_p = reshape(r_p, (1, -1))
    scale = tsum(mul(e_p, r_p), axis=-1)
    scaled = mul(e, reshape(scale, scale.data.shape + (1,)))
    out = add(projection_mlp(scaled, bank), e)
    return reshape(out, (-1,)) if single else out


def score_projected(h_hat: Tensor, relation_vec: Tensor, t_hat: Tensor) -> Tensor:
    """Squared translation distance ||h_hat + R - t_hat||^2 (lower = better)."""
    return sqnorm(sub(add(h_hat, relation_vec), t_hat))


def score(head: int, tail: int, relation_vec: Tensor, bank: ProjectionBank,
          overrides: "ProjectionOverrides | None" = None) -> Tensor:
    """Score one (head, tail) pair under a relation representation."""
    scores = score_pairs([head], [tail], relation_vec, bank, overrides)
    return reshape(scores, ())


@dataclass
class ProjectionOverrides:
    """Episode-local adapted projection vectors (never written back).

    ``head_side``/``tail_side`` map entity ids to row indices of
    ``head_rows``/``tail_rows``; ``rel_proj`` replaces the relation's
    projection vector.
    """

    rel_proj: Tensor | None = None
    head_side: dict[int, int] | None = None
    head_rows: Tensor | None = None
    tail_side: dict[int, int] | None = None
    tail_rows: Tensor | None = None


def _entity_proj_rows(ids: list[int], bank: ProjectionBank,
                      side: dict[int, int] | None, rows: Tensor | None) -> Tensor:
    base = gather(bank.ent_proj, ids)
    if not side or rows is None:
        return base
    hits = [(pos, side[e]) for pos, e in enumerate(ids) if e in side]
    if not hits:
        return base
    # pick row i from the stacked [global; adapted] matrix
    sel = np.arange(len(ids), dtype=np.int64)
    for pos, slot in hits:
        sel[pos] = len(ids) + slot
    return gather(concat([base, rows], axis=0), sel)


def score_pairs(heads: list[int], tails: list[int], relation_vec: Tensor,
                bank: ProjectionBank,
                overrides: ProjectionOverrides | None = None,
                relation: int | None = None) -> Tensor:
    """Scores for aligned (head, tail) lists; shape (n,).

    ``relation_vec`` is the task's current representation (merged or
    adapted).  ``overrides``, when given, substitutes episode-adapted
    projection vectors; otherwise the global bank rows are used and the
    relation projection row is looked up by ``relation`` id.
    """
    if len(heads) != len(tails):
        raise ContractError("heads and tails must align")
    if not heads:
        raise ContractError("score_pairs needs at least one pair")
    n = bank.ent_emb.data.shape[0]
    for e in (*heads, *tails):
        if e < 0 or e >= n:
            raise ContractError(f"unknown entity id {e}")
    if overrides is not None and overrides.rel_proj is not None:
        r_p = overrides.rel_proj
    elif relation is not None:
        r_p = reshape(gather(bank.rel_proj, [relation]), (-1,))
    else:
        raise ContractError("score_pairs needs a relation id or an override")

    h_emb = gather(bank.ent_emb, heads)
    t_emb = gather(bank.ent_emb, tails)
    h_proj = _entity_proj_rows(
        heads, bank,
        overrides.head_side if overrides else None,
        overrides.head_rows if overrides else None,
    )
    t_proj = _entity_proj_rows(
        tails, bank,
        overrides.tail_side if overrides else None,
        overrides.tail_rows if overrides else None,
    )
    h_hat = project(h_emb, h_proj, r_p, bank)
    t_hat = project(t_emb, t_proj, r_p, bank)
    if relation_vec.data.ndim == 1:
        relation_vec = reshape(relation_vec, (1, -1))
    return score_projected(h_hat, relation_vec, t_hat)


def margin_loss(positive: Tensor, negative: Tensor, margin: float) -> Tensor:
    """Hinge sum max(0, l_pos + margin - l_neg) over aligned score vectors."""
    if positive.data.shape != negative.data.shape:
        raise ContractError(
            f"positive/negative score shapes differ: {positive.data.shape} "
            f"vs {negative.data.shape}"
        )
    return tsum(relu(sub(add(positive, margin), negative)))
