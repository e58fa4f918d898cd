"""Task-conditioned meta-learning: adaptive inner steps, outer optimization,
warm-up scheduling, and the optional translational pre-trainer.

The inner step treats the support-loss gradient as a constant (no
second-order terms): adapted values are ``value - alpha * eta * g`` where
``g`` is detached, so the outer gradient flows through the base values and
through the adaptive scale, but never through ``g`` itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .contrast import (
    Context, batch_contrastive_loss, corrupt_context, gather_context,
)
from .errors import ContractError, EpisodeError, NumericError
from .kgdata import DatasetBundle, Episode, sample_episode
from .kgdata.bundle import random_embeddings
from .kgdata.graph import AugmentedLineGraph, KnowledgeGraph, Triple
from .model import Model
from .numkit import (
    AdamState, Tape, Tensor, adam_step, add, backward, concat, dot, gather,
    grad, mul, relu, reshape, sigmoid, softmax, sqnorm, stack, sub, tanh,
    tmean, transpose, tsum,
)
from .relearner import encode_support, merge, mrl_forward, transfer_aggregate
from .scorer import ProjectionOverrides, margin_loss, project, score_pairs, \
    score_projected
from .taskgraph import TaskRepr, build_task_repr, relational_mp_forward, \
    task_attention


# ---------------------------------------------------------------------------
# task statistics and the adaptive scale
# ---------------------------------------------------------------------------


def task_stats(support_enc: Tensor) -> Tensor:
    """Summary psi(S_r): elementwise mean and population variance of the
    support encodings plus the shot count; width 6d + 1."""
    if support_enc.data.ndim != 2 or support_enc.data.shape[0] < 1:
        raise ContractError("task_stats expects a (K, 3d) encoding matrix")
    k = support_enc.data.shape[0]
    mean = tmean(support_enc, axis=0)
    centered = sub(support_enc, mean)
    variance = tmean(mul(centered, centered), axis=0)
    return concat([mean, variance, Tensor(np.asarray([float(k)]))], axis=0)


def adaptive_scale(stats: Tensor, w_r: Tensor) -> Tensor:
    """Scale alpha_r = sigmoid(w_r . psi) in (0, 1)."""
    if stats.data.shape != w_r.data.shape:
        raise ContractError(
            f"task stats width {stats.data.shape} does not match "
            f"w_r width {w_r.data.shape}"
        )
    return sigmoid(dot(w_r, stats))


# ---------------------------------------------------------------------------
# inner adaptation
# ---------------------------------------------------------------------------


@dataclass
class AdaptState:
    """Episode-local adapted values; global tables are never written."""

    alpha: Tensor | None
    inner_lr: float
    relation_vec: Tensor
    overrides: ProjectionOverrides | None
    support_loss: float


def _support_loss_on_leaves(episode: Episode, relation_leaf: Tensor,
                            head_leaf: Tensor, tail_leaf: Tensor,
                            rel_proj_leaf: Tensor, head_slots: dict[int, int],
                            tail_slots: dict[int, int], model: Model,
                            margin: float) -> Tensor:
    bank = model.bank
    heads = [h for h, _ in episode.support]
    tails = [t for _, t in episode.support]
    negs = episode.support_negatives
    h_emb = Tensor(bank.ent_emb.data[heads])
    t_emb = Tensor(bank.ent_emb.data[tails])
    n_emb = Tensor(bank.ent_emb.data[negs])
    h_proj = gather(head_leaf, [head_slots[h] for h in heads])
    t_proj = gather(tail_leaf, [tail_slots[t] for t in tails])
    n_proj = gather(tail_leaf, [tail_slots[t] for t in negs])
    h_hat = project(h_emb, h_proj, rel_proj_leaf, bank)
    t_hat = project(t_emb, t_proj, rel_proj_leaf, bank)
    n_hat = project(n_emb, n_proj, rel_proj_leaf, bank)
    rel_row = reshape(relation_leaf, (1, -1))
    pos = score_projected(h_hat, rel_row, t_hat)
    neg = score_projected(h_hat, rel_row, n_hat)
    return margin_loss(pos, neg, margin)


def inner_adapt(episode: Episode, relation_vec: Tensor, model: Model,
                alpha: Tensor, config: TrainConfig) -> AdaptState:
    """One task-conditioned gradient step on the relation representation and
    the episode's projection vectors, each scaled by alpha * inner_lr.

    The returned adapted values live on the caller's tape; the support-loss
    gradient itself is a constant, so no second-order terms arise.
    """
    bank = model.bank
    rel = episode.relation
    unique_heads = sorted({h for h, _ in episode.support})
    unique_tails = sorted(
        {t for _, t in episode.support} | set(episode.support_negatives)
    )
    head_slots = {e: i for i, e in enumerate(unique_heads)}
    tail_slots = {e: i for i, e in enumerate(unique_tails)}

    relation_leaf = Tensor(relation_vec.data.copy(), requires_grad=True)
    head_leaf = Tensor(bank.ent_proj.data[unique_heads], requires_grad=True)
    tail_leaf = Tensor(bank.ent_proj.data[unique_tails], requires_grad=True)
    rel_proj_leaf = Tensor(bank.rel_proj.data[rel].copy(), requires_grad=True)

    with Tape():
        loss = _support_loss_on_leaves(
            episode, relation_leaf, head_leaf, tail_leaf, rel_proj_leaf,
            head_slots, tail_slots, model, config.margin,
        )
        grads = grad(loss, [relation_leaf, head_leaf, tail_leaf, rel_proj_leaf])
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError(
            f"non-finite support gradient for relation {rel}; episode dropped"
        )
    g_rel, g_head, g_tail, g_rel_proj = grads

    step = mul(alpha, config.inner_lr)
    adapted_rel = sub(relation_vec, mul(step, Tensor(g_rel)))
    head_rows = sub(gather(bank.ent_proj, unique_heads),
                    mul(step, Tensor(g_head)))
    tail_rows = sub(gather(bank.ent_proj, unique_tails),
                    mul(step, Tensor(g_tail)))
    rel_proj_row = sub(reshape(gather(bank.rel_proj, [rel]), (-1,)),
                       mul(step, Tensor(g_rel_proj)))
    overrides = ProjectionOverrides(
        rel_proj=rel_proj_row,
        head_side=head_slots, head_rows=head_rows,
        tail_side=tail_slots, tail_rows=tail_rows,
    )
    return AdaptState(
        alpha=alpha,
        inner_lr=config.inner_lr,
        relation_vec=adapted_rel,
        overrides=overrides,
        support_loss=float(loss.data),
    )


def support_loss_value(episode: Episode, relation_vec: Tensor, model: Model,
                       config: TrainConfig,
                       overrides: ProjectionOverrides | None = None) -> float:
    """L(S_r) under a given relation vector and optional adapted projections."""
    heads = [h for h, _ in episode.support]
    tails = [t for _, t in episode.support]
    pos = score_pairs(heads, tails, relation_vec, model.bank, overrides,
                      relation=episode.relation)
    neg = score_pairs(heads, episode.support_negatives, relation_vec,
                      model.bank, overrides, relation=episode.relation)
    return float(margin_loss(pos, neg, config.margin).data)


# ---------------------------------------------------------------------------
# losses for one episode
# ---------------------------------------------------------------------------


@dataclass
class PreparedEpisode:
    episode: Episode
    contexts: list[Context]        # aligned with support pairs; may be empty
    false_contexts: list[list[Context]]


def prepare_episode(episode: Episode, graph: KnowledgeGraph,
                    config: TrainConfig,
                    rng: np.random.Generator) -> PreparedEpisode:
    contexts: list[Context] = []
    falses: list[list[Context]] = []
    n_rel = graph.n_relations
    n_ent = graph.n_entities
    for h, t in episode.support:
        ctx = gather_context(graph, Triple(h, episode.relation, t),
                             config.context_cap, rng)
        contexts.append(ctx)
        if len(ctx):
            falses.append([
                corrupt_context(ctx, n_rel, n_ent, rng)
                for _ in range(config.false_contexts)
            ])
        else:
            falses.append([])
    return PreparedEpisode(episode, contexts, falses)


def episode_contrast_loss(prepared: PreparedEpisode, model: Model,
                          config: TrainConfig) -> Tensor | None:
    """Summed contrastive loss over support triplets with non-empty context."""
    from .contrast import encode_contexts

    keep = [i for i, c in enumerate(prepared.contexts) if len(c)]
    if not keep:
        return None
    bank = model.bank
    episode = prepared.episode
    heads = [episode.support[i][0] for i in keep]
    tails = [episode.support[i][1] for i in keep]
    anchors = concat([gather(bank.ent_emb, heads), gather(bank.ent_emb, tails)],
                     axis=-1)
    true_cs = encode_contexts([prepared.contexts[i] for i in keep],
                              bank.ent_emb, bank.rel_emb, model.msa)
    flat_false = [c for i in keep for c in prepared.false_contexts[i]]
    false_cs = encode_contexts(flat_false, bank.ent_emb, bank.rel_emb, model.msa)
    n = config.false_contexts
    false_cs = reshape(false_cs, (len(keep), n, 2 * model.dim))
    return batch_contrastive_loss(anchors, true_cs, false_cs, config.tau)


def episode_task_loss(prepared: PreparedEpisode, relation_vec: Tensor,
                      overrides: ProjectionOverrides | None, model: Model,
                      config: TrainConfig) -> Tensor:
    """Query margin loss under the (adapted) relation representation."""
    episode = prepared.episode
    heads = [h for h, _ in episode.queries]
    tails = [t for _, t in episode.queries]
    pos = score_pairs(heads, tails, relation_vec, model.bank, overrides,
                      relation=episode.relation)
    neg = score_pairs(heads, episode.query_negatives, relation_vec, model.bank,
                      overrides, relation=episode.relation)
    return margin_loss(pos, neg, config.margin)


# ---------------------------------------------------------------------------
# outer step (batched across the episode batch)
# ---------------------------------------------------------------------------


def warmup_schedule(step: int, config: TrainConfig) -> bool:
    """Transfer flag: off while step < warmup_steps, on afterwards."""
    return step >= config.warmup_steps


def batch_support_encodings(episodes: list[Episode], model: Model) -> Tensor:
    """Stacked support encodings (B, K, 3d); requires a shared K."""
    bank = model.bank
    ks = {ep.k for ep in episodes}
    if len(ks) != 1:
        raise ContractError("episodes in a batch must share the shot count")
    k = ks.pop()
    heads = [h for ep in episodes for h, _ in ep.support]
    tails = [t for ep in episodes for _, t in ep.support]
    rels = [ep.relation for ep in episodes for _ in range(k)]
    b = len(episodes)
    d = model.dim
    enc = concat(
        [gather(bank.ent_emb, heads), gather(bank.rel_emb, rels),
         gather(bank.ent_emb, tails)],
        axis=-1,
    )
    return reshape(enc, (b, k, 3 * d))


def build_batch_reprs(episodes: list[Episode], bundle: DatasetBundle,
                      model: Model, config: TrainConfig) -> list[TaskRepr]:
    """Task representations over the background graph plus every episode's
    support edges (train triples are shared knowledge within a batch)."""
    extra: list[Triple] = []
    offsets: list[tuple[int, int]] = []
    for ep in episodes:
        offsets.append((len(extra), len(ep.support)))
        extra.extend(Triple(h, ep.relation, t) for h, t in ep.support)
    line = AugmentedLineGraph(bundle.graph, extra)
    states = relational_mp_forward(line, model.bank.rel_emb, model.mp,
                                   config.wl_depth)
    reprs = []
    for ep, (start, count) in zip(episodes, offsets):
        edge_ids = line.extra_edge_ids(start, count)
        reprs.append(build_task_repr(ep.relation, edge_ids, states))
    return reprs


def batch_task_stats(support_enc: Tensor) -> Tensor:
    """Batched psi(S_r): (B, K, 3d) -> (B, 6d + 1); rows match task_stats."""
    b, k, _ = support_enc.data.shape
    mean = tmean(support_enc, axis=1)
    centered = sub(support_enc, reshape(mean, (b, 1, -1)))
    variance = tmean(mul(centered, centered), axis=1)
    k_col = Tensor(np.full((b, 1), float(k)))
    return concat([mean, variance, k_col], axis=-1)


def _batch_transfer(episodes: list[Episode], bundle: DatasetBundle,
                    model: Model, config: TrainConfig, base: Tensor) -> Tensor:
    """Transferred representations (B, d) via batch-level task attention.

    Row i softmaxes bilinear scores of pooled task summaries over every
    other episode with a different target relation; rows with no such
    neighbors transfer nothing.
    """
    b = len(episodes)
    k = episodes[0].k
    d = model.dim
    extra = [
        Triple(h, ep.relation, t) for ep in episodes for h, t in ep.support
    ]
    line = AugmentedLineGraph(bundle.graph, extra)
    states = relational_mp_forward(line, model.bank.rel_emb, model.mp,
                                   config.wl_depth)
    n_base = len(bundle.graph.triples)
    edge_ids = np.arange(n_base, n_base + b * k, dtype=np.int64)
    depth_means = [
        tmean(reshape(gather(s, edge_ids), (b, k, d)), axis=1)
        for s in states
    ]
    pooled = tmean(stack(depth_means, axis=0), axis=0)  # (B, d)

    w = model.sim_head.weight()
    logits = matmul(matmul(pooled, w), transpose(pooled, (1, 0)))  # (B, B)
    rels = np.asarray([ep.relation for ep in episodes])
    same_rel = rels[:, None] == rels[None, :]
    mask = np.where(same_rel, -1e30, 0.0)
    alpha = softmax(add(logits, Tensor(mask)))  # (B, B)
    mixed = matmul(alpha, base)
    transferred = tanh(matmul(mixed, transpose(model.mrl.transfer_w, (1, 0))))
    has_pool = (~same_rel).any(axis=1).astype(np.float64).reshape(b, 1)
    return mul(transferred, Tensor(has_pool))


@dataclass
class _BatchAdapt:
    alpha: Tensor               # (B, 1)
    relation_vecs: Tensor       # (B, d)
    rel_proj_rows: Tensor       # (B, d)
    head_slots: list[dict[int, int]]
    head_rows: Tensor           # (B, Uh, d)
    tail_slots: list[dict[int, int]]
    tail_rows: Tensor           # (B, Ut, d)
    support_losses: np.ndarray  # (B,)
    finite: np.ndarray          # (B,) bool


def _unique_slots(groups: list[list[int]]) -> tuple[np.ndarray, list[dict[int, int]]]:
    """Per-episode unique ids padded to a common width, plus slot maps."""
    uniq = [sorted(set(g)) for g in groups]
    width = max(len(u) for u in uniq)
    ids = np.zeros((len(groups), width), dtype=np.int64)
    slots = []
    for i, u in enumerate(uniq):
        ids[i, :len(u)] = u
        ids[i, len(u):] = u[0]
        slots.append({e: j for j, e in enumerate(u)})
    return ids, slots


def _batch_inner_adapt(episodes: list[Episode], merged: Tensor, alpha: Tensor,
                       model: Model, config: TrainConfig) -> _BatchAdapt:
    """Vectorized inner step: one support-loss tape for the whole batch.

    Episode terms are separable, so per-episode leaf slices receive exactly
    the gradients the per-episode path would produce.
    """
    bank = model.bank
    b = len(episodes)
    k = episodes[0].k
    d = model.dim
    rels = [ep.relation for ep in episodes]
    head_ids, head_slots = _unique_slots(
        [[h for h, _ in ep.support] for ep in episodes]
    )
    tail_ids, tail_slots = _unique_slots(
        [[t for _, t in ep.support] + ep.support_negatives for ep in episodes]
    )
    uh, ut = head_ids.shape[1], tail_ids.shape[1]

    def flat_sel(slot_maps, ids_per_ep, width):
        sel = np.empty((b, k), dtype=np.int64)
        for i, ids in enumerate(ids_per_ep):
            for j, e in enumerate(ids):
                sel[i, j] = i * width + slot_maps[i][e]
        return sel.ravel()

    h_sel = flat_sel(head_slots, [[h for h, _ in ep.support] for ep in episodes], uh)
    t_sel = flat_sel(tail_slots, [[t for _, t in ep.support] for ep in episodes], ut)
    n_sel = flat_sel(tail_slots, [ep.support_negatives for ep in episodes], ut)

    rel_leaf = Tensor(merged.data.copy(), requires_grad=True)
    head_leaf = Tensor(bank.ent_proj.data[head_ids.ravel()].reshape(b, uh, d),
                       requires_grad=True)
    tail_leaf = Tensor(bank.ent_proj.data[tail_ids.ravel()].reshape(b, ut, d),
                       requires_grad=True)
    rp_leaf = Tensor(bank.rel_proj.data[rels].copy(), requires_grad=True)

    h_emb = Tensor(bank.ent_emb.data[
        [h for ep in episodes for h, _ in ep.support]].reshape(b, k, d))
    t_emb = Tensor(bank.ent_emb.data[
        [t for ep in episodes for _, t in ep.support]].reshape(b, k, d))
    n_emb = Tensor(bank.ent_emb.data[
        [t for ep in episodes for t in ep.support_negatives]].reshape(b, k, d))

    with Tape():
        r_p = reshape(rp_leaf, (b, 1, d))
        h_proj = reshape(gather(reshape(head_leaf, (b * uh, d)), h_sel),
                         (b, k, d))
        t_proj = reshape(gather(reshape(tail_leaf, (b * ut, d)), t_sel),
                         (b, k, d))
        n_proj = reshape(gather(reshape(tail_leaf, (b * ut, d)), n_sel),
                         (b, k, d))
        h_hat = project(h_emb, h_proj, r_p, bank)
        t_hat = project(t_emb, t_proj, r_p, bank)
        n_hat = project(n_emb, n_proj, r_p, bank)
        rel_row = reshape(rel_leaf, (b, 1, d))
        pos = score_projected(h_hat, rel_row, t_hat)
        neg = score_projected(h_hat, rel_row, n_hat)
        hinge = relu(sub(add(pos, config.margin), neg))  # (B, K)
        grads = grad(tsum(hinge), [rel_leaf, head_leaf, tail_leaf, rp_leaf])
    support_losses = hinge.data.sum(axis=1)

    finite = np.ones(b, dtype=bool)
    for g in grads:
        flat = g.reshape(b, -1)
        finite &= np.all(np.isfinite(flat), axis=1)
    if not finite.all():
        for g in grads:
            g.reshape(b, -1)[~finite] = 0.0
    g_rel, g_head, g_tail, g_rp = grads

    step2 = mul(alpha, config.inner_lr)            # (B, 1)
    step3 = reshape(step2, (b, 1, 1))
    relation_vecs = sub(merged, mul(step2, Tensor(g_rel)))
    head_rows = sub(
        reshape(gather(bank.ent_proj, head_ids.ravel()), (b, uh, d)),
        mul(step3, Tensor(g_head)),
    )
    tail_rows = sub(
        reshape(gather(bank.ent_proj, tail_ids.ravel()), (b, ut, d)),
        mul(step3, Tensor(g_tail)),
    )
    rel_proj_rows = sub(gather(bank.rel_proj, rels), mul(step2, Tensor(g_rp)))
    return _BatchAdapt(
        alpha=alpha, relation_vecs=relation_vecs, rel_proj_rows=rel_proj_rows,
        head_slots=head_slots, head_rows=head_rows,
        tail_slots=tail_slots, tail_rows=tail_rows,
        support_losses=support_losses, finite=finite,
    )


def _query_padding(
    episodes: list[Episode],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Heads/tails/negatives padded to a shared query count.

    Padding repeats each episode's first query; a mask removes pad terms.
    """
    nq = max(len(ep.queries) for ep in episodes)
    b = len(episodes)
    heads = np.zeros((b, nq), dtype=np.int64)
    tails = np.zeros((b, nq), dtype=np.int64)
    negs = np.zeros((b, nq), dtype=np.int64)
    mask = np.zeros((b, nq))
    for i, ep in enumerate(episodes):
        n = len(ep.queries)
        if n == 0:
            raise ContractError("episode has no query pairs")
        heads[i] = [h for h, _ in ep.queries] + [ep.queries[0][0]] * (nq - n)
        tails[i] = [t for _, t in ep.queries] + [ep.queries[0][1]] * (nq - n)
        negs[i] = ep.query_negatives + [ep.query_negatives[0]] * (nq - n)
        mask[i, :n] = 1.0
    return heads, tails, negs, mask


def _select_rows(ids: np.ndarray, table: Tensor, slot_maps, adapted: Tensor,
                 bank_width: int) -> Tensor:
    """Projection rows for ``ids`` (B, n): adapted where a slot exists."""
    b, n = ids.shape
    d = adapted.data.shape[-1]
    width = adapted.data.shape[1]
    sel = np.arange(b * n, dtype=np.int64)
    for i in range(b):
        smap = slot_maps[i]
        for j in range(n):
            slot = smap.get(int(ids[i, j]))
            if slot is not None:
                sel[i * n + j] = b * n + i * width + slot
    stacked = concat(
        [gather(table, ids.ravel()), reshape(adapted, (b * width, d))],
        axis=0,
    )
    return reshape(gather(stacked, sel), (b, n, d))


def outer_step(episodes: list[Episode], model: Model, bundle: DatasetBundle,
               adam: AdamState, config: TrainConfig, transfer_enabled: bool,
               context_rng: np.random.Generator) -> dict:
    """One outer update over an episode batch; returns scalar metrics.

    The whole batch runs as stacked tensors; episode terms stay separable,
    so the total loss equals the sum of independently computed episode
    losses.  Episodes with non-finite inner gradients are dropped (their
    loss terms are masked to zero) and counted.
    """
    if not episodes:
        raise ContractError("outer_step needs a non-empty episode batch")
    prepared = [
        prepare_episode(ep, bundle.graph, config, context_rng)
        for ep in episodes
    ]
    params = model.parameters()
    b = len(episodes)
    d = model.dim

    with Tape():
        support_enc = batch_support_encodings(episodes, model)
        base = mrl_forward(support_enc, model.mrl)  # (B, d)
        if transfer_enabled and b > 1:
            transferred = _batch_transfer(episodes, bundle, model, config, base)
        else:
            transferred = Tensor(np.zeros((b, d)))
        merged = merge(base, transferred, model.mrl)  # (B, d)

        if config.meta:
            stats = batch_task_stats(support_enc)
            alpha = sigmoid(matmul(stats, reshape(model.w_r, (-1, 1))))  # (B,1)
            adapt = _batch_inner_adapt(episodes, merged, alpha, model, config)
            finite = adapt.finite
            rel_vecs = adapt.relation_vecs
        else:
            adapt = None
            finite = np.ones(b, dtype=bool)
            rel_vecs = merged

        q_heads, q_tails, q_negs, pad_mask = _query_padding(episodes)
        nq = q_heads.shape[1]
        if adapt is not None:
            h_proj = _select_rows(q_heads, model.bank.ent_proj,
                                  adapt.head_slots, adapt.head_rows, d)
            t_proj = _select_rows(q_tails, model.bank.ent_proj,
                                  adapt.tail_slots, adapt.tail_rows, d)
            n_proj = _select_rows(q_negs, model.bank.ent_proj,
                                  adapt.tail_slots, adapt.tail_rows, d)
            r_p = reshape(adapt.rel_proj_rows, (b, 1, d))
        else:
            h_proj = reshape(gather(model.bank.ent_proj, q_heads.ravel()),
                             (b, nq, d))
            t_proj = reshape(gather(model.bank.ent_proj, q_tails.ravel()),
                             (b, nq, d))
            n_proj = reshape(gather(model.bank.ent_proj, q_negs.ravel()),
                             (b, nq, d))
            r_p = reshape(
                gather(model.bank.rel_proj, [ep.relation for ep in episodes]),
                (b, 1, d),
            )
        h_emb = reshape(gather(model.bank.ent_emb, q_heads.ravel()), (b, nq, d))
        t_emb = reshape(gather(model.bank.ent_emb, q_tails.ravel()), (b, nq, d))
        n_emb = reshape(gather(model.bank.ent_emb, q_negs.ravel()), (b, nq, d))
        h_hat = project(h_emb, h_proj, r_p, model.bank)
        t_hat = project(t_emb, t_proj, r_p, model.bank)
        n_hat = project(n_emb, n_proj, r_p, model.bank)
        rel_rows = reshape(rel_vecs, (b, 1, d))
        pos = score_projected(h_hat, rel_rows, t_hat)
        neg = score_projected(h_hat, rel_rows, n_hat)
        hinge = relu(sub(add(pos, config.margin), neg))  # (B, nq)
        loss_mask = pad_mask * finite[:, None]
        task_terms = mul(hinge, Tensor(loss_mask))
        total = tsum(task_terms)
        task_per_episode = task_terms.data.sum(axis=1)

        contrast_per_episode = np.zeros(b)
        rows = [
            (i, j) for i, prep in enumerate(prepared)
            for j, ctx in enumerate(prep.contexts) if len(ctx) and finite[i]
        ]
        if rows:
            anchors = concat(
                [
                    gather(model.bank.ent_emb,
                           [episodes[i].support[j][0] for i, j in rows]),
                    gather(model.bank.ent_emb,
                           [episodes[i].support[j][1] for i, j in rows]),
                ],
                axis=-1,
            )
            from .contrast import encode_contexts

            true_cs = encode_contexts(
                [prepared[i].contexts[j] for i, j in rows],
                model.bank.ent_emb, model.bank.rel_emb, model.msa,
            )
            false_flat = [
                c for i, j in rows for c in prepared[i].false_contexts[j]
            ]
            false_cs = encode_contexts(false_flat, model.bank.ent_emb,
                                       model.bank.rel_emb, model.msa)
            false_cs = reshape(false_cs,
                               (len(rows), config.false_contexts, 2 * d))
            closs = batch_contrastive_loss(anchors, true_cs, false_cs,
                                           config.tau)
            row_terms = _per_row_contrast(anchors, true_cs, false_cs,
                                          config.tau)
            for (i, _), v in zip(rows, row_terms):
                contrast_per_episode[i] += v
            total = total + mul(closs, config.lam)
        backward(total)

    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    adam_step(params, adam)

    alphas = (adapt.alpha.data.ravel()[finite]
              if adapt is not None and finite.any() else np.asarray([]))
    return {
        "loss": float(total.data),
        "task_loss": float(task_per_episode.sum()),
        "contrast_loss": float(contrast_per_episode.sum()),
        "support_loss": float(adapt.support_losses[finite].sum())
        if adapt is not None else 0.0,
        "alpha_mean": float(alphas.mean()) if alphas.size else 0.0,
        "alpha_min": float(alphas.min()) if alphas.size else 0.0,
        "alpha_max": float(alphas.max()) if alphas.size else 0.0,
        "episodes": b,
        "dropped": int(b - finite.sum()),
    }


def _per_row_contrast(anchors: Tensor, true_cs: Tensor, false_cs: Tensor,
                      tau: float) -> np.ndarray:
    """Per-row contrastive terms (plain values, for logging only)."""
    a = anchors.data
    t = true_cs.data
    f = false_cs.data
    def cos(x, y):
        num = (x * y).sum(axis=-1)
        return num / (np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1))
    sims = np.concatenate(
        [cos(a, t)[:, None], cos(a[:, None, :], f)], axis=1
    ) / tau
    z = sims - sims.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return -np.log(p[:, 0])


# ---------------------------------------------------------------------------
# translational pre-training
# ---------------------------------------------------------------------------


def pretrain_transe(graph: KnowledgeGraph, epochs: int, config: TrainConfig,
                    rng: np.random.Generator, lr: float = 0.01,
                    batch_size: int = 512) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Margin-based translational pretraining over the background triples.

    Returns entity/relation tables plus per-epoch mean losses.  With zero
    epochs the tables are exactly their random initialization.
    """
    if not graph.triples:
        raise ContractError("pretraining needs a non-empty background graph")
    d = config.dim
    ent = Tensor(random_embeddings(graph.n_entities, d, rng), requires_grad=True)
    rel = Tensor(random_embeddings(graph.n_relations, d, rng), requires_grad=True)
    arr = graph.triple_array()
    n = arr.shape[0]
    adam = AdamState(lr=lr)
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            h, r, t = arr[idx, 0], arr[idx, 1], arr[idx, 2]
            corrupt_head = rng.random(idx.size) < 0.5
            random_ents = rng.integers(graph.n_entities, size=idx.size)
            neg_h = np.where(corrupt_head, random_ents, h)
            neg_t = np.where(corrupt_head, t, random_ents)
            with Tape():
                rel_rows = gather(rel, r)
                pos = sqnorm(sub(gather(ent, h) + rel_rows, gather(ent, t)))
                neg = sqnorm(sub(gather(ent, neg_h) + rel_rows,
                                 gather(ent, neg_t)))
                loss = margin_loss(pos, neg, config.margin)
                backward(loss)
            epoch_loss += float(loss.data)
            adam_step([ent, rel], adam)
        losses.append(epoch_loss / max(1, n))
    return ent.data, rel.data, losses


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log_path: Path
    best_mrr: float
    steps: int


def eligible_relations(bundle: DatasetBundle, split: str, k: int) -> list[int]:
    return [
        r for r in bundle.task_relations(split)
        if len(bundle.tasks[split][r]) >= k + 1 and bundle.candidates.get(r)
    ]


def train(bundle: DatasetBundle, config: TrainConfig,
          out_dir: str | Path) -> TrainResult:
    """Outer-loop training with periodic validation and best-MRR selection.

    The log is newline-delimited JSON; identical seed and config produce
    byte-identical logs and checkpoints.
    """
    from .evalkit import evaluate_split

    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    episode_rng = np.random.default_rng(seeds[0])
    context_rng = np.random.default_rng(seeds[1])
    pretrain_rng = np.random.default_rng(seeds[2])

    ent0 = rel0 = None
    if bundle.ent_embeddings is None and config.pretrain_epochs > 0:
        ent0, rel0, _ = pretrain_transe(bundle.graph, config.pretrain_epochs,
                                        config, pretrain_rng)
    model = Model.create(bundle, config, ent0, rel0)
    adam = AdamState(lr=config.lr)

    train_rels = eligible_relations(bundle, "train", config.shots)
    if config.max_steps > 0 and not train_rels:
        raise EpisodeError(
            f"no train relation has >= {config.shots + 1} triples"
        )

    log_path = out / "train_log.ndjson"
    best_path = out / "best.tnck"
    last_path = out / "last.tnck"
    best_mrr = -1.0
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps({"record": "config", **config.to_dict()},
                             sort_keys=True) + "\n")
        for step in range(config.max_steps):
            transfer_now = config.transfer and warmup_schedule(step, config)
            rels = episode_rng.choice(np.asarray(train_rels),
                                      size=config.batch, replace=True)
            episodes = [
                sample_episode(bundle, int(r), config.shots, episode_rng,
                               config.queries)
                for r in rels
            ]
            metrics = outer_step(episodes, model, bundle, adam, config,
                                 transfer_now, context_rng)
            log.write(json.dumps(
                {"record": "step", "step": step, "transfer": transfer_now,
                 **metrics},
                sort_keys=True) + "\n")
            if (step + 1) % config.eval_every == 0:
                report = evaluate_split(bundle, "valid", model, config,
                                        transfer=transfer_now)
                log.write(json.dumps(
                    {"record": "valid", "step": step, "mrr": report.mrr,
                     "hits1": report.hits1, "hits5": report.hits5,
                     "hits10": report.hits10, "queries": report.n_queries},
                    sort_keys=True) + "\n")
                if report.mrr > best_mrr:
                    best_mrr = report.mrr
                    model.save(best_path, adam)
    model.save(last_path, adam)
    if best_mrr < 0:
        model.save(best_path, adam)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )
    return TrainResult(
        best_path=best_path, last_path=last_path, log_path=log_path,
        best_mrr=best_mrr, steps=config.max_steps,
    )


def inner_efficacy(bundle: DatasetBundle, model: Model, config: TrainConfig,
                   n_episodes: int, rng: np.random.Generator) -> float:
    """Fraction of sampled episodes whose support loss does not increase
    after the adaptive inner step."""
    rels = eligible_relations(bundle, "train", config.shots)
    if not rels:
        raise EpisodeError("no eligible train relations")
    improved = 0
    for _ in range(n_episodes):
        rel = int(rng.choice(np.asarray(rels)))
        ep = sample_episode(bundle, rel, config.shots, rng, config.queries)
        with Tape():
            enc = encode_support(model.bank.ent_emb, model.bank.rel_emb,
                                 ep.support, ep.relation)
            base = mrl_forward(enc, model.mrl)
            merged = merge(base, Tensor(np.zeros(model.dim)), model.mrl)
            alpha = adaptive_scale(task_stats(enc), model.w_r)
            adapt = inner_adapt(ep, merged, model, alpha, config)
        after = support_loss_value(ep, adapt.relation_vec, model, config,
                                   adapt.overrides)
        if after <= adapt.support_loss + 1e-12:
            improved += 1
    return improved / n_episodes
