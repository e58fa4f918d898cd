"""Task representations and similarity over edge neighborhoods.

Two parallel constructions share the same recursion structure:

* a discrete labeling (`wl_edge_labels`) that canonically renames each
  triple occurrence by its relation type and the multiset of neighbor
  labels, refined per depth -- exact, hashable, used for set kernels and as
  a test oracle;
* a learned message passer (`relational_mp_forward`) that replaces label
  hashing with a linear message map and a tanh update, producing per-edge
  feature vectors whose pairwise bilinear form defines a differentiable
  task kernel.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kgdata.graph import AugmentedLineGraph, KnowledgeGraph
from .numkit import (
    Tensor, concat, gather, matmul, mul, reshape, segment_sum, sigmoid,
    softmax, stack, tanh, tmean, transpose, tsum,
)

# ---------------------------------------------------------------------------
# discrete Weisfeiler-Lehman edge labels
# ---------------------------------------------------------------------------


def wl_edge_labels(graph: KnowledgeGraph, depth: int) -> list[np.ndarray]:
    """Canonical per-edge labels for depths 0..depth.

    Depth 0 is the relation type; depth m+1 canonically hashes the pair
    (own depth-m label, sorted multiset of neighbors' depth-m labels).
    Labels are deterministic across runs: signatures are numbered in
    edge-index order of first appearance.
    """
    if depth < 0:
        raise ContractError("WL depth must be >= 0")
    neighbors = graph.edge_neighbors()
    current = np.asarray([t.relation for t in graph.triples], dtype=np.int64)
    out = [current]
    for _ in range(depth):
        canon: dict[tuple, int] = {}
        nxt = np.empty_like(current)
        for e in range(len(graph.triples)):
            sig = (int(current[e]),
                   tuple(sorted(int(current[u]) for u in neighbors[e])))
            nxt[e] = canon.setdefault(sig, len(canon))
        current = nxt
        out.append(current)
    return out


def wl_set_kernel(edges_a, edges_b, labels: list[np.ndarray],
                  depth: int) -> float:
    """Average Dirac-kernel agreement between two edge sets over all depths.

    Value is symmetric and lies in [0, depth + 1].
    """
    edges_a = list(edges_a)
    edges_b = list(edges_b)
    if not edges_a or not edges_b:
        raise ContractError("wl_set_kernel requires non-empty edge sets")
    if depth + 1 > len(labels):
        raise ContractError(
            f"labels computed to depth {len(labels) - 1}, need {depth}"
        )
    total = 0
    for m in range(depth + 1):
        ca = Counter(int(labels[m][e]) for e in edges_a)
        cb = Counter(int(labels[m][e]) for e in edges_b)
        total += sum(ca[l] * cb[l] for l in ca.keys() & cb.keys())
    return total / (len(edges_a) * len(edges_b))


# ---------------------------------------------------------------------------
# relational message passing
# ---------------------------------------------------------------------------


@dataclass
class MessagePassingParams:
    """Linear message map A over state pairs and a tanh update U."""

    a_weight: Tensor  # (2d, d)
    u_weight: Tensor  # (2d, d)
    u_bias: Tensor    # (d,)

    def tensors(self) -> dict[str, Tensor]:
        return {"mp.a_weight": self.a_weight, "mp.u_weight": self.u_weight,
                "mp.u_bias": self.u_bias}

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator) -> "MessagePassingParams":
        return cls(
            a_weight=Tensor(_glorot((2 * dim, dim), rng), requires_grad=True),
            u_weight=Tensor(_glorot((2 * dim, dim), rng), requires_grad=True),
            u_bias=Tensor(np.zeros(dim), requires_grad=True),
        )


def _glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def relational_mp_forward(line: AugmentedLineGraph | KnowledgeGraph,
                          rel_embeddings: Tensor,
                          params: MessagePassingParams,
                          depth: int) -> list[Tensor]:
    """Edge states at depths 0..depth for every edge of ``line``.

    Depth 0 is each edge's relation-type embedding.  One step computes the
    message m_e as the sum of A([s_e, s_n]) over neighbors n, then updates
    s_e <- tanh(U([s_e, m_e])).  Edges with no neighbors receive a zero
    message.
    """
    if depth < 0:
        raise ContractError("message-passing depth must be >= 0")
    if isinstance(line, KnowledgeGraph):
        line = AugmentedLineGraph(line, [])
    if line.relation_ids.size and rel_embeddings.data.shape[0] <= line.relation_ids.max():
        raise ContractError("relation embedding table too small for graph")
    states = [gather(rel_embeddings, line.relation_ids)]
    n_edges = line.n_edges
    for _ in range(depth):
        s = states[-1]
        roots = gather(s, line.pair_src)
        nbrs = gather(s, line.pair_nbr)
        contrib = matmul(concat([roots, nbrs], axis=-1), params.a_weight)
        msg = segment_sum(contrib, line.pair_src, n_edges)
        nxt = tanh(matmul(concat([s, msg], axis=-1), params.u_weight)
                   + params.u_bias)
        states.append(nxt)
    return states


# ---------------------------------------------------------------------------
# task representations and the learned kernel
# ---------------------------------------------------------------------------


@dataclass
class TaskRepr:
    """Per-depth edge states of a task's support edges, plus pooled views."""

    relation: int
    depth: int
    dim: int
    edge_states: list[Tensor]   # each (n_edges, d), depths 0..depth
    depth_means: Tensor         # (depth + 1, d)
    pooled: Tensor              # (d,) mean over depths and edges


def build_task_repr(relation: int, edge_ids, states: list[Tensor]) -> TaskRepr:
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    if edge_ids.size == 0:
        raise ContractError("task representation needs at least one edge")
    per_depth = [gather(s, edge_ids) for s in states]
    depth_means = stack([tmean(p, axis=0) for p in per_depth], axis=0)
    pooled = tmean(depth_means, axis=0)
    assert np.allclose(
        pooled.data,
        np.mean([p.data.mean(axis=0) for p in per_depth], axis=0),
        atol=1e-12,
    ), "pooled summary must equal the mean of contributing states"
    return TaskRepr(
        relation=relation,
        depth=len(states) - 1,
        dim=states[0].data.shape[1],
        edge_states=per_depth,
        depth_means=depth_means,
        pooled=pooled,
    )


class SimilarityHead:
    """Bilinear form with a PSD weight (V^T V) under a logistic activation."""

    def __init__(self, v: Tensor):
        self.v = v

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator,
               scale: float = 0.3) -> "SimilarityHead":
        return cls(Tensor(rng.normal(scale=scale / np.sqrt(dim), size=(dim, dim)),
                          requires_grad=True))

    def tensors(self) -> dict[str, Tensor]:
        return {"sim.v": self.v}

    def weight(self) -> Tensor:
        return matmul(transpose(self.v, (1, 0)), self.v)


def task_kernel(t1: TaskRepr, t2: TaskRepr, head: SimilarityHead) -> Tensor:
    """Similarity in (0, 1): logistic of the mean pairwise bilinear score.

    The double sum over edge pairs factorizes through per-depth means, so
    the returned value equals the explicit pairwise average exactly.
    """
    if t1.depth != t2.depth or t1.dim != t2.dim:
        raise ContractError(
            f"task reprs disagree: depth {t1.depth}/{t2.depth}, "
            f"dim {t1.dim}/{t2.dim}"
        )
    w = head.weight()
    pre = tsum(mul(matmul(t1.depth_means, w), t2.depth_means))
    return sigmoid(pre)


def task_attention(target: TaskRepr, pool: list[TaskRepr],
                   head: SimilarityHead) -> Tensor:
    """Softmax weights over ``pool`` from bilinear scores of pooled summaries."""
    if not pool:
        raise ContractError("task attention needs a non-empty pool")
    if any(p.relation == target.relation for p in pool):
        raise ContractError("attention pool must exclude the target task")
    w = head.weight()
    summaries = stack([p.pooled for p in pool], axis=0)
    projected = matmul(w, reshape(target.pooled, (target.dim, 1)))
    logits = reshape(matmul(summaries, projected), (len(pool),))
    return softmax(logits)


def similarity_matrix(bundle, rel_embeddings: Tensor,
                      params: MessagePassingParams, head: SimilarityHead,
                      shots: int, depth: int) -> tuple[list[str], np.ndarray]:
    """Pairwise task-kernel values over every task relation of a bundle.

    Each task is represented by its first ``shots`` triples (sorted order);
    all task edges share one augmented line graph over the background.
    """
    from .kgdata.graph import Triple

    relations: list[int] = []
    supports: list[list[Triple]] = []
    for split in ("train", "valid", "test"):
        for rel in bundle.task_relations(split):
            triples = sorted(bundle.tasks[split][rel],
                             key=lambda t: (t.head, t.tail))
            if not triples:
                continue
            relations.append(rel)
            supports.append(triples[:max(1, shots)])
    if not relations:
        raise ContractError("bundle has no task relations")
    extra = [t for sup in supports for t in sup]
    line = AugmentedLineGraph(bundle.graph, extra)
    states = relational_mp_forward(line, rel_embeddings, params, depth)
    reprs = []
    offset = 0
    for rel, sup in zip(relations, supports):
        reprs.append(build_task_repr(rel, line.extra_edge_ids(offset, len(sup)),
                                     states))
        offset += len(sup)
    n = len(reprs)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            value = task_kernel(reprs[i], reprs[j], head).item()
            matrix[i, j] = matrix[j, i] = value
    names = [bundle.graph.relations.id2name[r] for r in relations]
    return names, matrix
