"""Few-shot episode sampling: support/query split plus negative tails."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, EpisodeError
from .bundle import DatasetBundle
from .graph import Triple

DEFAULT_QUERY_SIZE = 10


@dataclass
class Episode:
    """One few-shot task instance for a target relation."""

    relation: int
    support: list[tuple[int, int]]
    queries: list[tuple[int, int]]
    support_negatives: list[int]
    query_negatives: list[int]
    candidates: list[int]

    @property
    def k(self) -> int:
        return len(self.support)


def _find_task_triples(bundle: DatasetBundle, relation: int) -> list[Triple]:
    for split in ("train", "valid", "test"):
        triples = bundle.tasks[split].get(relation)
        if triples is not None:
            return triples
    raise EpisodeError(f"relation id {relation} is not a task relation")


def sample_negative(bundle: DatasetBundle, head: int, relation: int,
                    candidates: list[int], rng: np.random.Generator) -> int:
    """A uniform candidate tail t' with (head, relation, t') absent from the KG."""
    valid = [c for c in candidates if not bundle.contains(head, relation, c)]
    if not valid:
        raise EpisodeError(
            f"no negative tail available for head {head}, relation {relation}"
        )
    return valid[int(rng.integers(len(valid)))]


def sample_episode(bundle: DatasetBundle, relation: int, k: int,
                   rng: np.random.Generator,
                   n_query: int = DEFAULT_QUERY_SIZE) -> Episode:
    """Sample a K-shot episode for ``relation``; deterministic under the rng.

    Support and query pairs are disjoint; each pair gets one negative tail
    drawn uniformly from the relation's candidate list, excluding tails that
    would form a known-true triple.
    """
    if k < 1:
        raise ContractError("episode needs k >= 1 support pairs")
    triples = _find_task_triples(bundle, relation)
    if len(triples) < k + 1:
        raise EpisodeError(
            f"relation {relation} has {len(triples)} triples; "
            f"need at least {k + 1} for a {k}-shot episode"
        )
    candidates = bundle.candidates.get(relation)
    if not candidates:
        raise EpisodeError(f"relation {relation} has no candidate list")

    order = rng.permutation(len(triples))
    support_idx = order[:k]
    query_pool = order[k:]
    if n_query > 0:
        query_idx = query_pool[:n_query]
    else:
        query_idx = query_pool

    support = [(triples[i].head, triples[i].tail) for i in support_idx]
    queries = [(triples[i].head, triples[i].tail) for i in query_idx]
    support_negatives = [
        sample_negative(bundle, h, relation, candidates, rng) for h, _ in support
    ]
    query_negatives = [
        sample_negative(bundle, h, relation, candidates, rng) for h, _ in queries
    ]
    return Episode(
        relation=relation,
        support=support,
        queries=queries,
        support_negatives=support_negatives,
        query_negatives=query_negatives,
        candidates=list(candidates),
    )


def fixed_episode(bundle: DatasetBundle, relation: int, k: int,
                  seed: int) -> Episode:
    """Deterministic evaluation episode: first K triples in sorted order are
    the support set; every remaining triple is a query."""
    triples = sorted(
        _find_task_triples(bundle, relation),
        key=lambda t: (t.head, t.tail),
    )
    if len(triples) < k + 1:
        raise EpisodeError(
            f"relation {relation} has {len(triples)} triples; "
            f"need at least {k + 1} for {k}-shot evaluation"
        )
    candidates = bundle.candidates.get(relation)
    if not candidates:
        raise EpisodeError(f"relation {relation} has no candidate list")
    rng = np.random.default_rng([seed, relation, 0x5EED])
    support = [(t.head, t.tail) for t in triples[:k]]
    queries = [(t.head, t.tail) for t in triples[k:]]
    support_negatives = [
        sample_negative(bundle, h, relation, candidates, rng) for h, _ in support
    ]
    query_negatives = [
        sample_negative(bundle, h, relation, candidates, rng) for h, _ in queries
    ]
    return Episode(
        relation=relation,
        support=support,
        queries=queries,
        support_negatives=support_negatives,
        query_negatives=query_negatives,
        candidates=list(candidates),
    )
