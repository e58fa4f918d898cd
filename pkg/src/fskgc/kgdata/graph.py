"""Knowledge-graph storage with per-entity and edge-neighborhood indexes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.head, self.relation, self.tail)


class Vocab:
    """Bidirectional name <-> dense-id mapping."""

    def __init__(self, names: list[str] | None = None):
        self.id2name: list[str] = []
        self.name2id: dict[str, int] = {}
        for name in names or []:
            self.add(name)

    @classmethod
    def from_mapping(cls, mapping: dict[str, int], what: str) -> "Vocab":
        n = len(mapping)
        names: list[str | None] = [None] * n
        for name, idx in mapping.items():
            if not isinstance(idx, int) or idx < 0 or idx >= n:
                raise FormatError(
                    f"{what} id {idx!r} for {name!r} is outside the dense "
                    f"range 0..{n - 1}"
                )
            if names[idx] is not None:
                raise FormatError(f"{what} id {idx} assigned twice")
            names[idx] = name
        vocab = cls()
        vocab.id2name = list(names)  # type: ignore[arg-type]
        vocab.name2id = dict(mapping)
        return vocab

    def add(self, name: str) -> int:
        idx = self.name2id.get(name)
        if idx is None:
            idx = len(self.id2name)
            self.id2name.append(name)
            self.name2id[name] = idx
        return idx

    def __len__(self) -> int:
        return len(self.id2name)

    def __contains__(self, name: str) -> bool:
        return name in self.name2id


@dataclass
class KnowledgeGraph:
    """Entity/relation vocabularies plus an indexed triple store."""

    entities: Vocab
    relations: Vocab
    triples: list[Triple] = field(default_factory=list)
    _incident: list[list[int]] | None = None
    _outgoing: list[list[int]] | None = None
    _neighbors: list[np.ndarray] | None = None

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triple_array(self) -> np.ndarray:
        return np.asarray(
            [(t.head, t.relation, t.tail) for t in self.triples], dtype=np.int64
        ).reshape(-1, 3)

    def incident_index(self) -> list[list[int]]:
        """Entity id -> indices of triples touching it (head or tail)."""
        if self._incident is None:
            incident: list[list[int]] = [[] for _ in range(self.n_entities)]
            for i, t in enumerate(self.triples):
                incident[t.head].append(i)
                if t.tail != t.head:
                    incident[t.tail].append(i)
            self._incident = incident
        return self._incident

    def outgoing_index(self) -> list[list[int]]:
        """Entity id -> indices of triples with that entity as head."""
        if self._outgoing is None:
            outgoing: list[list[int]] = [[] for _ in range(self.n_entities)]
            for i, t in enumerate(self.triples):
                outgoing[t.head].append(i)
            self._outgoing = outgoing
        return self._outgoing

    def edge_neighbors(self) -> list[np.ndarray]:
        """Line-graph index: triple occurrence -> occurrences sharing an endpoint.

        Symmetric, deduplicated, and never containing the triple itself.
        """
        if self._neighbors is None:
            incident = self.incident_index()
            neighbors: list[np.ndarray] = []
            for i, t in enumerate(self.triples):
                merged = set(incident[t.head])
                merged.update(incident[t.tail])
                merged.discard(i)
                neighbors.append(np.fromiter(sorted(merged), dtype=np.int64,
                                             count=len(merged)))
            self._neighbors = neighbors
        return self._neighbors

    def invalidate_indexes(self) -> None:
        self._incident = None
        self._outgoing = None
        self._neighbors = None


def build_edge_neighbors(graph: KnowledgeGraph) -> list[np.ndarray]:
    """Edge-neighbor index of ``graph`` (triples sharing >= 1 endpoint)."""
    return graph.edge_neighbors()


class AugmentedLineGraph:
    """Line-graph view of a background graph plus extra (task) edges.

    Edge ids 0..n_base-1 are the background triples; ids n_base.. are the
    extra triples in the order given.  Used by the relational message
    passer, which needs neighbor pairs for the union graph without
    rebuilding the background index.
    """

    def __init__(self, graph: KnowledgeGraph, extra: list[Triple]):
        self.graph = graph
        self.extra = list(extra)
        n_base = len(graph.triples)
        self.n_edges = n_base + len(self.extra)
        self.relation_ids = np.asarray(
            [t.relation for t in graph.triples] + [t.relation for t in self.extra],
            dtype=np.int64,
        )

        base_nbrs = graph.edge_neighbors()
        incident = graph.incident_index()

        extra_incident: dict[int, list[int]] = {}
        for j, t in enumerate(self.extra):
            extra_incident.setdefault(t.head, []).append(n_base + j)
            if t.tail != t.head:
                extra_incident.setdefault(t.tail, []).append(n_base + j)

        pair_src: list[np.ndarray] = []
        pair_nbr: list[np.ndarray] = []
        for i, nbrs in enumerate(base_nbrs):
            if nbrs.size:
                pair_src.append(np.full(nbrs.size, i, dtype=np.int64))
                pair_nbr.append(nbrs)

        for j, t in enumerate(self.extra):
            eid = n_base + j
            merged = set(incident[t.head]) if t.head < len(incident) else set()
            if t.tail < len(incident):
                merged.update(incident[t.tail])
            merged.update(extra_incident.get(t.head, ()))
            merged.update(extra_incident.get(t.tail, ()))
            merged.discard(eid)
            if merged:
                nbrs = np.fromiter(sorted(merged), dtype=np.int64, count=len(merged))
                # both directions: the new edge sees its neighbors, and the
                # base edges among them see the new edge
                pair_src.append(np.full(nbrs.size, eid, dtype=np.int64))
                pair_nbr.append(nbrs)
                base_side = nbrs[nbrs < n_base]
                if base_side.size:
                    pair_src.append(base_side)
                    pair_nbr.append(np.full(base_side.size, eid, dtype=np.int64))

        if pair_src:
            self.pair_src = np.concatenate(pair_src)
            self.pair_nbr = np.concatenate(pair_nbr)
        else:
            self.pair_src = np.empty(0, dtype=np.int64)
            self.pair_nbr = np.empty(0, dtype=np.int64)

    def extra_edge_ids(self, start: int, count: int) -> np.ndarray:
        n_base = len(self.graph.triples)
        return np.arange(n_base + start, n_base + start + count, dtype=np.int64)
