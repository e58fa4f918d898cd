"""Synthetic compositional KG generator for desk-scale experiments.

Entities are partitioned into per-group pools, each split into a head slot
and a tail slot.  Every group owns a latent head->tail assignment; task
relations in a group are noisy samples of that shared assignment, so
transfer between group members is genuinely useful, while relations from
different groups live on disjoint entities.  Background relations connect
entities within each group's pool, which makes group membership visible to
edge-neighborhood methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import SpecError
from .bundle import DatasetBundle
from .graph import KnowledgeGraph, Triple, Vocab


@dataclass
class SynthSpec:
    entities: int = 200
    relations: int = 12
    triples_per_relation: int = 30
    groups: int = 3
    overlap: float = 0.7
    noise: float = 0.1
    head_fraction: float = 0.6
    bg_relations_per_group: int = 2
    bg_degree: int = 3

    def validate(self) -> None:
        if self.groups < 1 or self.relations < 1 or self.entities < 1:
            raise SpecError("entities, relations, and groups must be positive")
        if self.relations % self.groups != 0:
            raise SpecError(
                f"{self.relations} relations cannot be split evenly into "
                f"{self.groups} groups"
            )
        if not 0.0 < self.overlap <= 1.0:
            raise SpecError("overlap fraction must be in (0, 1]")
        if not 0.0 <= self.noise < 1.0:
            raise SpecError("noise must be in [0, 1)")
        pool = self.entities // self.groups
        n_heads = max(2, int(round(pool * self.head_fraction)))
        n_tails = pool - n_heads
        if n_tails < 2:
            raise SpecError(
                f"group pool of {pool} entities leaves fewer than 2 tail "
                "entities; increase entities or lower head_fraction"
            )
        if self.triples_per_relation > n_heads * n_tails:
            raise SpecError(
                f"{self.triples_per_relation} triples per relation exceeds "
                f"the {n_heads * n_tails} distinct entity pairs in a group"
            )
        if self.triples_per_relation < 2:
            raise SpecError("need at least 2 triples per relation")


def _split_roles(count: int) -> list[str]:
    """Roles of a group's relations in order: train, test, valid, then train."""
    roles = []
    for i in range(count):
        if i == 1:
            roles.append("test")
        elif i == 2:
            roles.append("valid")
        else:
            roles.append("train")
    return roles


def synth_generate(spec: SynthSpec, rng: np.random.Generator) -> DatasetBundle:
    """Generate a bundle with disjoint train/valid/test task relations."""
    spec.validate()
    per_group = spec.relations // spec.groups
    pool = spec.entities // spec.groups
    n_heads = max(2, int(round(pool * spec.head_fraction)))

    entities = Vocab([f"e{i:04d}" for i in range(spec.entities)])
    relations = Vocab()

    group_heads: list[np.ndarray] = []
    group_tails: list[np.ndarray] = []
    for g in range(spec.groups):
        start = g * pool
        members = np.arange(start, start + pool, dtype=np.int64)
        members = members[rng.permutation(pool)]
        group_heads.append(np.sort(members[:n_heads]))
        group_tails.append(np.sort(members[n_heads:]))

    # Background relations first so task edges sit inside a structured graph.
    bg_triples: list[Triple] = []
    for g in range(spec.groups):
        bg_ids = [
            relations.add(f"bg_g{g}_{j}") for j in range(spec.bg_relations_per_group)
        ]
        members = np.concatenate([group_heads[g], group_tails[g]])
        for e in members:
            targets = rng.choice(members[members != e],
                                 size=min(spec.bg_degree, members.size - 1),
                                 replace=False)
            for tgt in targets:
                rel = bg_ids[int(rng.integers(len(bg_ids)))]
                bg_triples.append(Triple(int(e), rel, int(tgt)))
    bg_triples = sorted(set(bg_triples), key=lambda t: t.as_tuple())

    tasks: dict[str, dict[int, list[Triple]]] = {
        "train": {}, "valid": {}, "test": {}
    }
    candidates: dict[int, list[int]] = {}
    groups_map: dict[int, int] = {}

    n = spec.triples_per_relation
    core_n = math.ceil(spec.overlap * n)
    for g in range(spec.groups):
        heads = group_heads[g]
        tails = group_tails[g]
        nt = tails.size
        base_slot = rng.permutation(heads.size)  # latent tail slot per head
        head_order = rng.permutation(heads.size)  # core-head order, shared
        roles = _split_roles(per_group)
        for j in range(per_group):
            rid = relations.add(f"task_g{g}_{j}")
            groups_map[rid] = g
            n_distinct_heads = min(n, heads.size)
            core = head_order[:min(core_n, n_distinct_heads)]
            remaining = head_order[len(core):]
            extra_count = n_distinct_heads - len(core)
            if extra_count > 0:
                pick = rng.choice(remaining.size, size=extra_count, replace=False)
                chosen = np.concatenate([core, remaining[np.sort(pick)]])
            else:
                chosen = core

            triples: list[Triple] = []
            seen: set[tuple[int, int, int]] = set()
            layer = 0
            while len(triples) < n:
                for hi in chosen:
                    if len(triples) >= n:
                        break
                    h = int(heads[hi])
                    t = int(tails[(base_slot[hi] + layer) % nt])
                    if rng.random() < spec.noise:
                        t = int(tails[int(rng.integers(nt))])
                    trip = (h, rid, t)
                    while trip in seen:
                        t = int(tails[int(rng.integers(nt))])
                        trip = (h, rid, t)
                    seen.add(trip)
                    triples.append(Triple(*trip))
                layer += 1
            tasks[roles[j]][rid] = triples
            candidates[rid] = [int(t) for t in tails]

    graph = KnowledgeGraph(entities, relations, bg_triples)
    bundle = DatasetBundle(
        graph=graph,
        tasks=tasks,
        candidates=candidates,
        groups=groups_map,
    )
    bundle.rebuild_triple_set()
    return bundle
