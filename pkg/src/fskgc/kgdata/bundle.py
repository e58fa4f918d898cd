"""Dataset bundle: background graph, task splits, candidates, embeddings.

Directory layout (all text; JSON where noted):

* ``path_graph`` -- one background triple per line, tab-separated names.
* ``train_tasks.json`` / ``dev_tasks.json`` / ``test_tasks.json`` -- object
  mapping relation name to an array of ``[head, relation, tail]`` triples.
* ``rel2candidates.json`` -- relation name to candidate entity names.
* ``ent2ids.json`` / ``relation2ids.json`` -- name to dense integer id.
* ``entity2vec.TransE`` / ``relation2vec.TransE`` (optional) -- one row of
  whitespace-separated floats per id.
* ``groups.json`` (optional, synthetic bundles) -- task relation name to
  group label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, IngestError, ValidationError
from .graph import KnowledgeGraph, Triple, Vocab

SPLIT_FILES = {
    "train": "train_tasks.json",
    "valid": "dev_tasks.json",
    "test": "test_tasks.json",
}
REQUIRED_FILES = [
    "path_graph",
    "train_tasks.json",
    "dev_tasks.json",
    "test_tasks.json",
    "rel2candidates.json",
    "ent2ids.json",
    "relation2ids.json",
]


def random_embeddings(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform rows in [-6/sqrt(d), 6/sqrt(d)]."""
    bound = 6.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n, dim))


@dataclass
class DatasetBundle:
    graph: KnowledgeGraph
    tasks: dict[str, dict[int, list[Triple]]]
    candidates: dict[int, list[int]]
    ent_embeddings: np.ndarray | None = None
    rel_embeddings: np.ndarray | None = None
    groups: dict[int, int] | None = None
    triple_set: frozenset = field(default_factory=frozenset)

    @property
    def train_tasks(self) -> dict[int, list[Triple]]:
        return self.tasks["train"]

    @property
    def valid_tasks(self) -> dict[int, list[Triple]]:
        return self.tasks["valid"]

    @property
    def test_tasks(self) -> dict[int, list[Triple]]:
        return self.tasks["test"]

    def task_relations(self, split: str) -> list[int]:
        return sorted(self.tasks[split])

    def all_task_triples(self) -> list[Triple]:
        out: list[Triple] = []
        for split in ("train", "valid", "test"):
            for rel in sorted(self.tasks[split]):
                out.extend(self.tasks[split][rel])
        return out

    def contains(self, head: int, relation: int, tail: int) -> bool:
        return (head, relation, tail) in self.triple_set

    def stats(self) -> dict[str, int]:
        n_task_triples = sum(
            len(ts) for split in self.tasks.values() for ts in split.values()
        )
        n_tasks = sum(len(split) for split in self.tasks.values())
        return {
            "relations": self.graph.n_relations,
            "entities": self.graph.n_entities,
            "triples": len(self.graph.triples) + n_task_triples,
            "tasks": n_tasks,
        }

    def rebuild_triple_set(self) -> None:
        known = {t.as_tuple() for t in self.graph.triples}
        known.update(t.as_tuple() for t in self.all_task_triples())
        self.triple_set = frozenset(known)


def _read_json(root: Path, name: str):
    path = root / name
    if not path.exists():
        raise IngestError(
            f"missing dataset file {path} (expected files: "
            f"{', '.join(REQUIRED_FILES)})"
        )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e


def _read_embeddings(path: Path, expected_rows: int, dim: int | None) -> np.ndarray:
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.shape[0] < expected_rows:
        raise FormatError(
            f"{path}: {rows.shape[0]} rows but vocabulary has {expected_rows}"
        )
    if dim is not None and rows.shape[1] != dim:
        raise FormatError(
            f"{path}: embedding width {rows.shape[1]} does not match "
            f"configured dimension {dim}"
        )
    return rows[:expected_rows]


def load_dataset(root: str | Path, dim: int | None = None,
                 seed: int = 0) -> DatasetBundle:
    """Load a GMatching-layout dataset directory.

    Entities/relations that appear only in task files are appended to the
    vocabularies; their embedding rows (when pretrained embeddings exist)
    are drawn uniformly from [-6/sqrt(d), 6/sqrt(d)].
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(
            f"dataset directory {root} not found (expected files: "
            f"{', '.join(REQUIRED_FILES)})"
        )

    entities = Vocab.from_mapping(_read_json(root, "ent2ids.json"), "entity")
    relations = Vocab.from_mapping(_read_json(root, "relation2ids.json"), "relation")

    graph_path = root / "path_graph"
    if not graph_path.exists():
        raise IngestError(f"missing dataset file {graph_path}")
    triples: list[Triple] = []
    with open(graph_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{graph_path}:{lineno}: expected 'head\\trelation\\ttail'"
                )
            h, r, t = parts
            triples.append(
                Triple(entities.add(h), relations.add(r), entities.add(t))
            )
    graph = KnowledgeGraph(entities, relations, triples)

    tasks: dict[str, dict[int, list[Triple]]] = {}
    seen_relations: dict[str, str] = {}
    for split, fname in SPLIT_FILES.items():
        raw = _read_json(root, fname)
        split_tasks: dict[int, list[Triple]] = {}
        for rel_name, triple_rows in raw.items():
            if rel_name in seen_relations:
                raise ValidationError(
                    f"relation {rel_name!r} appears in both "
                    f"{seen_relations[rel_name]} and {split} splits"
                )
            seen_relations[rel_name] = split
            rid = relations.add(rel_name)
            rows = []
            for row in triple_rows:
                if len(row) != 3:
                    raise FormatError(f"{fname}: triple {row!r} is not a 3-list")
                h, r, t = row
                if r != rel_name:
                    raise FormatError(
                        f"{fname}: triple {row!r} filed under relation "
                        f"{rel_name!r}"
                    )
                rows.append(Triple(entities.add(h), rid, entities.add(t)))
            split_tasks[rid] = rows
        tasks[split] = split_tasks

    candidates: dict[int, list[int]] = {}
    for rel_name, ent_names in _read_json(root, "rel2candidates.json").items():
        rid = relations.add(rel_name)
        candidates[rid] = [entities.add(e) for e in ent_names]

    rng = np.random.default_rng(seed)
    ent_emb = rel_emb = None
    ent_vec = root / "entity2vec.TransE"
    rel_vec = root / "relation2vec.TransE"
    if ent_vec.exists() and rel_vec.exists():
        ent_emb = _read_embeddings(ent_vec, min(len(entities), _count_rows(ent_vec)),
                                   dim)
        rel_emb = _read_embeddings(rel_vec, min(len(relations), _count_rows(rel_vec)),
                                   dim)
        d = ent_emb.shape[1]
        if ent_emb.shape[0] < len(entities):
            extra = random_embeddings(len(entities) - ent_emb.shape[0], d, rng)
            ent_emb = np.vstack([ent_emb, extra])
        if rel_emb.shape[0] < len(relations):
            extra = random_embeddings(len(relations) - rel_emb.shape[0], d, rng)
            rel_emb = np.vstack([rel_emb, extra])

    groups = None
    groups_path = root / "groups.json"
    if groups_path.exists():
        raw_groups = _read_json(root, "groups.json")
        groups = {relations.add(name): int(g) for name, g in raw_groups.items()}

    bundle = DatasetBundle(
        graph=graph,
        tasks=tasks,
        candidates=candidates,
        ent_embeddings=ent_emb,
        rel_embeddings=rel_emb,
        groups=groups,
    )
    bundle.rebuild_triple_set()
    return bundle


def _count_rows(path: Path) -> int:
    with open(path, "r", encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def write_bundle(bundle: DatasetBundle, outdir: str | Path) -> None:
    """Write a bundle back out in the directory layout read by load_dataset."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ents = bundle.graph.entities
    rels = bundle.graph.relations

    with open(outdir / "path_graph", "w", encoding="utf-8") as fh:
        for t in bundle.graph.triples:
            fh.write(
                f"{ents.id2name[t.head]}\t{rels.id2name[t.relation]}\t"
                f"{ents.id2name[t.tail]}\n"
            )

    for split, fname in SPLIT_FILES.items():
        payload = {
            rels.id2name[rid]: [
                [ents.id2name[t.head], rels.id2name[t.relation],
                 ents.id2name[t.tail]]
                for t in triples
            ]
            for rid, triples in sorted(bundle.tasks[split].items())
        }
        _dump_json(outdir / fname, payload)

    _dump_json(
        outdir / "rel2candidates.json",
        {
            rels.id2name[rid]: [ents.id2name[e] for e in ent_ids]
            for rid, ent_ids in sorted(bundle.candidates.items())
        },
    )
    _dump_json(outdir / "ent2ids.json",
               {name: i for i, name in enumerate(ents.id2name)})
    _dump_json(outdir / "relation2ids.json",
               {name: i for i, name in enumerate(rels.id2name)})

    if bundle.ent_embeddings is not None and bundle.rel_embeddings is not None:
        np.savetxt(outdir / "entity2vec.TransE", bundle.ent_embeddings, fmt="%.17g")
        np.savetxt(outdir / "relation2vec.TransE", bundle.rel_embeddings, fmt="%.17g")

    if bundle.groups is not None:
        _dump_json(
            outdir / "groups.json",
            {rels.id2name[rid]: g for rid, g in sorted(bundle.groups.items())},
        )


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
