"""Dataset ingestion, edge-neighbor indexing, episodes, and the generator."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fskgc.errors import (
    EpisodeError, FormatError, IngestError, SpecError, ValidationError,
)
from fskgc.kgdata import (
    DatasetBundle, KnowledgeGraph, SynthSpec, Triple, Vocab,
    build_edge_neighbors, load_dataset, sample_episode, synth_generate,
    write_bundle,
)


def tiny_graph(triples):
    n_ent = max(max(h, t) for h, _, t in triples) + 1
    n_rel = max(r for _, r, _ in triples) + 1
    ents = Vocab([f"e{i}" for i in range(n_ent)])
    rels = Vocab([f"r{i}" for i in range(n_rel)])
    return KnowledgeGraph(ents, rels, [Triple(*t) for t in triples])


class TestEdgeNeighbors:
    def test_path_graph_single_neighbor(self):
        g = tiny_graph([(0, 0, 1), (1, 0, 2)])
        nbrs = build_edge_neighbors(g)
        assert [list(x) for x in nbrs] == [[1], [0]]

    def test_star_three_neighbors_each(self):
        g = tiny_graph([(0, 0, i) for i in range(1, 5)])
        nbrs = build_edge_neighbors(g)
        assert all(len(x) == 3 for x in nbrs)

    def test_self_loop_not_own_neighbor(self):
        g = tiny_graph([(0, 0, 0)])
        assert list(build_edge_neighbors(g)[0]) == []

    def test_symmetry_and_brute_force_oracle(self, rng):
        """Index equals O(n^2) pairwise endpoint-intersection brute force."""
        triples = [
            (int(rng.integers(10)), int(rng.integers(3)), int(rng.integers(10)))
            for _ in range(30)
        ]
        g = tiny_graph(triples)
        nbrs = build_edge_neighbors(g)
        for i, (h1, _, t1) in enumerate(triples):
            expected = sorted(
                j
                for j, (h2, _, t2) in enumerate(triples)
                if j != i and ({h1, t1} & {h2, t2})
            )
            assert list(nbrs[i]) == expected
        for i, row in enumerate(nbrs):
            for j in row:
                assert i in nbrs[j]


def write_tiny_dataset(root, with_embeddings=False, dim=4):
    ents = {f"e{i}": i for i in range(8)}
    rels = {"bg0": 0, "bg1": 1, "taskA": 2, "taskB": 3, "taskC": 4}
    (root / "ent2ids.json").write_text(json.dumps(ents))
    (root / "relation2ids.json").write_text(json.dumps(rels))
    bg = [("e0", "bg0", "e1"), ("e1", "bg1", "e2"), ("e2", "bg0", "e3"),
          ("e4", "bg1", "e5"), ("e5", "bg0", "e6")]
    (root / "path_graph").write_text(
        "".join(f"{h}\t{r}\t{t}\n" for h, r, t in bg)
    )
    tasks = {
        "train_tasks.json": {
            "taskA": [["e0", "taskA", "e2"], ["e1", "taskA", "e3"],
                      ["e4", "taskA", "e6"], ["e0", "taskA", "e5"]],
        },
        "dev_tasks.json": {
            "taskB": [["e2", "taskB", "e4"], ["e3", "taskB", "e5"]],
        },
        "test_tasks.json": {
            "taskC": [["e1", "taskC", "e6"], ["e2", "taskC", "e7"]],
        },
    }
    for fname, payload in tasks.items():
        (root / fname).write_text(json.dumps(payload))
    (root / "rel2candidates.json").write_text(json.dumps({
        "taskA": ["e2", "e3", "e5", "e6", "e7"],
        "taskB": ["e4", "e5", "e6"],
        "taskC": ["e6", "e7", "e3"],
    }))
    if with_embeddings:
        rng = np.random.default_rng(0)
        np.savetxt(root / "entity2vec.TransE", rng.normal(size=(8, dim)))
        np.savetxt(root / "relation2vec.TransE", rng.normal(size=(5, dim)))


class TestLoadDataset:
    def test_empty_directory_names_expected_files(self, tmp_path):
        with pytest.raises(IngestError, match="train_tasks.json"):
            load_dataset(tmp_path)

    def test_counts_and_vocab(self, tmp_path):
        write_tiny_dataset(tmp_path)
        bundle = load_dataset(tmp_path)
        stats = bundle.stats()
        assert stats == {"relations": 5, "entities": 8, "triples": 13, "tasks": 3}
        assert bundle.graph.entities.name2id["e7"] == 7

    def test_pretrained_embeddings_loaded(self, tmp_path):
        write_tiny_dataset(tmp_path, with_embeddings=True)
        bundle = load_dataset(tmp_path, dim=4)
        assert bundle.ent_embeddings.shape == (8, 4)
        assert bundle.rel_embeddings.shape == (5, 4)

    def test_embedding_dim_mismatch(self, tmp_path):
        write_tiny_dataset(tmp_path, with_embeddings=True, dim=4)
        with pytest.raises(FormatError, match="width"):
            load_dataset(tmp_path, dim=6)

    def test_split_overlap_rejected(self, tmp_path):
        write_tiny_dataset(tmp_path)
        payload = json.loads((tmp_path / "dev_tasks.json").read_text())
        payload["taskA"] = [["e0", "taskA", "e2"], ["e1", "taskA", "e3"]]
        (tmp_path / "dev_tasks.json").write_text(json.dumps(payload))
        with pytest.raises(ValidationError, match="taskA"):
            load_dataset(tmp_path)

    def test_sparse_ids_rejected(self, tmp_path):
        write_tiny_dataset(tmp_path)
        (tmp_path / "ent2ids.json").write_text(json.dumps({"e0": 0, "e1": 5}))
        with pytest.raises(FormatError, match="dense"):
            load_dataset(tmp_path)

    def test_unseen_task_entity_appended(self, tmp_path):
        write_tiny_dataset(tmp_path)
        payload = json.loads((tmp_path / "test_tasks.json").read_text())
        payload["taskC"].append(["e_new", "taskC", "e7"])
        (tmp_path / "test_tasks.json").write_text(json.dumps(payload))
        bundle = load_dataset(tmp_path)
        assert "e_new" in bundle.graph.entities
        assert bundle.graph.n_entities == 9


class TestSampleEpisode:
    @pytest.fixture
    def bundle(self, tmp_path):
        write_tiny_dataset(tmp_path)
        return load_dataset(tmp_path)

    def test_query_size_one_when_k_plus_one(self, bundle):
        rel = bundle.graph.relations.name2id["taskA"]
        ep = sample_episode(bundle, rel, k=3, rng=np.random.default_rng(1))
        assert len(ep.support) == 3 and len(ep.queries) == 1

    def test_too_few_triples(self, bundle):
        rel = bundle.graph.relations.name2id["taskB"]
        with pytest.raises(EpisodeError):
            sample_episode(bundle, rel, k=2, rng=np.random.default_rng(1))

    def test_forced_negative(self, bundle):
        rel = bundle.graph.relations.name2id["taskB"]
        ep = sample_episode(bundle, rel, k=1, rng=np.random.default_rng(3))
        # taskB pairs: (e2,e4), (e3,e5); candidates {e4,e5,e6}
        for (h, _), neg in zip(
            ep.support + ep.queries, ep.support_negatives + ep.query_negatives
        ):
            assert not bundle.contains(h, rel, neg)

    def test_deterministic_under_seed(self, bundle):
        rel = bundle.graph.relations.name2id["taskA"]
        a = sample_episode(bundle, rel, k=2, rng=np.random.default_rng(17))
        b = sample_episode(bundle, rel, k=2, rng=np.random.default_rng(17))
        assert a == b

    def test_support_query_disjoint(self, bundle):
        rel = bundle.graph.relations.name2id["taskA"]
        ep = sample_episode(bundle, rel, k=2, rng=np.random.default_rng(5))
        assert not (set(ep.support) & set(ep.queries))


class TestSynth:
    def test_spec_arithmetic(self):
        spec = SynthSpec(entities=200, relations=12, triples_per_relation=60,
                         groups=3)
        bundle = synth_generate(spec, np.random.default_rng(0))
        task_triples = bundle.all_task_triples()
        assert len(task_triples) == 720
        n_tasks = sum(len(s) for s in bundle.tasks.values())
        assert n_tasks == 12
        assert len(set(bundle.groups.values())) == 3

    def test_head_overlap_within_group(self):
        spec = SynthSpec(entities=200, relations=12, triples_per_relation=30,
                         groups=3, overlap=0.7)
        bundle = synth_generate(spec, np.random.default_rng(1))
        by_group: dict[int, list[set]] = {}
        for split in bundle.tasks.values():
            for rid, triples in split.items():
                heads = {t.head for t in triples}
                by_group.setdefault(bundle.groups[rid], []).append(heads)
        for mates in by_group.values():
            for i in range(len(mates)):
                for j in range(i + 1, len(mates)):
                    inter = len(mates[i] & mates[j])
                    denom = min(len(mates[i]), len(mates[j]))
                    assert inter / denom >= 0.7

    def test_disjoint_splits_and_seed_variation(self):
        spec = SynthSpec(entities=120, relations=6, triples_per_relation=20,
                         groups=2)
        b1 = synth_generate(spec, np.random.default_rng(1))
        b2 = synth_generate(spec, np.random.default_rng(2))
        rels1 = [set(b1.tasks[s]) for s in ("train", "valid", "test")]
        assert not (rels1[0] & rels1[1] or rels1[0] & rels1[2]
                    or rels1[1] & rels1[2])
        assert {t.as_tuple() for t in b1.all_task_triples()} != {
            t.as_tuple() for t in b2.all_task_triples()
        }
        for b in (b1, b2):
            for split in b.tasks.values():
                for triples in split.values():
                    assert len(triples) == 20

    def test_inconsistent_spec_rejected(self):
        with pytest.raises(SpecError, match="pairs"):
            synth_generate(
                SynthSpec(entities=30, relations=2, triples_per_relation=500,
                          groups=1),
                np.random.default_rng(0),
            )
        with pytest.raises(SpecError, match="evenly"):
            synth_generate(SynthSpec(relations=10, groups=3),
                           np.random.default_rng(0))

    def test_roundtrip_through_external_format(self, tmp_path):
        spec = SynthSpec(entities=120, relations=6, triples_per_relation=15,
                         groups=2)
        bundle = synth_generate(spec, np.random.default_rng(42))
        write_bundle(bundle, tmp_path)
        reloaded = load_dataset(tmp_path)
        assert [t.as_tuple() for t in reloaded.graph.triples] == [
            t.as_tuple() for t in bundle.graph.triples
        ]
        assert reloaded.graph.entities.id2name == bundle.graph.entities.id2name
        assert reloaded.graph.relations.id2name == bundle.graph.relations.id2name
        for split in ("train", "valid", "test"):
            assert set(reloaded.tasks[split]) == set(bundle.tasks[split])
            for rid in bundle.tasks[split]:
                assert [t.as_tuple() for t in reloaded.tasks[split][rid]] == [
                    t.as_tuple() for t in bundle.tasks[split][rid]
                ]
        assert reloaded.candidates == bundle.candidates
        assert reloaded.groups == bundle.groups

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_negative_validity_property(self, seed):
        """Every sampled negative is absent from the graph."""
        spec = SynthSpec(entities=90, relations=4, triples_per_relation=12,
                         groups=2)
        bundle = synth_generate(spec, np.random.default_rng(7))
        rng = np.random.default_rng(seed)
        rel = bundle.task_relations("train")[seed % 2]
        ep = sample_episode(bundle, rel, k=3, rng=rng)
        for (h, _), neg in zip(
            ep.support + ep.queries, ep.support_negatives + ep.query_negatives
        ):
            assert not bundle.contains(h, rel, neg)
        assert not (set(ep.support) & set(ep.queries))
