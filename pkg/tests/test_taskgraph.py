"""WL labeling, set kernels, message passing, and the learned task kernel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fskgc.errors import ContractError
from fskgc.kgdata import AugmentedLineGraph, KnowledgeGraph, Triple, Vocab
from fskgc.numkit import Tape, Tensor, grad, tsum
from fskgc.taskgraph import (
    MessagePassingParams, SimilarityHead, build_task_repr,
    relational_mp_forward, task_attention, task_kernel, wl_edge_labels,
    wl_set_kernel,
)

from conftest import check_gradients


def make_graph(triples):
    n_ent = max(max(h, t) for h, _, t in triples) + 1
    n_rel = max(r for _, r, _ in triples) + 1
    return KnowledgeGraph(
        Vocab([f"e{i}" for i in range(n_ent)]),
        Vocab([f"r{i}" for i in range(n_rel)]),
        [Triple(*t) for t in triples],
    )


def random_graph(rng, n_edges, n_entities, n_relations):
    return make_graph(
        [
            (int(rng.integers(n_entities)), int(rng.integers(n_relations)),
             int(rng.integers(n_entities)))
            for _ in range(n_edges)
        ]
    )


def subtree_strings(graph, depth):
    """Brute-force oracle: fully expanded recursive subtree strings."""
    neighbors = graph.edge_neighbors()
    strings = [[str(t.relation) for t in graph.triples]]
    for _ in range(depth):
        prev = strings[-1]
        strings.append(
            [
                prev[e] + "|(" + ",".join(sorted(prev[u] for u in neighbors[e])) + ")"
                for e in range(len(graph.triples))
            ]
        )
    return strings


def partitions_equal(a, b):
    """Whether two labelings induce the same partition of edge indices."""
    groups_a: dict = {}
    groups_b: dict = {}
    for i, (la, lb) in enumerate(zip(a, b)):
        groups_a.setdefault(la, set()).add(i)
        groups_b.setdefault(lb, set()).add(i)
    return sorted(map(sorted, groups_a.values())) == sorted(
        map(sorted, groups_b.values())
    )


class TestWlLabels:
    def test_isolated_distinct_relations_stay_at_depth0_partition(self):
        g = make_graph([(0, 0, 1), (2, 1, 3), (4, 2, 5)])
        labels = wl_edge_labels(g, 3)
        for m in range(1, 4):
            assert partitions_equal(labels[0], labels[m])

    def test_isomorphic_neighborhoods_share_depth1_label(self):
        # two separate paths a--b with identical relation types
        g = make_graph([(0, 0, 1), (1, 1, 2), (3, 0, 4), (4, 1, 5)])
        labels = wl_edge_labels(g, 1)
        assert labels[1][0] == labels[1][2]
        assert labels[1][1] == labels[1][3]
        assert labels[1][0] != labels[1][1]

    def test_matches_subtree_string_oracle(self, rng):
        for _ in range(25):
            g = random_graph(rng, n_edges=20, n_entities=8, n_relations=4)
            depth = int(rng.integers(1, 4))
            labels = wl_edge_labels(g, depth)
            strings = subtree_strings(g, depth)
            for m in range(depth + 1):
                assert partitions_equal(labels[m], strings[m])

    def test_refinement_monotonicity(self, rng):
        """Depth m+1 partition refines depth m: equal labels at m+1 imply
        equal labels at m."""
        g = random_graph(rng, n_edges=25, n_entities=9, n_relations=3)
        labels = wl_edge_labels(g, 3)
        for m in range(3):
            seen: dict[int, int] = {}
            for e in range(25):
                fine = int(labels[m + 1][e])
                coarse = int(labels[m][e])
                assert seen.setdefault(fine, coarse) == coarse


class TestWlSetKernel:
    def test_self_kernel_single_isolated_edge(self):
        g = make_graph([(0, 0, 1)])
        labels = wl_edge_labels(g, 2)
        assert wl_set_kernel([0], [0], labels, 2) == pytest.approx(3.0)

    def test_disjoint_relation_types_zero(self):
        g = make_graph([(0, 0, 1), (2, 1, 3)])
        labels = wl_edge_labels(g, 2)
        assert wl_set_kernel([0], [1], labels, 2) == 0.0

    def test_direct_summation_oracle(self, rng):
        g = random_graph(rng, n_edges=15, n_entities=6, n_relations=3)
        labels = wl_edge_labels(g, 2)
        sa = [int(i) for i in rng.choice(15, 5, replace=False)]
        sb = [int(i) for i in rng.choice(15, 5, replace=False)]
        direct = sum(
            1.0
            for m in range(3)
            for e in sa
            for f in sb
            if labels[m][e] == labels[m][f]
        ) / (len(sa) * len(sb))
        assert wl_set_kernel(sa, sb, labels, 2) == pytest.approx(direct)
        assert wl_set_kernel(sa, sb, labels, 2) == wl_set_kernel(sb, sa, labels, 2)

    def test_empty_set_rejected(self):
        g = make_graph([(0, 0, 1)])
        labels = wl_edge_labels(g, 1)
        with pytest.raises(ContractError):
            wl_set_kernel([], [0], labels, 1)

    @given(seed=st.integers(0, 10_000), depth=st.integers(0, 3))
    @settings(max_examples=40, deadline=None)
    def test_bounds_property(self, seed, depth):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_edges=int(rng.integers(2, 20)),
                         n_entities=6, n_relations=4)
        labels = wl_edge_labels(g, depth)
        n = len(g.triples)
        sa = [int(i) for i in rng.integers(0, n, size=int(rng.integers(1, 6)))]
        sb = [int(i) for i in rng.integers(0, n, size=int(rng.integers(1, 6)))]
        val = wl_set_kernel(sa, sb, labels, depth)
        assert 0.0 <= val <= depth + 1
        assert val == wl_set_kernel(sb, sa, labels, depth)


def mp_reference(graph, rel_emb, params, depth):
    """Independent straight-line reimplementation of the two recurrences."""
    neighbors = graph.edge_neighbors()
    wa = params.a_weight.data
    wu = params.u_weight.data
    bu = params.u_bias.data
    s = np.stack([rel_emb[t.relation] for t in graph.triples])
    states = [s]
    for _ in range(depth):
        s = states[-1]
        nxt = np.empty_like(s)
        for e in range(len(graph.triples)):
            m = np.zeros(s.shape[1])
            for u in neighbors[e]:
                m += np.concatenate([s[e], s[u]]) @ wa
            nxt[e] = np.tanh(np.concatenate([s[e], m]) @ wu + bu)
        states.append(nxt)
    return states


class TestMessagePassing:
    def test_isolated_edge_zero_message(self, rng):
        g = make_graph([(0, 0, 1), (2, 1, 3)])
        d = 4
        params = MessagePassingParams.create(d, rng)
        emb = Tensor(rng.normal(size=(2, d)))
        states = relational_mp_forward(g, emb, params, 1)
        s0 = states[0].data[0]
        expected = np.tanh(
            np.concatenate([s0, np.zeros(d)]) @ params.u_weight.data
            + params.u_bias.data
        )
        np.testing.assert_allclose(states[1].data[0], expected, atol=1e-12)

    def test_triangle_symmetry(self, rng):
        g = make_graph([(0, 0, 1), (1, 0, 2), (2, 0, 0)])
        d = 5
        params = MessagePassingParams.create(d, rng)
        emb = Tensor(rng.normal(size=(1, d)))
        states = relational_mp_forward(g, emb, params, 3)
        for s in states:
            for row in s.data[1:]:
                np.testing.assert_allclose(row, s.data[0], atol=1e-12)

    def test_matches_straight_line_reimplementation(self, rng):
        g = random_graph(rng, n_edges=10, n_entities=5, n_relations=3)
        d = 6
        params = MessagePassingParams.create(d, rng)
        emb_data = rng.normal(size=(3, d))
        states = relational_mp_forward(g, Tensor(emb_data), params, 2)
        expected = mp_reference(g, emb_data, params, 2)
        for got, want in zip(states, expected):
            np.testing.assert_allclose(got.data, want, atol=1e-10)

    def test_augmented_extra_edges_see_base_edges(self, rng):
        base = make_graph([(0, 0, 1), (1, 1, 2)])
        line = AugmentedLineGraph(base, [Triple(0, 2, 2)])
        # extra edge shares endpoints with both base edges
        joined = make_graph([(0, 0, 1), (1, 1, 2), (0, 2, 2)])
        d = 4
        params = MessagePassingParams.create(d, rng)
        emb = Tensor(rng.normal(size=(3, d)))
        via_aug = relational_mp_forward(line, emb, params, 2)
        via_full = relational_mp_forward(joined, emb, params, 2)
        for a, b in zip(via_aug, via_full):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)


class TestTaskKernel:
    def _reprs(self, rng, d=5, depth=2, n1=3, n2=4):
        g = random_graph(rng, n_edges=12, n_entities=6, n_relations=4)
        params = MessagePassingParams.create(d, rng)
        emb = Tensor(rng.normal(size=(4, d)), requires_grad=True)
        states = relational_mp_forward(g, emb, params, depth)
        t1 = build_task_repr(0, rng.choice(12, n1, replace=False), states)
        t2 = build_task_repr(1, rng.choice(12, n2, replace=False), states)
        return t1, t2, emb, params, g, states

    def test_self_similarity_at_least_half(self, rng):
        t1, _, _, _, _, _ = self._reprs(rng)
        head = SimilarityHead.create(5, rng)
        assert task_kernel(t1, t1, head).item() >= 0.5

    def test_zero_states_give_half(self, rng):
        states = [Tensor(np.zeros((4, 5))) for _ in range(3)]
        t1 = build_task_repr(0, [0, 1], states)
        t2 = build_task_repr(1, [2, 3], states)
        head = SimilarityHead.create(5, rng)
        assert task_kernel(t1, t2, head).item() == pytest.approx(0.5)

    def test_double_loop_oracle_and_symmetry(self, rng):
        t1, t2, _, _, _, states = self._reprs(rng)
        head = SimilarityHead.create(5, rng)
        w = head.weight().data
        direct = 0.0
        for m in range(3):
            f1 = t1.edge_states[m].data
            f2 = t2.edge_states[m].data
            for a in f1:
                for b in f2:
                    direct += a @ w @ b
        direct /= f1.shape[0] * f2.shape[0]
        expected = 1.0 / (1.0 + np.exp(-direct))
        got = task_kernel(t1, t2, head).item()
        assert got == pytest.approx(expected, abs=1e-10)
        assert task_kernel(t2, t1, head).item() == pytest.approx(got, abs=1e-12)

    def test_gradient_flows_to_relation_embeddings(self, rng):
        d, depth = 4, 2
        g = random_graph(rng, n_edges=8, n_entities=5, n_relations=3)
        params = MessagePassingParams.create(d, rng)
        emb = Tensor(rng.normal(size=(3, d)), requires_grad=True)
        head = SimilarityHead.create(d, rng)

        def loss():
            states = relational_mp_forward(g, emb, params, depth)
            t1 = build_task_repr(0, [0, 1, 2], states)
            t2 = build_task_repr(1, [3, 4], states)
            return task_kernel(t1, t2, head)

        check_gradients(loss, [emb, params.a_weight, head.v], tol=1e-4)

    def test_depth_mismatch_rejected(self, rng):
        states3 = [Tensor(np.zeros((4, 5)))] * 3
        states2 = [Tensor(np.zeros((4, 5)))] * 2
        t1 = build_task_repr(0, [0], states3)
        t2 = build_task_repr(1, [1], states2)
        with pytest.raises(ContractError):
            task_kernel(t1, t2, SimilarityHead.create(5, np.random.default_rng(0)))


class TestTaskAttention:
    def _pool(self, rng, n_pool, d=4, identical=False):
        states = [Tensor(rng.normal(size=(10, d))) for _ in range(3)]
        if identical:
            row = rng.normal(size=d)
            states = [Tensor(np.tile(row, (10, 1))) for _ in range(3)]
        target = build_task_repr(99, [0, 1], states)
        pool = [
            build_task_repr(i, [2 + i, 3 + i], states) for i in range(n_pool)
        ]
        return target, pool

    def test_singleton_pool(self, rng):
        target, pool = self._pool(rng, 1)
        head = SimilarityHead.create(4, rng)
        alpha = task_attention(target, pool, head)
        np.testing.assert_allclose(alpha.data, [1.0])

    def test_identical_pool_uniform(self, rng):
        target, pool = self._pool(rng, 4, identical=True)
        head = SimilarityHead.create(4, rng)
        alpha = task_attention(target, pool, head)
        np.testing.assert_allclose(alpha.data, np.full(4, 0.25), atol=1e-12)

    def test_weights_sum_to_one_and_argmax_consistent(self, rng):
        target, pool = self._pool(rng, 5)
        head = SimilarityHead.create(4, rng)
        alpha = task_attention(target, pool, head)
        assert abs(alpha.data.sum() - 1.0) < 1e-12
        assert np.all(alpha.data >= 0)
        w = head.weight().data
        logits = [target.pooled.data @ w @ p.pooled.data for p in pool]
        assert int(np.argmax(alpha.data)) == int(np.argmax(logits))

    def test_empty_pool_rejected(self, rng):
        target, _ = self._pool(rng, 1)
        with pytest.raises(ContractError):
            task_attention(target, [], SimilarityHead.create(4, rng))
