"""Ranking evaluation: filtered candidate ranking, MRR and Hits@n."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import ContractError, EvaluationError
from .kgdata import DatasetBundle, fixed_episode
from .kgdata.graph import AugmentedLineGraph, Triple
from .metatrain import (
    adaptive_scale, eligible_relations, inner_adapt, task_stats,
)
from .model import Model
from .numkit import Tensor
from .relearner import encode_support, merge, mrl_forward, transfer_aggregate
from .scorer import ProjectionBank, ProjectionOverrides, score_pairs
from .taskgraph import build_task_repr, relational_mp_forward, task_attention


@dataclass
class RankResult:
    head: int
    relation: int
    tail: int
    rank: int
    n_candidates: int


@dataclass
class MetricsReport:
    mrr: float
    hits1: float
    hits5: float
    hits10: float
    n_queries: int
    per_relation: dict[int, dict[str, float]] = field(default_factory=dict)


def rank_query(query: Triple, relation_vec: Tensor, candidates: list[int],
               bank: ProjectionBank, known: frozenset,
               overrides: ProjectionOverrides | None = None,
               raw: bool = False) -> RankResult:
    """Rank of the true tail among the candidates (1-based; lower scores win).

    Under the filtered protocol, candidates forming other known-true triples
    are removed first.  Score ties place the true tail at the mean rank of
    its tie group, rounded up.
    """
    seen: set[int] = set()
    unique = [c for c in candidates if not (c in seen or seen.add(c))]
    if query.tail not in unique:
        raise EvaluationError(
            f"true tail {query.tail} is not among the candidates for "
            f"relation {query.relation}"
        )
    if raw:
        kept = unique
    else:
        kept = [
            c for c in unique
            if c == query.tail or (query.head, query.relation, c) not in known
        ]
    scores = score_pairs([query.head] * len(kept), kept, relation_vec, bank,
                         overrides, relation=query.relation).data
    true_score = scores[kept.index(query.tail)]
    better = int(np.sum(scores < true_score))
    ties = int(np.sum(scores == true_score))
    rank = better + math.ceil((ties + 1) / 2)
    return RankResult(query.head, query.relation, query.tail, rank, len(kept))


def aggregate(results: list[RankResult]) -> MetricsReport:
    """Pooled MRR and Hits@{1,5,10} plus a per-relation breakdown."""
    if not results:
        raise ContractError("aggregate needs at least one rank result")
    by_rel: dict[int, list[RankResult]] = {}
    for r in results:
        by_rel.setdefault(r.relation, []).append(r)

    def metrics(rs: list[RankResult]) -> dict[str, float]:
        ranks = np.asarray([r.rank for r in rs], dtype=np.float64)
        return {
            "mrr": float(np.mean(1.0 / ranks)),
            "hits1": float(np.mean(ranks <= 1)),
            "hits5": float(np.mean(ranks <= 5)),
            "hits10": float(np.mean(ranks <= 10)),
            "queries": float(len(rs)),
        }

    overall = metrics(results)
    return MetricsReport(
        mrr=overall["mrr"], hits1=overall["hits1"], hits5=overall["hits5"],
        hits10=overall["hits10"], n_queries=len(results),
        per_relation={rel: metrics(rs) for rel, rs in sorted(by_rel.items())},
    )


@dataclass
class _Pool:
    relations: list[int]
    base: list[Tensor]
    supports: list[list[tuple[int, int]]]


def _build_pool(bundle: DatasetBundle, model: Model,
                config: TrainConfig) -> _Pool:
    relations = eligible_relations(bundle, "train", config.shots)
    base: list[Tensor] = []
    supports: list[list[tuple[int, int]]] = []
    for rel in relations:
        ep = fixed_episode(bundle, rel, config.shots, config.seed)
        enc = encode_support(model.bank.ent_emb, model.bank.rel_emb,
                             ep.support, rel)
        base.append(mrl_forward(enc, model.mrl))
        supports.append(ep.support)
    return _Pool(relations, base, supports)


def _evaluate_relation(bundle: DatasetBundle, rel: int, model: Model,
                       config: TrainConfig, pool: "_Pool | None",
                       raw: bool) -> list[RankResult]:
    ep = fixed_episode(bundle, rel, config.shots, config.seed)
    enc = encode_support(model.bank.ent_emb, model.bank.rel_emb,
                         ep.support, rel)
    base = mrl_forward(enc, model.mrl)
    transferred = Tensor(np.zeros(model.dim))
    if pool is not None:
        keep = [i for i, r in enumerate(pool.relations) if r != rel]
        if keep:
            extra = [
                Triple(h, pool.relations[i], t)
                for i in keep for h, t in pool.supports[i]
            ]
            own_start = len(extra)
            extra.extend(Triple(h, rel, t) for h, t in ep.support)
            line = AugmentedLineGraph(bundle.graph, extra)
            states = relational_mp_forward(line, model.bank.rel_emb,
                                           model.mp, config.wl_depth)
            offset = 0
            pool_reprs = []
            for i in keep:
                count = len(pool.supports[i])
                pool_reprs.append(build_task_repr(
                    pool.relations[i],
                    line.extra_edge_ids(offset, count), states,
                ))
                offset += count
            target_repr = build_task_repr(
                rel, line.extra_edge_ids(own_start, len(ep.support)), states,
            )
            alpha_w = task_attention(target_repr, pool_reprs, model.sim_head)
            neighbor_base = _stack_rows([pool.base[i] for i in keep])
            transferred = transfer_aggregate(alpha_w, neighbor_base,
                                             model.mrl)
    merged = merge(base, transferred, model.mrl)
    if config.meta:
        alpha = adaptive_scale(task_stats(enc), model.w_r)
        adapt = inner_adapt(ep, merged, model, alpha, config)
        rel_vec, overrides = adapt.relation_vec, adapt.overrides
    else:
        rel_vec, overrides = merged, None
    return [
        rank_query(Triple(h, rel, t), rel_vec, ep.candidates, model.bank,
                   bundle.triple_set, overrides, raw)
        for (h, t) in ep.queries
    ]


def evaluate_split(bundle: DatasetBundle, split: str, model: Model,
                   config: TrainConfig, transfer: bool = False,
                   raw: bool = False, workers: int = 1) -> MetricsReport:
    """Deterministic split evaluation.

    Per relation the first ``shots`` triples (sorted) form the support set
    and every remaining triple is a query; the relation representation is
    encoded, optionally fused with transferred knowledge from the training
    tasks, adapted on the support set, and used to rank all queries.
    Queries are independent given the frozen model, so relations may be
    evaluated on parallel workers without changing the result.
    """
    if split not in ("train", "valid", "test"):
        raise ContractError(f"unknown split {split!r}")
    relations = bundle.task_relations(split)
    if not relations:
        raise EvaluationError(f"split {split!r} has no task relations")
    pool = _build_pool(bundle, model, config) if transfer else None
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            chunks = list(pool_exec.map(
                lambda rel: _evaluate_relation(bundle, rel, model, config,
                                               pool, raw),
                relations,
            ))
    else:
        chunks = [
            _evaluate_relation(bundle, rel, model, config, pool, raw)
            for rel in relations
        ]
    results = [r for chunk in chunks for r in chunk]
    return aggregate(results)


def _stack_rows(rows: list[Tensor]) -> Tensor:
    from .numkit import stack

    return stack(rows, axis=0)


def uniform_rank_stats(candidate_counts: list[int]) -> tuple[float, float]:
    """Mean and standard deviation of MRR under uniform random ranking.

    For a query with n candidates the reciprocal rank is 1/U, U uniform on
    1..n; queries are independent, so the MRR over the set is the mean of
    independent terms.
    """
    if not candidate_counts:
        raise ContractError("need at least one candidate count")
    means = []
    variances = []
    for n in candidate_counts:
        ks = np.arange(1, n + 1, dtype=np.float64)
        m = float(np.mean(1.0 / ks))
        means.append(m)
        variances.append(float(np.mean(1.0 / ks ** 2)) - m * m)
    n_q = len(candidate_counts)
    return float(np.mean(means)), float(np.sqrt(np.sum(variances)) / n_q)


def report_json(report: MetricsReport) -> str:
    payload = {
        "mrr": report.mrr, "hits1": report.hits1, "hits5": report.hits5,
        "hits10": report.hits10, "queries": report.n_queries,
        "per_relation": {str(k): v for k, v in report.per_relation.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=1)


def report_text(report: MetricsReport,
                relation_names: dict[int, str] | None = None) -> str:
    lines = [
        f"{'metric':<10}{'value':>10}",
        f"{'MRR':<10}{report.mrr:>10.4f}",
        f"{'Hits@1':<10}{report.hits1:>10.4f}",
        f"{'Hits@5':<10}{report.hits5:>10.4f}",
        f"{'Hits@10':<10}{report.hits10:>10.4f}",
        f"{'queries':<10}{report.n_queries:>10d}",
    ]
    if relation_names:
        lines.append("")
        lines.append(f"{'relation':<28}{'MRR':>8}{'queries':>9}")
        for rel, m in report.per_relation.items():
            name = relation_names.get(rel, str(rel))
            lines.append(f"{name:<28}{m['mrr']:>8.4f}{int(m['queries']):>9d}")
    return "\n".join(lines)


def per_relation_tsv(report: MetricsReport,
                     relation_names: dict[int, str]) -> str:
    lines = ["relation\tmrr\thits1\thits5\thits10\tqueries"]
    for rel, m in report.per_relation.items():
        lines.append(
            f"{relation_names.get(rel, str(rel))}\t{m['mrr']:.6f}\t"
            f"{m['hits1']:.6f}\t{m['hits5']:.6f}\t{m['hits10']:.6f}\t"
            f"{int(m['queries'])}"
        )
    return "\n".join(lines) + "\n"
