"""Model assembly: every learnable tensor, named for checkpointing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .contrast import MsaParams
from .errors import ContractError
from .kgdata import DatasetBundle, random_embeddings
from .numkit import AdamState, Tensor, load_checkpoint, save_checkpoint
from .relearner import MrlParams
from .scorer import ProjectionBank
from .taskgraph import MessagePassingParams, SimilarityHead


@dataclass
class Model:
    dim: int
    bank: ProjectionBank
    mrl: MrlParams
    mp: MessagePassingParams
    sim_head: SimilarityHead
    msa: MsaParams
    w_r: Tensor  # (6d + 1,) task-statistics weight for the adaptive scale

    @classmethod
    def create(cls, bundle: DatasetBundle, config: TrainConfig,
               ent_emb: np.ndarray | None = None,
               rel_emb: np.ndarray | None = None) -> "Model":
        """Initialize from pretrained embeddings when available, else random."""
        rng = np.random.default_rng([config.seed, 0xB00])
        if ent_emb is None:
            ent_emb = bundle.ent_embeddings
        if rel_emb is None:
            rel_emb = bundle.rel_embeddings
        if ent_emb is not None and ent_emb.shape[1] != config.dim:
            raise ContractError(
                f"embedding width {ent_emb.shape[1]} does not match "
                f"configured dim {config.dim}"
            )
        if ent_emb is None:
            ent_emb = random_embeddings(bundle.graph.n_entities, config.dim, rng)
        if rel_emb is None:
            rel_emb = random_embeddings(bundle.graph.n_relations, config.dim, rng)
        d = config.dim
        return cls(
            dim=d,
            bank=ProjectionBank.create(ent_emb, rel_emb, rng),
            mrl=MrlParams.create(d, config.heads, rng),
            mp=MessagePassingParams.create(d, rng),
            sim_head=SimilarityHead.create(d, rng),
            msa=MsaParams.create(d, config.msa_heads, rng),
            w_r=Tensor(np.zeros(6 * d + 1), requires_grad=True),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        named.update(self.bank.tensors())
        named.update(self.mrl.tensors())
        named.update(self.mp.tensors())
        named.update(self.sim_head.tensors())
        named.update(self.msa.tensors())
        named["w_r"] = self.w_r
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    def save(self, path, adam: AdamState | None = None) -> None:
        save_checkpoint(path, self.named_parameters(), adam)

    def load(self, path, adam: AdamState | None = None) -> None:
        load_checkpoint(path, self.named_parameters(), adam)
