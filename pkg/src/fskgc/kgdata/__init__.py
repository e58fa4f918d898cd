"""Knowledge-graph storage, dataset ingestion, episodes, and synthesis."""

from .bundle import (
    DatasetBundle, load_dataset, random_embeddings, write_bundle,
)
from .episodes import Episode, fixed_episode, sample_episode, sample_negative
from .graph import (
    AugmentedLineGraph, KnowledgeGraph, Triple, Vocab, build_edge_neighbors,
)
from .synth import SynthSpec, synth_generate

__all__ = [
    "DatasetBundle", "load_dataset", "random_embeddings", "write_bundle",
    "Episode", "fixed_episode", "sample_episode", "sample_negative",
    "AugmentedLineGraph", "KnowledgeGraph", "Triple", "Vocab",
    "build_edge_neighbors", "SynthSpec", "synth_generate",
]
