from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fewtag.embeddings import HashEmbedder
from fewtag.episodes import sample_episode

from synth import make_domain


def tiny_episode(seed: int, n_slots: int = 2, n_query: int = 2, k: int = 1):
    """A small seeded episode over a synthetic domain, for scorer tests."""
    rng = np.random.default_rng(seed)
    domain = make_domain(
        f"tiny{seed}", rng, n_slots=n_slots, cluster_size=3, n_sentences=40,
        n_fillers=6, max_span_len=2,
    )
    return sample_episode(domain, k=k, n_query=n_query, skip_prob=0.0, rng=rng,
                          episode_id=seed)


@pytest.fixture
def hash16():
    return HashEmbedder(dim=16, seed=7)
