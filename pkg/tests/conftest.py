import numpy as np
import pytest

from driftlab.corpus import ContextBatch
from driftlab.model import EmbeddingState


def random_state(rng, n_slices=3, vocab_size=8, dim=4, scale=0.5) -> EmbeddingState:
    return EmbeddingState(
        center=rng.normal(0, scale, size=(n_slices, vocab_size, dim)),
        context=rng.normal(0, scale, size=(vocab_size, dim)),
    )


def random_batch(rng, n=6, vocab_size=8, window=2, slice_index=0) -> ContextBatch:
    """A batch with at least one unmasked context position per example."""
    mask = rng.random((n, 2 * window)) < 0.8
    mask[np.arange(n), rng.integers(0, 2 * window, size=n)] = True
    context_ids = rng.integers(0, vocab_size, size=(n, 2 * window))
    context_ids[~mask] = 0
    return ContextBatch(
        center_ids=rng.integers(0, vocab_size, size=n),
        context_ids=context_ids,
        slice_index=slice_index,
        mask=mask,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
