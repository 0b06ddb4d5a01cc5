import numpy as np
import pytest

from ipl import FunctionEncoder, ScorerContext, SynthConfig, synth_generate
from ipl.store import EmbeddingTable

TINY = SynthConfig(
    classes=4,
    dim=16,
    attributes=2,
    images_per_class=5,
    distractors=4,
    noise=0.1,
)


@pytest.fixture(scope="session")
def tiny_store():
    return synth_generate(TINY, seed=7)


@pytest.fixture(scope="session")
def default_store():
    """The planted-attribute store used by the acceptance suite."""
    return synth_generate(SynthConfig(), seed=0)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def bag_encoder(tokens: EmbeddingTable, class_rows):
    """Minimal encoder over explicit class rows: normalized sum of vectors."""

    def encode(pos, inserted):
        total = np.array(class_rows[pos], dtype=np.float64)
        for tid in inserted:
            total = total + tokens.vector(tid)
        return total / np.linalg.norm(total)

    return FunctionEncoder(encode, len(class_rows))


def make_context(images, labels, tokens, class_rows, tau=1.0):
    return ScorerContext(images, labels, tau, bag_encoder(tokens, class_rows), tokens)
