import numpy as np
import pytest

from dmpfeedback.pipeline import extract_coupling_datasets, learn_nominal
from dmpfeedback.simulator import TINY_PROFILE, generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    corpus, contact = generate_corpus(seed=42, profile=TINY_PROFILE)
    return corpus, contact


@pytest.fixture(scope="session")
def tiny_behavior(tiny_corpus):
    corpus, _ = tiny_corpus
    behavior, report = learn_nominal(corpus[0.0])
    return behavior, report


@pytest.fixture(scope="session")
def tiny_datasets(tiny_corpus, tiny_behavior):
    corpus, _ = tiny_corpus
    behavior, _ = tiny_behavior
    return extract_coupling_datasets(corpus, behavior)


def quat_allclose(a, b, atol=1e-9):
    """Compare quaternions as rotations (up to the double-cover sign)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return (np.allclose(a, b, atol=atol) or np.allclose(a, -b, atol=atol))
