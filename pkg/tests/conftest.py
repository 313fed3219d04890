import numpy as np
import pytest

from saros.core import ModelParams
from saros.ingest import LabeledRecord, split_dataset
from saros.synth import planted_dataset


@pytest.fixture(scope="session")
def small_planted():
    """80 users x 80 items with planted rank-6 structure."""
    return planted_dataset(n_users=80, n_items=80, k=6, per_user=24, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(n_users, n_items, k, rng, scale=0.5):
    return ModelParams(
        rng.normal(0.0, scale, size=(n_users, k)),
        rng.normal(0.0, scale, size=(n_items, k)),
    )


def dataset_from_feedback(per_user_feedback, per_user_items=None, train_fraction=0.8):
    """Build a Dataset from explicit feedback sequences, one list per user.

    Items default to a fresh id per event so block structure is fully
    controlled by the feedback signs.
    """
    records = []
    next_item = 0
    for u, fbs in enumerate(per_user_feedback):
        for t, fb in enumerate(fbs):
            if per_user_items is not None:
                item = per_user_items[u][t]
            else:
                item = next_item
                next_item += 1
            records.append(LabeledRecord(f"u{u}", f"i{item}", fb, t))
    dataset, _ = split_dataset(records, train_fraction)
    return dataset
