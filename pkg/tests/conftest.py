import numpy as np
import pytest

from illsrec.dataset import LinkSet, build_graph


def make_links(pairs, n_items, n_users, item_ids=(), user_ids=()):
    return LinkSet(frozenset(pairs), n_items, n_users, tuple(item_ids), tuple(user_ids))


def random_links(rng, n_items, n_users, count):
    """A random link population with every index space kept."""
    grid = [(i, u) for i in range(n_items) for u in range(n_users)]
    chosen = rng.choice(len(grid), size=count, replace=False)
    return make_links([grid[j] for j in chosen], n_items, n_users)


@pytest.fixture
def tiny_links():
    # u1 holds {o1, o2}, u2 holds {o2, o3}
    return make_links({(0, 0), (1, 0), (1, 1), (2, 1)}, 3, 2,
                      ("o1", "o2", "o3"), ("u1", "u2"))


@pytest.fixture
def tiny_graph(tiny_links):
    return build_graph(tiny_links)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
