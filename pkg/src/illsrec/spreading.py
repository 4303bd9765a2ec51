"""Resource spreading over the bipartite graph.

Each user's training profile starts with one unit of resource per item.  The
resource flows item -> user -> item, each hop splitting a node's resource
equally over its links, and comes back as a dense relevance score for every
item.  The two-pass evaluation never materialises the item-item transfer
matrix: for a seed vector f the first pass gives each user j the share
sum_beta a[beta,j] * f[beta] / item_degree[beta], and the second pass returns
f_new[alpha] = sum_j a[alpha,j] * share[j] / user_degree[j].  The total mass
of a seed vector is preserved exactly (unreachable items get exact zeros).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import BipartiteGraph, LinkSet, build_graph

# Entry provenance codes (also the byte values in the provenance dump).
MISSING = 0    # exact zero, untouched by spreading or imputation
OBSERVED = 1   # training link, pinned to 1.0
SPREAD = 2     # positive diffusion score
IMPUTED = 3    # filled in by least-squares imputation


@dataclass(frozen=True)
class ScoreMatrix:
    """Dense items x users score matrix with per-entry provenance.

    ``user_mass`` holds each user's total diffusion mass before observed
    entries are pinned to 1.0; it is only set by :func:`densify`.
    Instances are treated as immutable: the arrays are marked read-only.
    """

    values: np.ndarray       # (n, m) float64
    provenance: np.ndarray   # (n, m) uint8
    training: LinkSet
    user_mass: np.ndarray | None = None

    def __post_init__(self):
        self.values.setflags(write=False)
        self.provenance.setflags(write=False)
        if self.user_mass is not None:
            self.user_mass.setflags(write=False)

    @property
    def item_count(self) -> int:
        return self.values.shape[0]

    @property
    def user_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpreadStats:
    nonzero_fraction: float
    per_user_mass: np.ndarray


def _spread_columns(graph: BipartiteGraph, seeds: np.ndarray) -> np.ndarray:
    """Apply the two-pass diffusion to each column of ``seeds`` (n x c)."""
    inv_item = np.zeros(graph.item_count)
    nz = graph.item_degrees > 0
    inv_item[nz] = 1.0 / graph.item_degrees[nz]
    inv_user = np.zeros(graph.user_count)
    nz = graph.user_degrees > 0
    inv_user[nz] = 1.0 / graph.user_degrees[nz]

    shares = graph.adjacency.T @ (seeds * inv_item[:, None])
    return graph.adjacency @ (shares * inv_user[:, None])


def spread_user(graph: BipartiteGraph, user: int) -> np.ndarray:
    """Diffusion scores for one user's unit-resource profile.

    A user with an empty profile gets the zero vector.
    """
    if not 0 <= user < graph.user_count:
        raise IndexError(f"user index {user} out of range")
    seed = np.zeros((graph.item_count, 1))
    seed[graph.user_profile(user), 0] = 1.0
    return _spread_columns(graph, seed)[:, 0]


def densify(graph: BipartiteGraph) -> ScoreMatrix:
    """Spread every user's profile, then pin training entries to 1.0.

    Entries that stay exactly zero are unreachable within two hops and are
    tagged MISSING; positive non-training entries are tagged SPREAD.
    """
    seeds = graph.adjacency.toarray()
    values = _spread_columns(graph, seeds)
    mass = values.sum(axis=0)

    provenance = np.where(values > 0.0, SPREAD, MISSING).astype(np.uint8)
    observed = seeds > 0.0
    values[observed] = 1.0
    provenance[observed] = OBSERVED
    return ScoreMatrix(values, provenance, graph.training, user_mass=mass)


def binary_scores(training: LinkSet) -> ScoreMatrix:
    """The un-spread 0/1 matrix: training links OBSERVED, the rest MISSING."""
    graph = build_graph(training)
    values = graph.adjacency.toarray()
    provenance = np.where(values > 0.0, OBSERVED, MISSING).astype(np.uint8)
    return ScoreMatrix(values, provenance, training)


def spread_stats(scores: ScoreMatrix) -> SpreadStats:
    """Nonzero fraction plus each user's pre-pinning diffusion mass."""
    nonzero = float(np.count_nonzero(scores.values > 0.0)) / scores.values.size
    if scores.user_mass is not None:
        mass = scores.user_mass
    else:
        graph = build_graph(scores.training)
        mass = _spread_columns(graph, graph.adjacency.toarray()).sum(axis=0)
    return SpreadStats(nonzero, mass)


def write_scores(scores: ScoreMatrix, values_path, provenance_path) -> None:
    """Binary dump: 16-byte header (n, m as little-endian uint64) followed by
    the item-major payload (float64 LE values / one provenance byte per entry).
    """
    header = struct.pack("<QQ", scores.item_count, scores.user_count)
    Path(values_path).write_bytes(header + scores.values.astype("<f8").tobytes())
    Path(provenance_path).write_bytes(header + scores.provenance.astype(np.uint8).tobytes())
