"""Rating-log ingestion: parsing, thresholding, probe splitting, graph building.

The pipeline works on dense 0-based indices.  Items index rows, users index
columns, and a link is always an ``(item_index, user_index)`` pair.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class RatingParseError(ValueError):
    """Malformed line in a rating log; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DataError(ValueError):
    """Input data cannot support the requested operation."""


@dataclass(frozen=True)
class InteractionRecord:
    """One raw rating event.  The timestamp is carried but never used."""

    user: str
    item: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class LinkSet:
    """Binary interactions over a fixed index space.

    ``item_ids`` / ``user_ids`` map dense indices back to the raw identifiers
    (position = index).  Subsets of a LinkSet (e.g. a probe split) keep the
    parent's index space and id maps.
    """

    links: frozenset[tuple[int, int]]
    item_count: int
    user_count: int
    item_ids: tuple[str, ...] = ()
    user_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.links)

    def as_array(self) -> np.ndarray:
        """Links as a (q, 2) int64 array in sorted (item, user) order."""
        if not self.links:
            return np.empty((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.links), dtype=np.int64)
        return arr

    def with_links(self, links) -> "LinkSet":
        """Same index space, different link population."""
        return LinkSet(frozenset(links), self.item_count, self.user_count,
                       self.item_ids, self.user_ids)


@dataclass(frozen=True)
class DataSplit:
    training: LinkSet
    probe: LinkSet
    seed: int
    ratio: float


class BipartiteGraph:
    """Binary item-user adjacency with cached degrees.

    ``adjacency`` is an items x users CSR matrix of 1.0 entries; a CSC copy
    is kept for fast per-user profile access.
    """

    def __init__(self, training: LinkSet):
        if len(training) == 0:
            raise DataError("cannot build a graph from an empty training set")
        arr = training.as_array()
        n, m = training.item_count, training.user_count
        data = np.ones(len(arr), dtype=np.float64)
        adj = sp.csr_matrix((data, (arr[:, 0], arr[:, 1])), shape=(n, m))
        self.training = training
        self.adjacency = adj
        self._by_user = adj.tocsc()
        self.item_degrees = np.diff(adj.indptr).astype(np.int64)
        self.user_degrees = np.diff(self._by_user.indptr).astype(np.int64)

    @property
    def item_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def user_count(self) -> int:
        return self.adjacency.shape[1]

    def user_profile(self, user: int) -> np.ndarray:
        """Sorted item indices held by ``user``."""
        col = self._by_user
        return col.indices[col.indptr[user]:col.indptr[user + 1]]

    def item_audience(self, item: int) -> np.ndarray:
        """Sorted user indices holding ``item``."""
        row = self.adjacency
        return row.indices[row.indptr[item]:row.indptr[item + 1]]


def parse_ratings(source, delimiter: str = "\t") -> list[InteractionRecord]:
    """Parse a delimiter-separated rating log into records, preserving order.

    ``source`` may be bytes, text, or a (binary or text) file object.  Each
    non-empty line must carry user, item, rating and optionally a timestamp.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(delimiter)
        if len(parts) < 3:
            raise RatingParseError(lineno, f"expected at least 3 fields, got {len(parts)}")
        try:
            rating = float(parts[2])
        except ValueError:
            raise RatingParseError(lineno, f"rating {parts[2]!r} is not a number") from None
        if not math.isfinite(rating):
            raise RatingParseError(lineno, f"rating {parts[2]!r} is not finite")
        timestamp = None
        if len(parts) >= 4 and parts[3].strip():
            try:
                timestamp = int(parts[3])
            except ValueError:
                raise RatingParseError(lineno, f"timestamp {parts[3]!r} is not an integer") from None
        records.append(InteractionRecord(parts[0], parts[1], rating, timestamp))
    return records


def binarize(records: list[InteractionRecord], threshold: float) -> LinkSet:
    """Keep interactions rated at or above ``threshold`` as binary links.

    Duplicate (user, item) pairs keep the last occurrence.  Users and items
    with no surviving link are dropped; indices are assigned in order of
    first appearance so runs are reproducible.
    """
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    final_rating: dict[tuple[str, str], float] = {}
    for rec in records:
        final_rating[(rec.user, rec.item)] = rec.rating

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    links = set()
    seen: set[tuple[str, str]] = set()
    for rec in records:
        key = (rec.user, rec.item)
        if key in seen:
            continue
        seen.add(key)
        if final_rating[key] < threshold:
            continue
        u = user_index.setdefault(rec.user, len(user_index))
        i = item_index.setdefault(rec.item, len(item_index))
        links.add((i, u))
    return LinkSet(frozenset(links), len(item_index), len(user_index),
                   tuple(item_index), tuple(user_index))


def split_train_probe(links: LinkSet, ratio: float, seed: int) -> DataSplit:
    """Remove a seeded uniform sample of round(ratio * |links|) links as probe."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    q = len(links)
    if q < 2:
        raise DataError("need at least 2 links to split")
    arr = links.as_array()
    probe_size = int(math.floor(ratio * q + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(q)
    probe_rows = arr[perm[:probe_size]]
    train_rows = arr[perm[probe_size:]]
    probe = links.with_links(map(tuple, probe_rows.tolist()))
    training = links.with_links(map(tuple, train_rows.tolist()))
    return DataSplit(training, probe, seed, ratio)


def build_graph(training: LinkSet) -> BipartiteGraph:
    """Adjacency plus degree caches for the training links only."""
    return BipartiteGraph(training)


def density(links: LinkSet) -> float:
    """Fraction of the item x user grid covered by links."""
    if links.item_count <= 0 or links.user_count <= 0:
        raise ValueError("density requires a non-empty index space")
    return len(links) / (links.item_count * links.user_count)


def write_split(split: DataSplit, directory) -> None:
    """Persist a split as two link-list files plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in (("training.links", split.training), ("probe.links", split.probe)):
        lines = [f"{i} {u}" for i, u in part.as_array().tolist()]
        (directory / name).write_text("\n".join(lines) + ("\n" if lines else ""))
    sidecar = {
        "seed": split.seed,
        "ratio": split.ratio,
        "item_count": split.training.item_count,
        "user_count": split.training.user_count,
        "item_ids": list(split.training.item_ids),
        "user_ids": list(split.training.user_ids),
    }
    (directory / "split.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_split(directory) -> DataSplit:
    """Inverse of :func:`write_split`."""
    directory = Path(directory)
    sidecar = json.loads((directory / "split.json").read_text())
    space = LinkSet(frozenset(), sidecar["item_count"], sidecar["user_count"],
                    tuple(sidecar["item_ids"]), tuple(sidecar["user_ids"]))

    def read_links(name):
        pairs = []
        for line in (directory / name).read_text().splitlines():
            if line.strip():
                i, u = line.split()
                pairs.append((int(i), int(u)))
        return space.with_links(pairs)

    return DataSplit(read_links("training.links"), read_links("probe.links"),
                     sidecar["seed"], sidecar["ratio"])
