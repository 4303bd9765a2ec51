"""Synthetic rating logs with tunable popularity skew and taste clusters.

Real benchmark logs cannot be redistributed with the package, so tests and
the quickstart run on generated analogs matched to the familiar desk-scale
shapes (943 x 1682 with 100k ratings, and sparse subsamples of it).  Items
carry a log-normal popularity weight and one latent genre; users carry a
Dirichlet mix over genres plus a log-normal activity level.  Each user picks
their items by weighted sampling without replacement (Gumbel top-k), so both
the popularity skew and the genre affinity shape the co-rating structure
that spreading and imputation exploit.
"""

from __future__ import annotations

import math

import numpy as np

from .dataset import InteractionRecord, LinkSet


def movielens_like(seed: int = 0, users: int = 943, items: int = 1682,
                   records: int = 100_000, link_fraction: float = 0.825,
                   genres: int = 12, genre_concentration: float = 0.22,
                   popularity_sigma: float = 1.4, activity_sigma: float = 0.85,
                   affinity_strength: float = 1.8, taste_noise: float = 0.0,
                   diffuse_users: float = 0.0, min_user_links: int = 16,
                   min_item_links: int = 3) -> list[InteractionRecord]:
    """A rating log shaped like the classic 943-user movie benchmark.

    ``link_fraction`` of the records rate 3..5 (these become links at the
    usual threshold of 3); the rest rate 1..2 on pairs that never carry a
    link, so thresholding keeps every user and item in the index space.
    ``taste_noise`` routes that share of each user's links through pure
    popularity; ``diffuse_users`` makes that share of the population
    near-indifferent to genre.  Both dilute the taste signal without
    touching the degree sequences.  Deterministic for a fixed seed.
    """
    if records <= 0 or users <= 1 or items <= 1:
        raise ValueError("need positive record count and at least 2 users and items")
    if not 0.0 <= taste_noise <= 1.0:
        raise ValueError("taste_noise must lie in [0, 1]")
    if not 0.0 <= diffuse_users <= 1.0:
        raise ValueError("diffuse_users must lie in [0, 1]")
    target_links = int(math.floor(records * link_fraction + 0.5))
    if target_links < users * min_user_links or target_links > users * items // 2:
        raise ValueError("link budget is infeasible for the requested shape")

    rng = np.random.default_rng(seed)

    item_genre = rng.integers(0, genres, size=items)
    popularity = rng.lognormal(mean=0.0, sigma=popularity_sigma, size=items)
    taste = rng.dirichlet(np.full(genres, genre_concentration), size=users)
    flat_count = int(math.floor(diffuse_users * users + 0.5))
    if flat_count:
        flat = rng.dirichlet(np.full(genres, 8.0), size=flat_count)
        taste[rng.permutation(users)[:flat_count]] = flat
    taste = np.maximum(taste, 1e-290)  # keep log finite for razor-thin mixtures

    degrees = _user_degrees(rng, users, items, target_links,
                            min_user_links, activity_sigma)

    pop_log = np.log(popularity)
    log_weight = pop_log[None, :] + affinity_strength * np.log(taste[:, item_genre])
    linked: list[set[int]] = []
    for u in range(users):
        noise_picks = int(math.floor(taste_noise * degrees[u] + 0.5))
        gumbel = rng.gumbel(size=items)
        picks = np.argpartition(-(log_weight[u] + gumbel),
                                degrees[u] - noise_picks)[:degrees[u] - noise_picks]
        profile = set(int(i) for i in picks)
        if noise_picks:
            gumbel = rng.gumbel(size=items)
            keys = pop_log + gumbel
            keys[list(profile)] = -np.inf
            extra = np.argpartition(-keys, noise_picks)[:noise_picks]
            profile.update(int(i) for i in extra)
        linked.append(profile)

    _ensure_item_coverage(rng, linked, item_genre, taste, items, min_item_links)

    pairs = [(u, i) for u in range(users) for i in sorted(linked[u])]
    link_ratings = rng.choice([3, 4, 5], size=len(pairs), p=[0.33, 0.41, 0.26])

    noise_count = records - len(pairs)
    noise_pairs = _noise_pairs(rng, linked, users, items, noise_count)
    noise_ratings = rng.choice([1, 2], size=len(noise_pairs), p=[0.35, 0.65])

    raw = [(u, i, int(r)) for (u, i), r in zip(pairs, link_ratings)]
    raw += [(u, i, int(r)) for (u, i), r in zip(noise_pairs, noise_ratings)]
    order = rng.permutation(len(raw))
    base_time = 874_000_000
    return [InteractionRecord(str(raw[j][0] + 1), str(raw[j][1] + 1), float(raw[j][2]),
                              base_time + int(pos))
            for pos, j in enumerate(order)]


def _user_degrees(rng, users, items, target_links, floor, sigma):
    """Log-normal per-user link counts rescaled to hit the target total."""
    raw = rng.lognormal(mean=0.0, sigma=sigma, size=users)
    raw = raw / raw.sum() * target_links
    degrees = np.maximum(np.floor(raw).astype(int), floor)
    degrees = np.minimum(degrees, items - 1)
    diff = target_links - int(degrees.sum())
    adjustable = rng.permutation(users)
    step = 1 if diff > 0 else -1
    idx = 0
    while diff != 0:
        u = adjustable[idx % users]
        new = degrees[u] + step
        if floor <= new <= items - 1:
            degrees[u] = new
            diff -= step
        idx += 1
    return degrees


def _ensure_item_coverage(rng, linked, item_genre, taste, items, min_links):
    """Attach extra links so no item falls below ``min_links`` holders."""
    holders = np.zeros(items, dtype=int)
    for picks in linked:
        for i in picks:
            holders[i] += 1
    for i in np.nonzero(holders < min_links)[0]:
        need = min_links - holders[i]
        affinity = taste[:, item_genre[i]].copy()
        for u, picks in enumerate(linked):
            if i in picks:
                affinity[u] = -1.0
        for u in np.argsort(-affinity, kind="stable")[:need]:
            linked[int(u)].add(int(i))
            holders[i] += 1


def _noise_pairs(rng, linked, users, items, count):
    """Sub-threshold pairs drawn outside the link population, no duplicates."""
    taken = {(u, i) for u in range(users) for i in linked[u]}
    out = []
    seen = set()
    while len(out) < count:
        batch = max(count - len(out), 1)
        us = rng.integers(0, users, size=2 * batch)
        its = rng.integers(0, items, size=2 * batch)
        for u, i in zip(us.tolist(), its.tolist()):
            if len(out) >= count:
                break
            pair = (u, i)
            if pair in taken or pair in seen:
                continue
            seen.add(pair)
            out.append(pair)
    return out


def subsample_links(links: LinkSet, target_density: float, seed: int) -> LinkSet:
    """Uniformly thin a link set to the requested density.

    The index space (and its id maps) is preserved, so users or items may end
    up with zero links, as in genuinely sparse collections.
    """
    grid = links.item_count * links.user_count
    keep = int(math.floor(target_density * grid + 0.5))
    if keep <= 0 or keep > len(links):
        raise ValueError(f"cannot thin {len(links)} links to {keep}")
    arr = links.as_array()
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(arr), size=keep, replace=False)
    return links.with_links(map(tuple, arr[np.sort(chosen)].tolist()))


def write_ratings(records, path, delimiter: str = "\t") -> None:
    """Write records in the user<TAB>item<TAB>rating<TAB>timestamp layout."""
    lines = []
    for rec in records:
        rating = int(rec.rating) if float(rec.rating).is_integer() else rec.rating
        stamp = "" if rec.timestamp is None else rec.timestamp
        lines.append(f"{rec.user}{delimiter}{rec.item}{delimiter}{rating}{delimiter}{stamp}")
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")
