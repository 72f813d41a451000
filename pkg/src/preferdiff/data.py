"""Interaction logs, the chronological user split, in-batch negatives, and
the synthetic cluster-walk generator."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .model import ItemEmbeddingTable


class DataError(ValueError):
    pass


@dataclass
class InteractionLog:
    """Dense-indexed (user, item, timestamp) records.

    ``user_labels[u]`` / ``item_labels[i]`` give the original ids of dense
    user ``u`` / item ``i``.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_labels: list[str]
    item_labels: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_labels)

    @property
    def n_items(self) -> int:
        return len(self.item_labels)

    def __len__(self):
        return len(self.users)

    def item_id(self, label: str) -> int:
        return self.item_labels.index(str(label))

    def sequences(self) -> dict[int, list[tuple[int, int]]]:
        """user -> [(timestamp, item), ...] in chronological order (file order on ties)."""
        order = np.lexsort((np.arange(len(self.users)), self.timestamps, self.users))
        out: dict[int, list[tuple[int, int]]] = {}
        for k in order:
            out.setdefault(int(self.users[k]), []).append((int(self.timestamps[k]), int(self.items[k])))
        return out


@dataclass(frozen=True)
class SequenceExample:
    user: int
    history: tuple[int, ...]  # chronological, unpadded, at most max_len ids
    target: int


@dataclass
class Batch:
    histories: np.ndarray  # (B, L), left-padded with the pad id
    targets: np.ndarray  # (B,)
    negatives: np.ndarray  # (B, |H|)
    users: np.ndarray

    def __len__(self):
        return len(self.targets)


def _label_order(labels) -> list[str]:
    uniq = sorted(set(labels))
    try:
        return sorted(uniq, key=lambda s: (int(s), s))
    except ValueError:
        return uniq


def min_count_filter(users: np.ndarray, items: np.ndarray, min_count: int) -> np.ndarray:
    """Boolean mask of records surviving repeated user/item count filtering."""
    keep = np.ones(len(users), dtype=bool)
    while True:
        _, uinv, ucnt = np.unique(users[keep], return_inverse=True, return_counts=True)
        _, iinv, icnt = np.unique(items[keep], return_inverse=True, return_counts=True)
        ok = (ucnt[uinv] >= min_count) & (icnt[iinv] >= min_count)
        if ok.all():
            return keep
        idx = np.flatnonzero(keep)
        keep[idx[~ok]] = False


def build_log(users, items, timestamps, min_count: int = 5) -> InteractionLog:
    users = np.asarray([str(u) for u in users], dtype=object)
    items = np.asarray([str(i) for i in items], dtype=object)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    keep = min_count_filter(users, items, min_count) if min_count > 1 else np.ones(len(users), bool)
    users, items, timestamps = users[keep], items[keep], timestamps[keep]
    if len(users) == 0:
        raise DataError(f"no interactions left after min_count={min_count} filtering")
    user_labels = _label_order(users)
    item_labels = _label_order(items)
    umap = {u: k for k, u in enumerate(user_labels)}
    imap = {i: k for k, i in enumerate(item_labels)}
    return InteractionLog(
        np.array([umap[u] for u in users], dtype=np.int64),
        np.array([imap[i] for i in items], dtype=np.int64),
        timestamps,
        user_labels,
        item_labels,
    )


def load_interactions(path, min_count: int = 5) -> InteractionLog:
    """Read ``user<TAB>item<TAB>timestamp`` rows (commas also accepted)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    users, items, stamps = [], [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields (user, item, timestamp), got {len(parts)}")
            try:
                ts = int(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: timestamp {parts[2]!r} is not an integer") from None
            users.append(parts[0].strip())
            items.append(parts[1].strip())
            stamps.append(ts)
    if not users:
        raise DataError(f"{path}: no interactions")
    return build_log(users, items, stamps, min_count)


def write_interactions(path, log: InteractionLog) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for u, i, ts in zip(log.users, log.items, log.timestamps):
            fh.write(f"{log.user_labels[u]}\t{log.item_labels[i]}\t{ts}\n")


def user_split(log: InteractionLog, ratios=(8, 1, 1), max_len: int = 10):
    """Chronological 8:1:1 split of whole user sequences.

    Users are ordered by their last timestamp (user id breaks ties); each
    sequence keeps its last ``max_len + 1`` items.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive numbers, got {ratios}")
    seqs = log.sequences()
    if len(seqs) < 3:
        raise DataError(f"need at least 3 user sequences to split, got {len(seqs)}")
    order = sorted(seqs, key=lambda u: (seqs[u][-1][0], u))
    n = len(order)
    total = float(sum(ratios))
    n_valid = max(1, int(n * ratios[1] / total))
    n_test = max(1, int(n * ratios[2] / total))
    n_train = n - n_valid - n_test

    def example(u):
        items = [i for _, i in seqs[u]][-(max_len + 1):]
        return SequenceExample(u, tuple(items[:-1]), items[-1])

    ex = [example(u) for u in order]
    return ex[:n_train], ex[n_train:n_train + n_valid], ex[n_train + n_valid:]


def pad_left(history, pad_id: int, max_len: int) -> np.ndarray:
    out = np.full(max_len, pad_id, dtype=np.int64)
    if history:
        out[max_len - len(history):] = history[-max_len:]
    return out


def sample_negatives(targets: np.ndarray, n_neg: int, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """For each row, ``n_neg`` distinct items drawn from the other rows' targets.

    Copies of the row's own target are never eligible. If the batch holds too
    few distinct other targets the row is topped up with random catalog items.
    """
    if n_neg > n_items - 1:
        raise ValueError(f"cannot draw {n_neg} distinct negatives from {n_items} items")
    B = len(targets)
    out = np.empty((B, n_neg), dtype=np.int64)
    uniq = np.unique(targets)
    for i in range(B):
        pool = uniq[uniq != targets[i]]
        if len(pool) >= n_neg:
            out[i] = rng.choice(pool, n_neg, replace=False)
            continue
        chosen = list(pool)
        taken = set(chosen) | {int(targets[i])}
        while len(chosen) < n_neg:
            cand = int(rng.integers(n_items))
            if cand not in taken:
                taken.add(cand)
                chosen.append(cand)
        out[i] = chosen
    return out


def make_batches(
    examples,
    batch_size: int,
    negatives: int,
    rng: np.random.Generator,
    *,
    n_items: int,
    max_len: int = 10,
) -> Iterator[Batch]:
    """One shuffled pass over ``examples``; the last short batch is kept."""
    if negatives >= 1 and batch_size < 2:
        raise ValueError("batch_size must be >= 2 to draw in-batch negatives")
    if negatives > batch_size - 1:
        raise ValueError(f"negatives={negatives} exceeds the {batch_size - 1} other targets in a batch")
    order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        chunk = [examples[k] for k in order[start:start + batch_size]]
        targets = np.array([e.target for e in chunk], dtype=np.int64)
        hist = np.stack([pad_left(e.history, n_items, max_len) for e in chunk])
        negs = sample_negatives(targets, negatives, n_items, rng)
        yield Batch(hist, targets, negs, np.array([e.user for e in chunk], dtype=np.int64))


# synthetic data ---------------------------------------------------------------------

@dataclass
class SyntheticData:
    log: InteractionLog
    item_cluster: np.ndarray
    user_cluster: np.ndarray
    latent: np.ndarray  # (n_items, d_latent) item coordinates around cluster centres


def gen_synthetic(
    n_users: int = 2000,
    n_items: int = 200,
    d_latent: int = 16,
    noise: float = 0.2,
    seed: int = 0,
    n_clusters: int = 8,
    min_len: int = 6,
    max_len: int = 20,
) -> SyntheticData:
    """Users walk around a ring of items inside one preferred cluster.

    Each step advances 1 or 2 places along the cluster ring with probability
    ``1 - noise``; otherwise it emits a uniformly random catalog item and the
    ring position stays put.
    """
    if n_items < 20 or n_users < 100:
        raise ValueError("synthetic data needs n_items >= 20 and n_users >= 100")
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must lie in [0, 1], got {noise}")
    rng = np.random.default_rng(seed)
    item_cluster = rng.permutation(np.arange(n_items) % n_clusters)
    members = [np.flatnonzero(item_cluster == c) for c in range(n_clusters)]
    centres = 3.0 * rng.standard_normal((n_clusters, d_latent))
    latent = centres[item_cluster] + rng.standard_normal((n_items, d_latent))

    user_cluster = rng.integers(n_clusters, size=n_users)
    users, items, stamps = [], [], []
    for u in range(n_users):
        ring = members[user_cluster[u]]
        pos = int(rng.integers(len(ring)))
        length = int(rng.integers(min_len, max_len + 1))
        t0 = int(rng.integers(0, 1_000_000))
        for step in range(length):
            if rng.random() < noise:
                item = int(rng.integers(n_items))
            else:
                item = int(ring[pos])
                pos = (pos + int(rng.integers(1, 3))) % len(ring)
            users.append(u)
            items.append(item)
            stamps.append(t0 + step)
    log = build_log(users, items, stamps, min_count=1)
    # labels are the generator's own integer ids, so dense ids line up with them
    return SyntheticData(log, item_cluster, user_cluster, latent)


def write_synthetic(path, data: SyntheticData) -> tuple[Path, Path]:
    """Write the interaction file plus ``<path>.clusters.tsv``; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_interactions(path, data.log)
    side = path.with_name(path.name + ".clusters.tsv")
    with side.open("w", encoding="utf-8", newline="\n") as fh:
        for i, c in enumerate(data.item_cluster):
            fh.write(f"item\t{i}\t{c}\n")
        for u, c in enumerate(data.user_cluster):
            fh.write(f"user\t{u}\t{c}\n")
    return path, side


# frozen text-embedding import -----------------------------------------------------------

def write_text_embeddings(path, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def import_text_embeddings(path, n_items: int | None = None) -> ItemEmbeddingTable:
    """Header ``N d`` then N rows of d reals; row i embeds dense item i."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            N, d = int(header[0]), int(header[1])
        except (IndexError, ValueError):
            raise DataError(f"{path}:1: header must be 'N d'") from None
        if n_items is not None and N != n_items:
            raise DataError(f"{path}: embedding file has N={N} rows but the interaction log has {n_items} items")
        rows = []
        for k, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                vals = [float(v) for v in line.split()]
            except ValueError:
                raise DataError(f"{path}:{k}: non-numeric value in row {k - 2}") from None
            if len(vals) != d:
                raise DataError(f"{path}:{k}: expected {d} values in row {k - 2}, got {len(vals)}")
            rows.append(vals)
    if len(rows) != N:
        raise DataError(f"{path}: header declares N={N} rows but found {len(rows)}")
    return ItemEmbeddingTable(np.array(rows, dtype=np.float64), frozen=True)
