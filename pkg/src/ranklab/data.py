"""Interaction logs: parsing, k-core filtering, splits, synthesis.

Raw data is user<TAB>item<TAB>timestamp, one interaction per line.
Duplicate (user, item) pairs are kept as distinct interactions and
timestamp ties are broken by file order, so a prepared dataset is a pure
function of the input bytes. Dense ids are assigned in first-appearance
order over the surviving interactions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    """Malformed input line (carries the 1-based line number)."""

    def __init__(self, line_no: int, why: str):
        super().__init__(f"line {line_no}: {why}")
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    """Filtering removed everything."""


class SplitError(ValueError):
    """A user is too short to split (carries the original user id)."""

    def __init__(self, user: str):
        super().__init__(f"user {user!r} has fewer than 3 interactions")
        self.user = user


@dataclass(frozen=True)
class RawInteraction:
    user: str
    item: str
    timestamp: int


@dataclass
class InteractionLog:
    """Per-user item sequences over dense contiguous ids.

    sequences[u] is user u's items in timestamp order (ties by file
    order). user_ids / item_ids map dense ids back to the originals.
    """

    user_count: int
    item_count: int
    sequences: list[list[int]]
    user_ids: list[str]
    item_ids: list[str]

    def interaction_count(self) -> int:
        return sum(len(s) for s in self.sequences)

    def stats(self) -> dict:
        inter = self.interaction_count()
        denom = self.user_count * self.item_count
        return {
            "#Users": self.user_count,
            "#Items": self.item_count,
            "#Interactions": inter,
            "Density": inter / denom if denom else 0.0,
            "Avg. Len.": inter / self.user_count if self.user_count else 0.0,
        }


@dataclass
class Split:
    """Leave-one-out: last item is test, one before it validation."""

    train: list[list[int]]
    val: list[int]
    test: list[int]


def load_tsv(path) -> list[RawInteraction]:
    out: list[RawInteraction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts = parts
            if not user or not item:
                raise ParseError(line_no, "empty user or item id")
            try:
                timestamp = int(ts)
            except ValueError:
                raise ParseError(line_no, f"timestamp {ts!r} is not an integer") from None
            out.append(RawInteraction(user, item, timestamp))
    return out


def k_core_filter(raw: list[RawInteraction], k: int = 5) -> InteractionLog:
    """Iteratively drop users and items with fewer than k interactions.

    Runs to the fixed point, which is unique regardless of removal
    order. Interactions are counted with multiplicity.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    users = {r.user for r in raw}
    items = {r.item for r in raw}
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for r in raw:
            if r.user in users and r.item in items:
                ucount[r.user] = ucount.get(r.user, 0) + 1
                icount[r.item] = icount.get(r.item, 0) + 1
        new_users = {u for u, c in ucount.items() if c >= k}
        new_items = {i for i, c in icount.items() if c >= k}
        if new_users == users and new_items == items:
            break
        users, items = new_users, new_items
    surviving = [(idx, r) for idx, r in enumerate(raw) if r.user in users and r.item in items]
    if not surviving:
        raise EmptyDatasetError(f"no interactions survive the {k}-core filter")

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    user_ids: list[str] = []
    item_ids: list[str] = []
    for _, r in surviving:
        if r.user not in user_map:
            user_map[r.user] = len(user_ids)
            user_ids.append(r.user)
        if r.item not in item_map:
            item_map[r.item] = len(item_ids)
            item_ids.append(r.item)

    per_user: list[list[tuple[int, int, int]]] = [[] for _ in user_ids]
    for idx, r in surviving:
        per_user[user_map[r.user]].append((r.timestamp, idx, item_map[r.item]))
    sequences = [[item for _, _, item in sorted(entries)] for entries in per_user]
    return InteractionLog(
        user_count=len(user_ids),
        item_count=len(item_ids),
        sequences=sequences,
        user_ids=user_ids,
        item_ids=item_ids,
    )


def leave_one_out_split(log: InteractionLog) -> Split:
    train: list[list[int]] = []
    val: list[int] = []
    test: list[int] = []
    for u, seq in enumerate(log.sequences):
        if len(seq) < 3:
            raise SplitError(log.user_ids[u])
        train.append(seq[:-2])
        val.append(seq[-2])
        test.append(seq[-1])
    return Split(train=train, val=val, test=test)


def synth_generate(users: int, items: int, latent_dim: int = 4,
                   seq_len_range: tuple[int, int] = (5, 15), seed: int = 0) -> InteractionLog:
    """Synthetic sequential log from a latent-factor model.

    User and item latents are standard normal scaled by 1/sqrt(latent_dim).
    Each step softmax-samples an item from the inner products of
    0.8*user + 0.2*previous-item against all item latents (previous item
    taken as the zero vector at the first step), with immediate
    repetition forbidden. Fully determined by the seed.
    """
    lo, hi = seq_len_range
    if users < 1 or items < 2:
        raise ValueError("need at least one user and two items")
    if not 1 <= lo <= hi:
        raise ValueError("sequence length range must satisfy 1 <= lo <= hi")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(latent_dim)
    user_vecs = rng.standard_normal((users, latent_dim)) * scale
    item_vecs = rng.standard_normal((items, latent_dim)) * scale
    sequences: list[list[int]] = []
    all_items = np.arange(items)
    for u in range(users):
        length = int(rng.integers(lo, hi + 1))
        seq: list[int] = []
        prev = np.zeros(latent_dim)
        for _ in range(length):
            logits = item_vecs @ (0.8 * user_vecs[u] + 0.2 * prev)
            if seq:
                logits = logits.copy()
                logits[seq[-1]] = -np.inf
            logits = logits - logits.max()
            probs = np.exp(logits)
            probs /= probs.sum()
            choice = int(rng.choice(all_items, p=probs))
            seq.append(choice)
            prev = item_vecs[choice]
        sequences.append(seq)
    return InteractionLog(
        user_count=users,
        item_count=items,
        sequences=sequences,
        user_ids=[f"u{u}" for u in range(users)],
        item_ids=[f"i{i}" for i in range(items)],
    )


def log_to_raw(log: InteractionLog) -> list[RawInteraction]:
    """Flatten a log back to raw rows; timestamps are sequence positions."""
    out: list[RawInteraction] = []
    for u, seq in enumerate(log.sequences):
        for t, item in enumerate(seq):
            out.append(RawInteraction(log.user_ids[u], log.item_ids[item], t))
    return out


def save_json(log: InteractionLog, path) -> None:
    payload = {
        "users": log.user_count,
        "items": log.item_count,
        "sequences": log.sequences,
        "id_maps": {"users": log.user_ids, "items": log.item_ids},
        "stats": log.stats(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_json(path) -> InteractionLog:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    log = InteractionLog(
        user_count=int(payload["users"]),
        item_count=int(payload["items"]),
        sequences=[[int(i) for i in seq] for seq in payload["sequences"]],
        user_ids=[str(u) for u in payload["id_maps"]["users"]],
        item_ids=[str(i) for i in payload["id_maps"]["items"]],
    )
    _validate(log)
    return log


def _validate(log: InteractionLog) -> None:
    if len(log.sequences) != log.user_count or len(log.user_ids) != log.user_count:
        raise ValueError("user count does not match sequences/id map")
    if len(log.item_ids) != log.item_count:
        raise ValueError("item count does not match id map")
    for seq in log.sequences:
        for item in seq:
            if not 0 <= item < log.item_count:
                raise ValueError(f"item id {item} out of range")
