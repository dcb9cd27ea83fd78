"""Redundant associative memory and its capacity/noise simulator.

A memory holds one trace per copy; every stored key-value pair is added
to all copies, with the key permuted by a copy-specific fixed permutation.
Retrieval unbinds with the conjugate of the permuted key and averages the
copies, which decorrelates and shrinks the interference noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import complex_core as cc
from .errors import ContractError, DegenerateQueryError

__all__ = [
    "MemoryTrace",
    "CapacityReport",
    "SweepConfig",
    "capacity_sweep",
    "write_sweep_csv",
    "image_roundtrip",
    "load_raw_rgb",
]


class MemoryTrace:
    """Accumulator of bound key-value pairs, one row per redundant copy.

    Copy 0 always uses the identity permutation, so a 1-copy memory is
    exactly the plain (un-permuted) associative array. Permutations are
    fixed at construction and stored with the trace, so retrieval needs
    nothing external.
    """

    def __init__(
        self,
        n_h: int,
        n_copies: int = 1,
        rng: np.random.Generator | None = None,
        perms: np.ndarray | None = None,
    ):
        if n_h < 2 or n_h % 2 != 0:
            raise ContractError(f"n_h must be even and >= 2, got {n_h}")
        if n_copies < 1:
            raise ContractError(f"n_copies must be >= 1, got {n_copies}")
        self.n_h = n_h
        self.n_copies = n_copies
        if perms is not None:
            perms = np.asarray(perms)
            if perms.shape != (n_copies, n_h // 2):
                raise ContractError(
                    f"perms shape {perms.shape} != {(n_copies, n_h // 2)}"
                )
            self.perms = perms.copy()
        else:
            if rng is None:
                rng = np.random.default_rng()
            rows = [np.arange(n_h // 2)]
            rows += [cc.random_permutation(n_h // 2, rng) for _ in range(n_copies - 1)]
            self.perms = np.stack(rows)
        self.copies = np.zeros((n_copies, n_h))
        self.n_items_stored = 0

    def _check_width(self, v: np.ndarray, what: str) -> None:
        if v.shape != (self.n_h,):
            raise ContractError(f"{what} shape {v.shape} != ({self.n_h},)")

    def _permute_key(self, key: np.ndarray) -> np.ndarray:
        """All per-copy permuted variants of ``key``, shape (n_copies, n_h)."""
        n = self.n_h // 2
        re, im = key[:n], key[n:]
        return np.concatenate([re[self.perms], im[self.perms]], axis=1)

    def store(self, key: np.ndarray, value: np.ndarray) -> "MemoryTrace":
        """Add one bound pair to every copy (in place); returns self."""
        self._check_width(key, "key")
        self._check_width(value, "value")
        self.copies += cc.bind(self._permute_key(key), value[None, :])
        self.n_items_stored += 1
        return self

    def retrieve(self, key: np.ndarray) -> np.ndarray:
        """Average over copies of the conjugate-unbound trace."""
        self._check_width(key, "key")
        est = cc.bind(cc.conjugate(self._permute_key(key)), self.copies)
        return est.mean(axis=0)

    def retrieve_many(self, keys: np.ndarray) -> np.ndarray:
        """Vectorized retrieve for a (k, n_h) block of keys."""
        if keys.ndim != 2 or keys.shape[1] != self.n_h:
            raise ContractError(f"keys shape {keys.shape} incompatible with n_h={self.n_h}")
        n = self.n_h // 2
        acc = np.zeros_like(keys)
        for s in range(self.n_copies):
            p = self.perms[s]
            pk = np.concatenate([keys[:, :n][:, p], keys[:, n:][:, p]], axis=1)
            acc += cc.bind(cc.conjugate(pk), self.copies[s][None, :])
        return acc / self.n_copies

    def partial_key_query(self, key: np.ndarray, known_mask: np.ndarray) -> np.ndarray:
        """Retrieve with unknown key elements zeroed before permutation."""
        self._check_width(key, "key")
        known_mask = np.asarray(known_mask, dtype=bool)
        if known_mask.shape != (self.n_h // 2,):
            raise ContractError(
                f"mask shape {known_mask.shape} != ({self.n_h // 2},)"
            )
        if not known_mask.any():
            raise DegenerateQueryError("partial-key query with no known elements")
        masked = key * np.concatenate([known_mask, known_mask])
        return self.retrieve(masked)


@dataclass
class CapacityReport:
    n_items: int
    n_copies: int
    mse_per_element: float
    n_trials: int
    seed: int

    def __post_init__(self):
        if self.mse_per_element < 0:
            raise ContractError("mse_per_element must be >= 0")


@dataclass
class SweepConfig:
    items_range: Sequence[int]
    copies_range: Sequence[int]
    n_h: int
    n_trials: int = 1
    seed: int = 0
    paired: bool = False  # sweep items and copies together (zip, not product)


def _cell_rng(seed: int, *idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, *idx])


def _item_pair(seed: int, copies: int, trial: int, item: int, n_h: int):
    """Key/value for one stored item, independent of every other item.

    Deriving each item from its own stream keeps results identical whether
    cells are computed incrementally, in parallel, or one by one.
    """
    rng = _cell_rng(seed, copies, trial, item)
    key = cc.random_unit_key(n_h, rng)
    value = rng.standard_normal(n_h)
    return key, value


def _sweep_column(
    n_copies: int, items: Sequence[int], n_h: int, n_trials: int, seed: int
) -> dict[int, float]:
    """Mean per-element retrieval MSE for each item count at fixed copies.

    Items are added incrementally; every (items, copies, trial) cell sees
    exactly the trace it would see if built from scratch.
    """
    items = sorted(set(items))
    sums = {k: 0.0 for k in items}
    n = n_h // 2
    # conjugated permuted keys can be cached per copy so later grid points
    # skip the permutation gathers; only worth the memory when the column
    # is revisited, and only safe when the cache stays comfortably small
    cache_bytes = 2 * 8 * n_copies * items[-1] * n
    use_cache = len(items) > 1 and cache_bytes < 1_500_000_000
    for trial in range(n_trials):
        trace = MemoryTrace(
            n_h, n_copies, rng=_cell_rng(seed, n_copies, trial)
        )
        keys = np.zeros((items[-1], n_h))
        values = np.zeros((items[-1], n_h))
        if use_cache:
            ck_re = np.zeros((n_copies, items[-1], n))
            ck_im = np.zeros((n_copies, items[-1], n))
        stored = 0
        for k in items:
            while stored < k:
                key, value = _item_pair(seed, n_copies, trial, stored, n_h)
                keys[stored] = key
                values[stored] = value
                trace.store(key, value)
                if use_cache:
                    ck_re[:, stored] = key[:n][trace.perms]
                    ck_im[:, stored] = -key[n:][trace.perms]
                stored += 1
            acc_re = np.zeros((k, n))
            acc_im = np.zeros((k, n))
            for s in range(n_copies):
                tr, ti = trace.copies[s, :n], trace.copies[s, n:]
                if use_cache:
                    ar, ai = ck_re[s, :k], ck_im[s, :k]
                else:
                    p = trace.perms[s]
                    ar = keys[:k, :n][:, p]
                    ai = -keys[:k, n:][:, p]
                acc_re += ar * tr - ai * ti
                acc_im += ar * ti + ai * tr
            err_re = acc_re / n_copies - values[:k, :n]
            err_im = acc_im / n_copies - values[:k, n:]
            sums[k] += float((np.mean(err_re**2) + np.mean(err_im**2)) / 2)
    return {k: s / n_trials for k, s in sums.items()}


def capacity_sweep(config: SweepConfig) -> list[CapacityReport]:
    """Store random pairs, retrieve every item, record per-element MSE.

    Deterministic given the seed; rows are emitted items-major.
    """
    items = list(config.items_range)
    copies = list(config.copies_range)
    if not items or not copies:
        raise ContractError("items_range and copies_range must be nonempty")
    if config.n_trials < 1:
        raise ContractError("n_trials must be >= 1")

    if config.paired:
        if len(items) != len(copies):
            raise ContractError("paired sweep needs equal-length ranges")
        cells = list(zip(items, copies))
    else:
        cells = [(k, s) for k in items for s in copies]

    mse_by_copy: dict[int, dict[int, float]] = {}
    for s in sorted({s for _, s in cells}):
        wanted = [k for k, s2 in cells if s2 == s]
        mse_by_copy[s] = _sweep_column(
            s, wanted, config.n_h, config.n_trials, config.seed
        )

    return [
        CapacityReport(k, s, mse_by_copy[s][k], config.n_trials, config.seed)
        for k, s in cells
    ]


def write_sweep_csv(reports: list[CapacityReport], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n_items", "n_copies", "mse", "n_trials", "seed"])
        for r in reports:
            w.writerow([r.n_items, r.n_copies, repr(r.mse_per_element), r.n_trials, r.seed])


def load_raw_rgb(path: str | Path, width: int, height: int, channels: int = 3) -> np.ndarray:
    """Read raw row-major RGB bytes and map them to reals in [0, 1]."""
    data = np.fromfile(str(path), dtype=np.uint8)
    expected = width * height * channels
    if data.size != expected:
        raise ContractError(
            f"raw file holds {data.size} bytes, expected {expected}"
        )
    return data.astype(np.float64) / 255.0


def image_roundtrip(
    item: np.ndarray,
    n_items: int,
    n_copies: int,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Store ``item`` plus n_items-1 random fillers; retrieve item 0.

    Returns (reconstruction, per-element MSE). The item vector must have
    even length; extra items are standard-normal vectors scaled to the
    item's RMS so interference is comparable.
    """
    item = np.asarray(item, dtype=np.float64).ravel()
    if item.size % 2 != 0 or item.size < 2:
        raise ContractError(f"item vectorizes to odd length {item.size}")
    if n_items < 1:
        raise ContractError("n_items must be >= 1")
    rng = np.random.default_rng(seed)
    trace = MemoryTrace(item.size, n_copies, rng=rng)
    key0 = cc.random_unit_key(item.size, rng)
    trace.store(key0, item)
    scale = float(np.sqrt(np.mean(item**2))) or 1.0
    for _ in range(n_items - 1):
        trace.store(
            cc.random_unit_key(item.size, rng),
            rng.standard_normal(item.size) * scale,
        )
    est = trace.retrieve(key0)
    mse = float(np.mean((est - item) ** 2))
    return est, mse
