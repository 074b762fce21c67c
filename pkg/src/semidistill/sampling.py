"""Identity-balanced (PK) and uniform batch samplers."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import SamplingError


def group_by_identity(records: Sequence) -> list[tuple[int, np.ndarray]]:
    """Sorted (identity, record-index array) pairs for a labeled dataset."""
    buckets: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        if rec.identity is None:
            raise SamplingError("PK sampling requires labeled records")
        buckets.setdefault(rec.identity, []).append(i)
    return [(ident, np.asarray(buckets[ident], dtype=np.int64))
            for ident in sorted(buckets)]


def pk_sample_indices(groups: Sequence[tuple[int, np.ndarray]], p: int, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Indices of a batch with p distinct identities, k samples each.

    Identities holding fewer than k images are sampled with
    replacement so every chosen identity contributes exactly k.
    """
    if p < 1 or k < 1:
        raise SamplingError("p and k must be positive")
    if len(groups) < p:
        raise SamplingError(f"need at least {p} identities, dataset has {len(groups)}")
    chosen = rng.choice(len(groups), size=p, replace=False)
    sizes = np.array([groups[gi][1].size for gi in chosen])
    if sizes.min() == sizes.max() and sizes[0] >= k:
        # All chosen identities have the same image count: one vectorized
        # draw of k-without-replacement per row.
        m = sizes[0]
        mat = np.stack([groups[gi][1] for gi in chosen])
        cols = np.argsort(rng.random((p, m)), axis=1, kind="stable")[:, :k]
        return np.take_along_axis(mat, cols, axis=1).reshape(-1)
    out = np.empty(p * k, dtype=np.int64)
    for j, gi in enumerate(chosen):
        idx = groups[gi][1]
        take = rng.choice(idx.size, size=k, replace=idx.size < k)
        out[j * k:(j + 1) * k] = idx[take]
    return out


def pk_sample(records: Sequence, p: int, k: int, rng: np.random.Generator,
              groups: Optional[Sequence[tuple[int, np.ndarray]]] = None) -> list:
    """A PK batch of records; pass precomputed ``groups`` in hot loops."""
    if groups is None:
        groups = group_by_identity(records)
    return [records[i] for i in pk_sample_indices(groups, p, k, rng)]


def uniform_sample_indices(n_records: int, size: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Uniform random batch indices; empty pools yield empty batches."""
    if size <= 0 or n_records == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(n_records, size=size, replace=n_records < size)
