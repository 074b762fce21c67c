"""Shared test oracles: finite differences and brute-force retrieval."""

from __future__ import annotations

import numpy as np


def finite_diff_grad(f, arrays, wrt, step=1e-5):
    """Central-difference gradient of scalar f(*arrays) w.r.t. arrays[wrt].

    Independent of any backward pass: only forward evaluations.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[wrt])
    it = np.nditer(base[wrt], flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        orig = base[wrt][ix]
        base[wrt][ix] = orig + step
        f_plus = f(*base)
        base[wrt][ix] = orig - step
        f_minus = f(*base)
        base[wrt][ix] = orig
        grad[ix] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return np.max(np.abs(got - want)) / (np.max(np.abs(want)) + 1e-12)


def brute_force_retrieval(probe_emb, probe_ids, probe_cams, gal_emb, gal_ids,
                          gal_cams, filter_same_camera=True, ks=(1, 5, 10)):
    """Reference CMC/mAP by explicit per-probe ranking in pure Python.

    Sorts candidates by (distance, gallery index); AP is the mean of
    precision at each relevant position. Returns (rank_k dict, mAP,
    per-query AP list, skipped count).
    """
    aps = []
    hits_at = {k: 0 for k in ks}
    skipped = 0
    for i in range(len(probe_ids)):
        cands = []
        for j in range(len(gal_ids)):
            if filter_same_camera and gal_ids[j] == probe_ids[i] and gal_cams[j] == probe_cams[i]:
                continue
            dist = 1.0 - float(np.dot(probe_emb[i], gal_emb[j]))
            cands.append((dist, j))
        cands.sort()
        rel_positions = [pos for pos, (_, j) in enumerate(cands)
                         if gal_ids[j] == probe_ids[i]]
        if not rel_positions:
            skipped += 1
            continue
        for k in ks:
            if rel_positions[0] < k:
                hits_at[k] += 1
        precisions = [(n + 1) / (pos + 1) for n, pos in enumerate(rel_positions)]
        aps.append(sum(precisions) / len(precisions))
    n_valid = len(probe_ids) - skipped
    if n_valid == 0:
        return None, None, [], skipped
    rank_k = {k: hits_at[k] / n_valid for k in ks}
    return rank_k, sum(aps) / len(aps), aps, skipped
