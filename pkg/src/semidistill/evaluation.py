"""Retrieval evaluation: cosine distances, CMC rank-k, and mAP.

Follows the standard cross-camera protocol: gallery entries sharing
both identity and camera with the probe are excluded, the rest are
ranked by cosine distance with ties broken by gallery index, CMC counts
the first correct rank, and AP is the non-interpolated average of
precision at each relevant hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datagen import Benchmark, ProtocolSpec, SampleRecord
from .errors import ShapeError
from .models import Model, embed

RANK_KS = (1, 5, 10)


@dataclass(frozen=True)
class EmbeddingSet:
    """L2-normalized embeddings with identity and camera annotations."""

    embeddings: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ShapeError("embeddings must be a non-empty (N, dim) matrix")
        if len(self.identities) != emb.shape[0] or len(self.cameras) != emb.shape[0]:
            raise ShapeError("identity/camera annotations must match the embedding count")
        norms = np.linalg.norm(emb, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ShapeError("embedding rows must be L2-normalized")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "identities", np.asarray(self.identities, dtype=np.int64))
        object.__setattr__(self, "cameras", np.asarray(self.cameras, dtype=np.int64))

    @classmethod
    def from_features(cls, features: np.ndarray, identities, cameras) -> "EmbeddingSet":
        feats = np.asarray(features, dtype=np.float64)
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        return cls(feats / norms, identities, cameras)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


# Probe and gallery share the same structure.
ProbeSet = EmbeddingSet
GallerySet = EmbeddingSet


@dataclass
class EvalResult:
    rank_k: dict[int, float]
    mean_ap: float
    per_query_ap: list[float]
    skipped: int = 0
    num_probes: int = 0

    def to_dict(self) -> dict:
        return {"rank_k": {str(k): v for k, v in self.rank_k.items()},
                "mAP": self.mean_ap, "skipped": self.skipped,
                "num_probes": self.num_probes}


def distance_matrix(probe: EmbeddingSet, gallery: EmbeddingSet) -> np.ndarray:
    """Cosine distance 1 - <p, g> on normalized embeddings, in [0, 2]."""
    if probe.embeddings.shape[1] != gallery.embeddings.shape[1]:
        raise ShapeError("probe and gallery embedding dimensions differ")
    return np.clip(1.0 - probe.embeddings @ gallery.embeddings.T, 0.0, 2.0)


def evaluate(probe: EmbeddingSet, gallery: EmbeddingSet,
             filter_same_camera: bool = True) -> EvalResult:
    """CMC rank-k and mAP over all probes.

    Probes with no valid relevant gallery entry after filtering are
    skipped and counted in ``EvalResult.skipped``.
    """
    dist = distance_matrix(probe, gallery)
    ranks = np.zeros(len(RANK_KS))
    aps: list[float] = []
    skipped = 0
    for i in range(len(probe)):
        same_id = gallery.identities == probe.identities[i]
        if filter_same_camera:
            keep = ~(same_id & (gallery.cameras == probe.cameras[i]))
        else:
            keep = np.ones(len(gallery), dtype=bool)
        relevant = same_id & keep
        if not relevant.any():
            skipped += 1
            continue
        # Stable sort on distance preserves gallery-index order for ties.
        kept_idx = np.flatnonzero(keep)
        order = kept_idx[np.argsort(dist[i, kept_idx], kind="stable")]
        hits = relevant[order]
        hit_positions = np.flatnonzero(hits)
        first = hit_positions[0]
        for j, k in enumerate(RANK_KS):
            if first < k:
                ranks[j] += 1
        precisions = (np.arange(1, hit_positions.size + 1)) / (hit_positions + 1)
        aps.append(float(precisions.mean()))
    n_valid = len(probe) - skipped
    if n_valid == 0:
        raise ValueError("every probe was skipped; gallery has no valid matches")
    return EvalResult(rank_k={k: float(ranks[j] / n_valid) for j, k in enumerate(RANK_KS)},
                      mean_ap=float(np.mean(aps)), per_query_ap=aps,
                      skipped=skipped, num_probes=len(probe))


def split_probe_gallery(records: Sequence[SampleRecord]
                        ) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """First image of each (identity, camera) group to probe, rest to gallery."""
    seen: set[tuple[int, int]] = set()
    probe, gallery = [], []
    for r in records:
        key = (r.identity, r.camera)
        if key in seen:
            gallery.append(r)
        else:
            seen.add(key)
            probe.append(r)
    return probe, gallery


def _embed_records(model: Model, records: Sequence[SampleRecord]) -> EmbeddingSet:
    feats = np.stack([r.features for r in records])
    return EmbeddingSet(embeddings=embed(model, feats),
                        identities=np.asarray([r.identity for r in records]),
                        cameras=np.asarray([r.camera for r in records]))


def run_protocol(protocol: ProtocolSpec, model: Model, benchmark: Benchmark,
                 split_seed: int = 0, filter_same_camera: bool = True
                 ) -> dict[str, EvalResult]:
    """Evaluate a model on each of the protocol's test domains.

    The probe/gallery split is the deterministic first-per-(id, camera)
    rule, so ``split_seed`` does not alter results; it is kept so the
    call shape matches other seeded entry points.
    """
    del split_seed
    results: dict[str, EvalResult] = {}
    for domain_id in protocol.test_domains:
        records = benchmark.domains[domain_id]
        if not records:
            raise ValueError(f"test domain {domain_id!r} is empty")
        probe, gallery = split_probe_gallery(records)
        results[domain_id] = evaluate(_embed_records(model, probe),
                                      _embed_records(model, gallery),
                                      filter_same_camera=filter_same_camera)
    return results
