"""Retrieval evaluation: ranking, recall@k, and the two-proportion Z-test.

Each caption queries the image pool of its split; the single paired image
is the target.  R@k is the fraction of queries whose target lands in the
top k by cosine distance.  Because every query has exactly one target,
R@k per query is a Bernoulli outcome, so two conditions can be compared
with a pooled two-proportion Z statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .encoder import EncoderConfig, EncoderParams, SequenceBatch, encode_image, encode_utterance
from .segmentation import tiers_for_source
from .tensor import Tensor

if TYPE_CHECKING:
    from .training import PairedDataset


@dataclass
class RetrievalReport:
    """Per-query hit indicators and mean recalls for one condition."""

    hits_at: dict[int, np.ndarray]
    recalls: dict[int, float]
    n_queries: int
    condition_label: str = ""


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_value: float
    p1: float
    p2: float
    n1: int
    n2: int


def _check_unit_rows(x: np.ndarray, what: str) -> None:
    norms = np.sqrt((x * x).sum(axis=-1))
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(f"{what} must be unit-norm")


def rank_images(query_emb, image_embs) -> np.ndarray:
    """Image indices sorted by ascending cosine distance to the query.

    Ties break toward the lower index, so rankings are reproducible.
    """
    q = query_emb.data if isinstance(query_emb, Tensor) else np.asarray(query_emb, dtype=np.float64)
    imgs = image_embs.data if isinstance(image_embs, Tensor) else np.asarray(image_embs, dtype=np.float64)
    if imgs.ndim != 2 or imgs.shape[0] == 0:
        raise ValueError("image_embs must be a non-empty (N, e) matrix")
    if q.shape != (imgs.shape[1],):
        raise ValueError(f"query shape {q.shape} does not match image dim {imgs.shape[1]}")
    _check_unit_rows(q[None, :], "query embedding")
    _check_unit_rows(imgs, "image embeddings")
    distances = 1.0 - imgs @ q
    return np.argsort(distances, kind="stable")


def recall_at_k(targets: Sequence[int], rankings: Sequence[np.ndarray],
                ks: Sequence[int] = (1, 5, 10), condition_label: str = "") -> RetrievalReport:
    """Recall@k over queries, each with exactly one target image."""
    if len(targets) != len(rankings):
        raise ValueError(f"{len(targets)} targets for {len(rankings)} rankings")
    if not targets:
        raise ValueError("no queries")
    n_images = len(rankings[0])
    for k in ks:
        if not 1 <= k <= n_images:
            raise ValueError(f"k={k} is outside [1, {n_images}]")
    hits_at: dict[int, np.ndarray] = {}
    positions = np.array([int(np.flatnonzero(np.asarray(r) == t)[0])
                          for t, r in zip(targets, rankings)])
    for k in ks:
        hits_at[k] = (positions < k).astype(np.uint8)
    recalls = {k: float(hits_at[k].mean()) for k in ks}
    return RetrievalReport(hits_at=hits_at, recalls=recalls,
                           n_queries=len(targets), condition_label=condition_label)


def _phi(x: float) -> float:
    """Standard normal CDF via the C library erf (well under 1e-10 error)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def z_test(x1: int, n1: int, x2: int, n2: int) -> ZTestResult:
    """Two-sided pooled two-proportion Z-test.

    ``z = (p1 - p2) / sqrt(pool (1 - pool) (1/n1 + 1/n2))`` with the
    pooled proportion ``(x1 + x2) / (n1 + n2)``; the p-value is
    ``2 (1 - Phi(|z|))``.  Equal proportions give z=0, p=1, including the
    degenerate all-success / all-failure pools.
    """
    for x, n in ((x1, n1), (x2, n2)):
        if n <= 0:
            raise ValueError(f"trial count must be positive, got {n}")
        if not 0 <= x <= n:
            raise ValueError(f"success count {x} outside [0, {n}]")
    p1, p2 = x1 / n1, x2 / n2
    pool = (x1 + x2) / (n1 + n2)
    if pool in (0.0, 1.0):
        if p1 == p2:
            return ZTestResult(z=0.0, p_value=1.0, p1=p1, p2=p2, n1=n1, n2=n2)
        raise ValueError("degenerate pooled proportion")
    z = (p1 - p2) / math.sqrt(pool * (1.0 - pool) * (1.0 / n1 + 1.0 / n2))
    p_value = 2.0 * (1.0 - _phi(abs(z)))
    return ZTestResult(z=z, p_value=p_value, p1=p1, p2=p2, n1=n1, n2=n2)


# ---------------------------------------------------------------------------
# encoding a split


def embed_split(params: EncoderParams, config: EncoderConfig, ds: "PairedDataset",
                split: str, boundary_source: str = "TRUE", batch_size: int = 32,
                ) -> tuple[np.ndarray, np.ndarray, list[int], list[int]]:
    """Embed every caption and the image pool of one split.

    Returns (utterance embeddings, image-pool embeddings, target pool
    positions per query, pool image indices).  Queries follow the split's
    pair order; the pool is the split's distinct images in index order.
    """
    if split not in ds.splits or not ds.splits[split]:
        raise ValueError(f"split {split!r} is empty or missing")
    pair_idx = list(ds.splits[split])
    pool = sorted({ds.pairs[k][1] for k in pair_idx})
    pool_pos = {img: i for i, img in enumerate(pool)}

    rows = []
    for lo in range(0, len(pair_idx), batch_size):
        chunk = pair_idx[lo:lo + batch_size]
        utts = [ds.utterances[ds.pairs[k][0]] for k in chunk]
        batch = SequenceBatch.from_frames(
            [u.frames.data for u in utts],
            [tiers_for_source(u, boundary_source) for u in utts])
        rows.append(encode_utterance(config, params, batch).data)
    utt_embs = np.concatenate(rows, axis=0)

    img_embs = encode_image(Tensor(ds.images[pool]), params.image).data
    targets = [pool_pos[ds.pairs[k][1]] for k in pair_idx]
    return utt_embs, img_embs, targets, pool


def evaluate_retrieval(params: EncoderParams, config: EncoderConfig, ds: "PairedDataset",
                       split: str, boundary_source: str = "TRUE",
                       ks: Sequence[int] = (1, 5, 10), condition_label: str = "",
                       batch_size: int = 32) -> RetrievalReport:
    """Run retrieval over a split and report recalls."""
    utt_embs, img_embs, targets, _ = embed_split(params, config, ds, split,
                                                 boundary_source, batch_size)
    ks = tuple(k for k in ks if k <= img_embs.shape[0])
    if not ks:
        raise ValueError("no feasible k for this pool size")
    distances = 1.0 - utt_embs @ img_embs.T
    rankings = [np.argsort(distances[q], kind="stable") for q in range(distances.shape[0])]
    return recall_at_k(targets, rankings, ks=ks, condition_label=condition_label)


# ---------------------------------------------------------------------------
# embedding export


def export_embeddings(params: EncoderParams, config: EncoderConfig, ds: "PairedDataset",
                      path, boundary_source: str = "TRUE", batch_size: int = 32) -> None:
    """Write all caption and image embeddings as text.

    One line per item: ``<kind> <id> <e floats>`` with 17 significant
    digits, enough for an exact float64 round-trip.  Captions use their
    utterance ids; images are named ``image_<index>``.
    """
    all_pairs = list(range(len(ds.pairs)))
    rows = []
    for lo in range(0, len(all_pairs), batch_size):
        chunk = all_pairs[lo:lo + batch_size]
        utts = [ds.utterances[ds.pairs[k][0]] for k in chunk]
        batch = SequenceBatch.from_frames(
            [u.frames.data for u in utts],
            [tiers_for_source(u, boundary_source) for u in utts])
        emb = encode_utterance(config, params, batch).data
        rows.extend((utts[i].id, emb[i]) for i in range(len(chunk)))
    img_embs = encode_image(Tensor(ds.images), params.image).data

    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, vec in rows:
            fh.write("utt " + utt_id + " " + " ".join(f"{v:.17g}" for v in vec) + "\n")
        for i in range(img_embs.shape[0]):
            fh.write(f"img image_{i} " + " ".join(f"{v:.17g}" for v in img_embs[i]) + "\n")


def load_embeddings(path) -> dict[str, tuple[list[str], np.ndarray]]:
    """Read an embedding export back as {kind: (ids, matrix)}."""
    ids: dict[str, list[str]] = {}
    vecs: dict[str, list[list[float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            kind, item_id, values = parts[0], parts[1], [float(v) for v in parts[2:]]
            ids.setdefault(kind, []).append(item_id)
            vecs.setdefault(kind, []).append(values)
    return {kind: (ids[kind], np.array(vecs[kind])) for kind in ids}
