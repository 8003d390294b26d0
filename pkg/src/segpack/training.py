"""Contrastive retrieval training: loss, batching, and the optimization loop.

The loss is a margin hinge over cosine distances within a batch: every
mismatched utterance/image pair must be at least ``alpha`` farther apart
than the matched pair, in both directions.  Because embeddings are
unit-norm, cosine distance is ``1 - dot``.

Training runs Adam over epochs of shuffled batches and keeps the
parameter snapshot with the best validation R@1 (earliest epoch wins
ties).  In the RANDOM boundary condition each utterance gets one shuffled
copy of its tiers for the whole run; the true tiers stay untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation
from .encoder import EncoderConfig, EncoderParams, SequenceBatch, encode_image, encode_utterance, validate_config
from .optim import adam_init, adam_update
from .segmentation import Utterance, shuffle_boundaries, tiers_for_source
from .tensor import ShapeError, Tensor, accumulate, from_op, matmul, transpose, zero_grads

BOUNDARY_SOURCES = ("TRUE", "RANDOM")


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or inconsistent inputs)."""


@dataclass
class TrainConfig:
    margin_alpha: float = 0.2
    lr: float = 2e-4
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.margin_alpha <= 0:
            raise ValueError(f"margin_alpha must be positive, got {self.margin_alpha}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (the loss needs negatives), got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class PairedDataset:
    """Paired captions and image feature vectors with split assignments.

    ``pairs[k] = (utterance_index, image_index)``; several pairs may share
    one image.  ``splits`` maps split names to pair indices.
    """

    utterances: list[Utterance]
    images: np.ndarray
    pairs: list[tuple[int, int]]
    splits: dict[str, list[int]]

    def __post_init__(self):
        n_utt, n_img = len(self.utterances), self.images.shape[0]
        for u, i in self.pairs:
            if not (0 <= u < n_utt and 0 <= i < n_img):
                raise ValueError(f"pair ({u}, {i}) references missing items")
        seen: set[int] = set()
        for name, idx in self.splits.items():
            for k in idx:
                if not 0 <= k < len(self.pairs):
                    raise ValueError(f"split {name!r} references missing pair {k}")
                if k in seen:
                    raise ValueError(f"pair {k} appears in more than one split")
                seen.add(k)


def _seed_from(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def attach_random_tiers(ds: PairedDataset, seed: int) -> PairedDataset:
    """Copy of the dataset whose utterances carry shuffled boundary tiers.

    One draw per utterance per level, fixed for the whole run; tier
    popcounts are preserved and the true tiers are left alone.
    """
    new_utts = []
    for k, utt in enumerate(ds.utterances):
        shuffled = {
            level: shuffle_boundaries(tier, _seed_from(seed, k, li))
            for li, (level, tier) in enumerate(sorted(utt.tiers.items()))
        }
        new_utts.append(replace(utt, random_tiers=shuffled))
    return PairedDataset(utterances=new_utts, images=ds.images,
                         pairs=list(ds.pairs), splits=dict(ds.splits))


# ---------------------------------------------------------------------------
# loss


def _margin_hinge(scores: Tensor, alpha: float) -> Tensor:
    """Sum of hinge terms over a matched-on-the-diagonal similarity matrix."""
    s = scores.data
    B = s.shape[0]
    diag = np.diag(s)
    off = 1.0 - np.eye(B)
    t_utt = (alpha - diag[:, None] + s.T) * off   # wrong-utterance negatives
    t_img = (alpha - diag[:, None] + s) * off     # wrong-image negatives
    loss = np.maximum(t_utt, 0.0).sum() + np.maximum(t_img, 0.0).sum()

    def backward(g, table):
        gs = float(g.reshape(-1)[0])
        m_utt = ((t_utt > 0.0) * off)
        m_img = ((t_img > 0.0) * off)
        ds = gs * (m_img + m_utt.T)
        np.fill_diagonal(ds, ds.diagonal() - gs * (m_utt.sum(axis=1) + m_img.sum(axis=1)))
        accumulate(table, scores, ds)

    return from_op(np.asarray(loss).reshape(()), (scores,), backward)


def contrastive_loss(U: Tensor, I: Tensor, alpha: float) -> Tensor:
    """Batch hinge loss of matched pairs against in-batch negatives.

    Row ``k`` of ``U`` pairs with row ``k`` of ``I``; both must be
    unit-norm (checked to 1e-6).  Self-pairs are excluded from the
    negative sums, so a perfectly separated batch reaches exactly 0.
    """
    if U.data.ndim != 2 or U.shape != I.shape:
        raise ShapeError(f"contrastive_loss expects matching 2-D batches, got {U.shape} and {I.shape}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    for name, t in (("utterance", U), ("image", I)):
        norms = np.sqrt((t.data * t.data).sum(axis=1))
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"{name} embeddings must be unit-norm")
    return _margin_hinge(matmul(U, transpose(I)), alpha)


# ---------------------------------------------------------------------------
# batching


def make_batches(ds: PairedDataset, split: str, batch_size: int, seed: int,
                 boundary_source: str = "TRUE") -> list[tuple[SequenceBatch, Tensor]]:
    """Shuffled, padded training batches for one split.

    Returns (sequence batch, image features) pairs.  A trailing batch
    smaller than 2 is dropped: the loss has no negatives there.
    """
    if split not in ds.splits or not ds.splits[split]:
        raise ValueError(f"split {split!r} is empty or missing")
    if boundary_source not in BOUNDARY_SOURCES:
        raise ValueError(f"unknown boundary source {boundary_source!r}")
    idx = np.array(ds.splits[split], dtype=np.int64)
    rng = np.random.default_rng(seed)
    idx = idx[rng.permutation(idx.size)]
    batches = []
    for lo in range(0, idx.size, batch_size):
        chunk = idx[lo:lo + batch_size]
        if chunk.size < 2:
            continue
        utts = [ds.utterances[ds.pairs[k][0]] for k in chunk]
        frames = [u.frames.data for u in utts]
        tiers = [tiers_for_source(u, boundary_source) for u in utts]
        images = Tensor(np.stack([ds.images[ds.pairs[k][1]] for k in chunk]))
        batches.append((SequenceBatch.from_frames(frames, tiers), images))
    return batches


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_r1: float | None


@dataclass
class TrainResult:
    params: EncoderParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_r1: float = 0.0


def train(params: EncoderParams, config: EncoderConfig, ds: PairedDataset,
          tc: TrainConfig, boundary_source: str = "TRUE") -> TrainResult:
    """Optimize the encoders; return the best-validation snapshot + history."""
    validate_config(config)
    if boundary_source not in BOUNDARY_SOURCES:
        raise ValueError(f"unknown boundary source {boundary_source!r}")
    run_ds = attach_random_tiers(ds, tc.seed) if boundary_source == "RANDOM" else ds

    plist = params.param_list()
    state = adam_init(plist, lr=tc.lr)
    history: list[EpochRecord] = []
    best_params = params.copy()
    best_r1 = -1.0
    best_epoch = 0

    for epoch in range(1, tc.epochs + 1):
        batches = make_batches(run_ds, "train", tc.batch_size,
                               seed=_seed_from(tc.seed, 1000 + epoch), boundary_source=boundary_source)
        total = 0.0
        count = 0
        for bi, (batch, images) in enumerate(batches):
            zero_grads(plist)
            utt_emb = encode_utterance(config, params, batch)
            img_emb = encode_image(images, params.image)
            loss = contrastive_loss(utt_emb, img_emb, tc.margin_alpha)
            lval = loss.item()
            if not np.isfinite(lval):
                raise TrainingError(f"non-finite loss {lval!r} at epoch {epoch}, batch {bi}")
            loss.backward()
            adam_update(state, plist)
            total += lval
            count += batch.batch_size
        train_loss = total / count if count else 0.0

        val_r1: float | None = None
        if epoch % tc.eval_every == 0 or epoch == tc.epochs:
            report = evaluation.evaluate_retrieval(params, config, run_ds, "val",
                                                   boundary_source=boundary_source, ks=(1,))
            val_r1 = report.recalls[1]
            if val_r1 > best_r1:
                best_r1 = val_r1
                best_epoch = epoch
                best_params = params.copy()
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_r1=val_r1))

    return TrainResult(params=best_params, history=history,
                       best_epoch=best_epoch, best_val_r1=best_r1)
