"""Deterministic desk-scale paired corpus with ground-truth boundary tiers.

Images are bags of objects: each image vector is the normalized sum of the
prototype vectors of its objects plus a little noise.  Captions name the
image's objects (in random order) padded with filler words; each phone
emits a few frames around a per-phone prototype with Gaussian noise.
Word and phone tiers follow directly from the construction; both syllable
tiers are rebuilt with the segmentation module's syllabifier, so the
corpus exercises exactly the code paths a real aligned corpus would.

Everything is drawn from one seeded generator in a fixed order, so a spec
regenerates bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .inventory import Inventory
from .segmentation import (AlignedToken, BoundaryVector, PhonemeString, Utterance,
                           boundaries_to_frames, parse_alignment, syllabify)
from .tensor import Tensor
from .training import PairedDataset


@dataclass(frozen=True)
class VocabWord:
    """A vocabulary entry: label, phone sequence, and its syllable sizes."""

    label: str
    phones: tuple[str, ...]
    syllables: tuple[int, ...]
    is_object: bool = False

    def __post_init__(self):
        if not self.phones:
            raise ValueError(f"word {self.label!r} has no phones")
        if sum(self.syllables) != len(self.phones):
            raise ValueError(f"word {self.label!r}: syllable sizes do not cover the phones")


def default_vocab() -> list[VocabWord]:
    """20 object words and 10 fillers, mixing syllable counts and final
    consonants so that connected-speech resyllabification actually fires."""
    obj = [
        ("dog", ("d", "o", "g"), (3,)),
        ("cat", ("k", "a", "t"), (3,)),
        ("bus", ("b", "u", "s"), (3,)),
        ("fox", ("f", "o", "k", "s"), (4,)),
        ("bird", ("b", "i", "r", "d"), (4,)),
        ("boat", ("b", "o", "t"), (3,)),
        ("apple", ("a", "p", "e", "l"), (1, 3)),
        ("banana", ("b", "a", "n", "a", "n", "a"), (2, 2, 2)),
        ("camera", ("k", "a", "m", "e", "r", "a"), (2, 2, 2)),
        ("elephant", ("e", "l", "e", "f", "a", "n", "t"), (1, 2, 4)),
        ("umbrella", ("u", "m", "b", "r", "e", "l", "a"), (2, 3, 2)),
        ("robot", ("r", "o", "b", "o", "t"), (2, 3)),
        ("wagon", ("w", "a", "g", "o", "n"), (2, 3)),
        ("melon", ("m", "e", "l", "o", "n"), (2, 3)),
        ("tomato", ("t", "o", "m", "a", "t", "o"), (2, 2, 2)),
        ("tiger", ("t", "i", "g", "e", "r"), (2, 3)),
        ("rabbit", ("r", "a", "b", "i", "t"), (2, 3)),
        ("spider", ("s", "p", "i", "d", "e", "r"), (3, 3)),
        ("piano", ("p", "i", "a", "n", "o"), (2, 1, 2)),
        ("dolphin", ("d", "o", "l", "f", "i", "n"), (3, 3)),
    ]
    fill = [
        ("is", ("i", "z"), (2,)),
        ("an", ("a", "n"), (2,)),
        ("on", ("o", "n"), (2,)),
        ("at", ("a", "t"), (2,)),
        ("up", ("u", "p"), (2,)),
        ("and", ("a", "n", "d"), (3,)),
        ("near", ("n", "i", "r"), (3,)),
        ("big", ("b", "i", "g"), (3,)),
        ("red", ("r", "e", "d"), (3,)),
        ("old", ("o", "l", "d"), (3,)),
    ]
    words = [VocabWord(label, phones, syl, is_object=True) for label, phones, syl in obj]
    words += [VocabWord(label, phones, syl) for label, phones, syl in fill]
    return words


@dataclass
class SynthSpec:
    """Everything the generator needs; defaults are the desk-scale corpus."""

    vocab: list[VocabWord] = field(default_factory=default_vocab)
    n_pairs: int = 1000
    frame_dim: int = 13
    frames_per_phone: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.3
    caption_len: tuple[int, int] = (3, 6)
    n_images: int = 200
    objects_per_image: tuple[int, int] = (1, 3)
    seed: int = 0
    frame_hop_ms: int = 10
    image_dim: int = 32
    image_noise_sigma: float = 0.01
    inventory: Inventory = field(default_factory=Inventory.default)

    def validate(self) -> None:
        if not self.vocab:
            raise ValueError("vocabulary is empty")
        if self.frames_per_phone[0] < 2 or self.frames_per_phone[0] > self.frames_per_phone[1]:
            raise ValueError("frames_per_phone must be a range with lower bound >= 2")
        if self.noise_sigma < 0 or self.image_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        n_obj = sum(w.is_object for w in self.vocab)
        n_fill = len(self.vocab) - n_obj
        if n_obj < 1:
            raise ValueError("vocabulary has no object words")
        lo, hi = self.objects_per_image
        if not 1 <= lo <= hi <= n_obj:
            raise ValueError(f"objects_per_image {self.objects_per_image} infeasible for {n_obj} objects")
        clo, chi = self.caption_len
        if not 1 <= clo <= chi:
            raise ValueError(f"bad caption_len range {self.caption_len}")
        if clo < hi:
            raise ValueError(
                f"vocabulary too small for caption_len: captions of length {clo} "
                f"cannot name up to {hi} objects")
        if chi > lo and n_fill == 0:
            raise ValueError("vocabulary too small for caption_len: no filler words available")
        if self.n_pairs < 1 or self.n_images < 1:
            raise ValueError("n_pairs and n_images must be positive")
        if self.image_dim < n_obj:
            raise ValueError(
                f"image_dim {self.image_dim} cannot hold {n_obj} orthogonal object prototypes")
        if self.frame_hop_ms < 1 or self.frame_dim < 1:
            raise ValueError("frame_hop_ms and frame_dim must be positive")


def _utterance_from_words(words: list[VocabWord], utt_id: str, rng: np.random.Generator,
                          spec: SynthSpec, phone_protos: dict[str, np.ndarray]) -> Utterance:
    flo, fhi = spec.frames_per_phone
    hop = spec.frame_hop_ms
    frames_rows: list[np.ndarray] = []
    tokens: list[AlignedToken] = []
    phone_tokens: list[AlignedToken] = []
    cursor = 0  # frames so far
    for w in words:
        word_start = cursor
        word_phone_tokens = []
        for ph in w.phones:
            n = int(rng.integers(flo, fhi + 1))
            frames_rows.append(phone_protos[ph] +
                               rng.normal(0.0, spec.noise_sigma, size=(n, spec.frame_dim)))
            word_phone_tokens.append(
                AlignedToken(label=ph, start_ms=cursor * hop, end_ms=(cursor + n) * hop,
                             kind="phone"))
            cursor += n
        tokens.append(AlignedToken(label=w.label, start_ms=word_start * hop,
                                   end_ms=cursor * hop, kind="word"))
        tokens.extend(word_phone_tokens)
        phone_tokens.extend(word_phone_tokens)

    total_frames = cursor
    frames = np.concatenate(frames_rows, axis=0)
    phone_ends = [t.end_ms for t in phone_tokens]
    word_ends = [t.end_ms for t in tokens if t.kind == "word"]

    pstring = PhonemeString.from_words([w.phones for w in words], spec.inventory)
    syl_word_idx = syllabify(pstring, "word")
    syl_conn_idx = syllabify(pstring, "connected")
    tiers = {
        "phone": boundaries_to_frames(phone_ends, hop, total_frames, "phone"),
        "word": boundaries_to_frames(word_ends, hop, total_frames, "word"),
        "syllable_word": boundaries_to_frames(
            [phone_ends[i] for i in syl_word_idx], hop, total_frames, "syllable_word"),
        "syllable_connected": boundaries_to_frames(
            [phone_ends[i] for i in syl_conn_idx], hop, total_frames, "syllable_connected"),
    }
    return Utterance(frames=Tensor(frames), tiers=tiers, id=utt_id, tokens=tuple(tokens))


def generate(spec: SynthSpec) -> PairedDataset:
    """Build the paired corpus described by ``spec`` (deterministic per seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    phones = sorted({ph for w in spec.vocab for ph in w.phones})
    protos = {}
    for ph in phones:
        v = rng.normal(0.0, 1.0, size=spec.frame_dim)
        protos[ph] = v / np.linalg.norm(v)

    object_words = [w for w in spec.vocab if w.is_object]
    filler_words = [w for w in spec.vocab if not w.is_object]
    q, _ = np.linalg.qr(rng.normal(0.0, 1.0, size=(spec.image_dim, spec.image_dim)))
    obj_protos = q[:, :len(object_words)].T  # orthonormal rows

    lo, hi = spec.objects_per_image
    image_objects: list[np.ndarray] = []
    images = np.zeros((spec.n_images, spec.image_dim))
    for i in range(spec.n_images):
        k = int(rng.integers(lo, hi + 1))
        objs = np.sort(rng.choice(len(object_words), size=k, replace=False))
        vec = obj_protos[objs].sum(axis=0)
        vec = vec / np.linalg.norm(vec)
        images[i] = vec + rng.normal(0.0, spec.image_noise_sigma, size=spec.image_dim)
        image_objects.append(objs)

    clo, chi = spec.caption_len
    utterances: list[Utterance] = []
    pairs: list[tuple[int, int]] = []
    for p in range(spec.n_pairs):
        img = int(rng.integers(spec.n_images))
        objs = image_objects[img]
        length = int(rng.integers(clo, chi + 1))
        length = max(length, len(objs))
        words = [object_words[o] for o in objs]
        n_fill = length - len(words)
        if n_fill > 0:
            words += [filler_words[int(j)] for j in rng.integers(len(filler_words), size=n_fill)]
        order = rng.permutation(len(words))
        words = [words[j] for j in order]
        utterances.append(_utterance_from_words(words, f"utt_{p:05d}", rng, spec, protos))
        pairs.append((p, img))

    perm = rng.permutation(spec.n_pairs)
    n_train = int(0.8 * spec.n_pairs)
    n_val = int(0.1 * spec.n_pairs)
    splits = {
        "train": sorted(int(k) for k in perm[:n_train]),
        "val": sorted(int(k) for k in perm[n_train:n_train + n_val]),
        "test": sorted(int(k) for k in perm[n_train + n_val:]),
    }
    return PairedDataset(utterances=utterances, images=images, pairs=pairs, splits=splits)


# ---------------------------------------------------------------------------
# on-disk corpus format


def write_corpus(ds: PairedDataset, outdir, frame_hop_ms: int,
                 inventory: Inventory | None = None) -> None:
    """Serialize a dataset: per-utterance alignment files, one features
    file, image vectors, pair/split table, and a meta file."""
    inventory = inventory or Inventory.default()
    out = Path(outdir)
    (out / "alignments").mkdir(parents=True, exist_ok=True)

    frame_dim = int(ds.utterances[0].frames.shape[1]) if ds.utterances else 0
    meta = {
        "frame_hop_ms": frame_hop_ms,
        "frame_dim": frame_dim,
        "image_dim": int(ds.images.shape[1]),
        "inventory": {
            "vowels": sorted(inventory.vowels),
            "consonants": sorted(inventory.consonants),
            "onsets": sorted(inventory.onsets),
        },
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")

    for utt in ds.utterances:
        if utt.tokens is None:
            raise ValueError(f"utterance {utt.id!r} has no tokens; cannot serialize alignment")
        lines = [f"id {utt.id} frames {utt.frame_count} hop_ms {frame_hop_ms}"]
        words = [t for t in utt.tokens if t.kind == "word"]
        phones = [t for t in utt.tokens if t.kind == "phone"]
        for w in words:
            lines.append(f"word {w.label} {w.start_ms} {w.end_ms}")
            for ph in phones:
                if w.start_ms <= ph.start_ms and ph.end_ms <= w.end_ms:
                    lines.append(f"phone {ph.label} {ph.start_ms} {ph.end_ms}")
        (out / "alignments" / f"{utt.id}.txt").write_text("\n".join(lines) + "\n",
                                                          encoding="utf-8")

    with open(out / "features.txt", "w", encoding="utf-8") as fh:
        for utt in ds.utterances:
            mat = utt.frames.data
            fh.write(f"{utt.id} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    with open(out / "images.txt", "w", encoding="utf-8") as fh:
        for i in range(ds.images.shape[0]):
            fh.write(f"img image_{i} " + " ".join(f"{v:.17g}" for v in ds.images[i]) + "\n")

    split_of = {}
    for name, idx in ds.splits.items():
        for k in idx:
            split_of[k] = name
    with open(out / "pairs.tsv", "w", encoding="utf-8") as fh:
        for k, (u, i) in enumerate(ds.pairs):
            fh.write(f"{ds.utterances[u].id}\timage_{i}\t{split_of.get(k, 'train')}\n")


def load_corpus(path) -> PairedDataset:
    """Load a corpus written by ``write_corpus``; tiers are rebuilt from the
    alignments with the same segmentation routines the generator used."""
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    hop = int(meta["frame_hop_ms"])
    inv = Inventory(vowels=frozenset(meta["inventory"]["vowels"]),
                    consonants=frozenset(meta["inventory"]["consonants"]),
                    onsets=frozenset(meta["inventory"]["onsets"]))

    features: dict[str, np.ndarray] = {}
    with open(root / "features.txt", "r", encoding="utf-8") as fh:
        line = fh.readline()
        while line:
            utt_id, t_str, d_str = line.split()
            T, d = int(t_str), int(d_str)
            rows = [[float(v) for v in fh.readline().split()] for _ in range(T)]
            features[utt_id] = np.array(rows).reshape(T, d)
            line = fh.readline()

    images_rows: list[np.ndarray] = []
    image_index: dict[str, int] = {}
    with open(root / "images.txt", "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            image_index[parts[1]] = len(images_rows)
            images_rows.append(np.array([float(v) for v in parts[2:]]))
    images = np.stack(images_rows)

    utterances: list[Utterance] = []
    pairs: list[tuple[int, int]] = []
    splits: dict[str, list[int]] = {}
    with open(root / "pairs.tsv", "r", encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            utt_id, image_id, split = line.strip().split("\t")
            parsed = parse_alignment(
                (root / "alignments" / f"{utt_id}.txt").read_text(encoding="utf-8"))
            utterances.append(_utterance_from_alignment(parsed, features[utt_id], inv))
            pairs.append((k, image_index[image_id]))
            splits.setdefault(split, []).append(k)
    return PairedDataset(utterances=utterances, images=images, pairs=pairs, splits=splits)


def _utterance_from_alignment(parsed, frames: np.ndarray, inv: Inventory) -> Utterance:
    """Rebuild all four tiers from a parsed alignment."""
    hop, T = parsed.frame_hop_ms, parsed.frame_count
    if frames.shape[0] != T:
        raise ValueError(
            f"utterance {parsed.utterance_id!r}: features have {frames.shape[0]} frames, "
            f"alignment says {T}")
    words = parsed.words()
    phones = parsed.phones()
    word_phones = [[p.label for p in phones if w.start_ms <= p.start_ms and p.end_ms <= w.end_ms]
                   for w in words]
    pstring = PhonemeString.from_words(word_phones, inv)
    phone_ends = [p.end_ms for p in phones]
    tiers = {
        "phone": boundaries_to_frames(phone_ends, hop, T, "phone"),
        "word": boundaries_to_frames([w.end_ms for w in words], hop, T, "word"),
        "syllable_word": boundaries_to_frames(
            [phone_ends[i] for i in syllabify(pstring, "word")], hop, T, "syllable_word"),
        "syllable_connected": boundaries_to_frames(
            [phone_ends[i] for i in syllabify(pstring, "connected")], hop, T,
            "syllable_connected"),
    }
    return Utterance(frames=Tensor(frames), tiers=tiers, id=parsed.utterance_id,
                     tokens=parsed.tokens)
