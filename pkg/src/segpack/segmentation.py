"""Boundary tiers: alignment parsing, syllabification, and frame-level bits.

A boundary tier is a binary vector over the frames of an utterance whose
set bits mark segment-final frames at one linguistic level (phone,
syllable, or word).  The final frame always closes a segment, so the last
bit is 1 in every valid tier; popcount equals segment count.

Syllables are rebuilt from the phone stream with the maximum-onset
principle.  ``word`` mode syllabifies each word on its own, so every
word-final phone stays syllable-final.  ``connected`` mode syllabifies the
whole utterance as one stream, which is what resyllabified connected
speech looks like: a word-final consonant cluster that can legally start a
syllable migrates onto a following vowel, and a word boundary survives
only where no legal onset can cross it (V#V, or C#C with an illegal
cluster).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inventory import Inventory
from .tensor import Tensor

LEVELS = ("phone", "syllable_connected", "syllable_word", "word")

# Strictly-above relation between levels: which tiers stay meaningful (and
# projectable) after collapsing the sequence at a given level.
NESTED_ABOVE: dict[str, tuple[str, ...]] = {
    "phone": ("syllable_connected", "syllable_word", "word"),
    "syllable_connected": (),
    "syllable_word": ("word",),
    "word": (),
}


class AlignmentError(ValueError):
    """Malformed or inconsistent alignment input."""


class SyllabificationError(ValueError):
    """Phone stream cannot be syllabified."""


class BoundaryError(ValueError):
    """Invalid boundary-tier construction or transformation."""


@dataclass(frozen=True)
class AlignedToken:
    """One aligned interval: a word or a phone with millisecond bounds."""

    label: str
    start_ms: int
    end_ms: int
    kind: str  # "word" | "phone"

    def __post_init__(self):
        if self.kind not in ("word", "phone"):
            raise AlignmentError(f"unknown token kind {self.kind!r}")
        if self.start_ms < 0 or self.end_ms <= self.start_ms:
            raise AlignmentError(
                f"bad interval for {self.kind} {self.label!r}: [{self.start_ms}, {self.end_ms})")


@dataclass(frozen=True)
class ParsedAlignment:
    utterance_id: str
    tokens: tuple[AlignedToken, ...]
    frame_count: int
    frame_hop_ms: int

    def words(self) -> list[AlignedToken]:
        return [t for t in self.tokens if t.kind == "word"]

    def phones(self) -> list[AlignedToken]:
        return [t for t in self.tokens if t.kind == "phone"]


@dataclass(frozen=True)
class PhonemeString:
    """An utterance as a flat phone list with word-final markers.

    ``word_breaks`` are indices of word-final phones (strictly increasing,
    always ending at the last phone).  ``consonant_set`` is optional; when
    present, a phone in neither class is rejected as unknown.
    """

    phones: tuple[str, ...]
    word_breaks: tuple[int, ...]
    vowel_set: frozenset[str]
    onset_inventory: frozenset[str]
    consonant_set: frozenset[str] | None = None

    def __post_init__(self):
        if not self.phones:
            raise SyllabificationError("empty phone sequence")
        wb = self.word_breaks
        if not wb or list(wb) != sorted(set(wb)) or wb[-1] != len(self.phones) - 1:
            raise SyllabificationError(
                "word_breaks must be strictly increasing and end at the last phone")
        if wb[0] < 0:
            raise SyllabificationError("negative word break index")

    @classmethod
    def from_words(cls, words: Sequence[Sequence[str]], inventory: Inventory) -> "PhonemeString":
        phones: list[str] = []
        breaks: list[int] = []
        for w in words:
            phones.extend(w)
            breaks.append(len(phones) - 1)
        return cls(phones=tuple(phones), word_breaks=tuple(breaks),
                   vowel_set=inventory.vowels, onset_inventory=inventory.onsets,
                   consonant_set=inventory.consonants)

    def word_spans(self) -> list[tuple[int, int]]:
        spans = []
        start = 0
        for b in self.word_breaks:
            spans.append((start, b))
            start = b + 1
        return spans


@dataclass(frozen=True)
class BoundaryVector:
    """Binary per-frame tier; set bits mark segment-final frames."""

    bits: np.ndarray
    level: str

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise BoundaryError("bits must be a non-empty 1-D array")
        if not np.all((bits == 0) | (bits == 1)):
            raise BoundaryError("bits must be binary")
        if bits[-1] != 1:
            raise BoundaryError("final frame must close a segment (last bit 0)")
        if self.level not in LEVELS:
            raise BoundaryError(f"unknown tier level {self.level!r}")
        object.__setattr__(self, "bits", bits)

    @property
    def frame_count(self) -> int:
        return int(self.bits.size)

    @property
    def segment_count(self) -> int:
        return int(self.bits.sum())

    def positions(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


@dataclass
class Utterance:
    """Frame matrix plus one boundary tier per available level.

    ``random_tiers``, when present, holds shuffled counterparts of the true
    tiers for control experiments; the true tiers are never mutated.
    """

    frames: Tensor
    tiers: dict[str, BoundaryVector]
    id: str
    tokens: tuple[AlignedToken, ...] | None = None
    random_tiers: dict[str, BoundaryVector] | None = None

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])


def validate_utterance(utt: Utterance) -> None:
    """Check tier lengths and the nesting of segment levels."""
    T = utt.frame_count
    for level, tier in utt.tiers.items():
        if tier.level != level:
            raise BoundaryError(f"tier stored under {level!r} has level {tier.level!r}")
        if tier.frame_count != T:
            raise BoundaryError(
                f"tier {level!r} has {tier.frame_count} frames, utterance has {T}")
    for lower, uppers in NESTED_ABOVE.items():
        if lower not in utt.tiers:
            continue
        low = set(utt.tiers[lower].positions().tolist())
        for upper in uppers:
            if upper not in utt.tiers:
                continue
            up = set(utt.tiers[upper].positions().tolist())
            if not up.issubset(low):
                bad = min(up - low)
                raise BoundaryError(
                    f"{upper!r} boundary at frame {bad} is not a {lower!r} boundary")


def tiers_for_source(utt: Utterance, source: str) -> dict[str, BoundaryVector]:
    """Pick the TRUE or RANDOM tier set of an utterance."""
    if source == "TRUE":
        return utt.tiers
    if source == "RANDOM":
        if utt.random_tiers is None:
            raise ValueError(f"utterance {utt.id!r} has no random tiers attached")
        return utt.random_tiers
    raise ValueError(f"unknown boundary source {source!r}")


# ---------------------------------------------------------------------------
# alignment parsing


def parse_alignment(text: str, frame_hop_ms: int | None = None) -> ParsedAlignment:
    """Parse one utterance's alignment file.

    Format: a header line ``id <string> frames <T> hop_ms <int>`` followed
    by one token per line, ``<kind> <label> <start_ms> <end_ms>``; ``#``
    starts a comment.  Tokens of one kind must be sorted and disjoint, and
    every phone must lie inside exactly one word.
    """
    header: tuple[str, int, int] | None = None
    tokens: list[AlignedToken] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 6 or parts[0] != "id" or parts[2] != "frames" or parts[4] != "hop_ms":
                raise AlignmentError(f"line {lineno}: malformed header: {raw.strip()!r}")
            try:
                header = (parts[1], int(parts[3]), int(parts[5]))
            except ValueError as exc:
                raise AlignmentError(f"line {lineno}: malformed header: {raw.strip()!r}") from exc
            continue
        if len(parts) != 4:
            raise AlignmentError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        kind, label, start_s, end_s = parts
        try:
            start, end = int(start_s), int(end_s)
        except ValueError as exc:
            raise AlignmentError(f"line {lineno}: non-integer interval bounds") from exc
        try:
            tokens.append(AlignedToken(label=label, start_ms=start, end_ms=end, kind=kind))
        except AlignmentError as exc:
            raise AlignmentError(f"line {lineno}: {exc}") from exc

    if header is None or not tokens:
        raise AlignmentError("no tokens")
    utt_id, header_frames, header_hop = header
    if header_hop <= 0:
        raise AlignmentError(f"hop_ms must be positive, got {header_hop}")
    if frame_hop_ms is not None and frame_hop_ms != header_hop:
        raise AlignmentError(
            f"requested hop {frame_hop_ms} ms conflicts with header hop {header_hop} ms")
    hop = header_hop

    for kind in ("word", "phone"):
        group = [t for t in tokens if t.kind == kind]
        for a, b in zip(group, group[1:]):
            if b.start_ms < a.start_ms:
                raise AlignmentError(f"{kind} tokens are not sorted: {b.label!r} after {a.label!r}")
            if b.start_ms < a.end_ms:
                raise AlignmentError(f"overlapping {kind} tokens: {a.label!r} and {b.label!r}")

    words = [t for t in tokens if t.kind == "word"]
    for p in (t for t in tokens if t.kind == "phone"):
        containers = [w for w in words if w.start_ms <= p.start_ms and p.end_ms <= w.end_ms]
        if len(containers) != 1:
            raise AlignmentError(
                f"phone {p.label!r} [{p.start_ms}, {p.end_ms}) does not lie inside exactly one word")

    max_end = max(t.end_ms for t in tokens)
    frame_count = -(-max_end // hop)
    if header_frames != frame_count:
        raise AlignmentError(
            f"frame count mismatch: header says {header_frames}, tokens imply {frame_count}")
    return ParsedAlignment(utterance_id=utt_id, tokens=tuple(tokens),
                           frame_count=frame_count, frame_hop_ms=hop)


# ---------------------------------------------------------------------------
# syllabification


def _check_phones(p: PhonemeString) -> None:
    if p.consonant_set is None:
        return
    for ph in p.phones:
        if ph not in p.vowel_set and ph not in p.consonant_set:
            raise SyllabificationError(f"unknown phone symbol {ph!r}")


def _max_onset_ends(phones: Sequence[str], start: int, stop: int,
                    vowels: frozenset[str], onsets: frozenset[str]) -> list[int]:
    """Syllable-final indices for phones[start..stop] under maximum onset."""
    nuclei = [i for i in range(start, stop + 1) if phones[i] in vowels]
    ends: list[int] = []
    for left, right in zip(nuclei, nuclei[1:]):
        cluster = list(range(left + 1, right))
        take = 0
        for j in range(len(cluster), -1, -1):
            if j == 0 or " ".join(phones[i] for i in cluster[len(cluster) - j:]) in onsets:
                take = j
                break
        ends.append(right - take - 1)
    ends.append(stop)
    return ends


def syllabify(p: PhonemeString, mode: str) -> list[int]:
    """Return syllable-final phone indices for the whole utterance.

    ``word`` mode keeps word boundaries intact (each word is syllabified
    alone); ``connected`` mode syllabifies the stream across word breaks,
    modelling resyllabification.  Each syllable has exactly one vowel
    nucleus, so both modes yield the same number of syllables.
    """
    if mode not in ("word", "connected"):
        raise ValueError(f"unknown syllabification mode {mode!r}")
    _check_phones(p)
    for start, stop in p.word_spans():
        if not any(p.phones[i] in p.vowel_set for i in range(start, stop + 1)):
            word = "".join(p.phones[start:stop + 1])
            raise SyllabificationError(f"vowel-less word {word!r}")
    if mode == "word":
        ends: list[int] = []
        for start, stop in p.word_spans():
            ends.extend(_max_onset_ends(p.phones, start, stop, p.vowel_set, p.onset_inventory))
        return ends
    return _max_onset_ends(p.phones, 0, len(p.phones) - 1, p.vowel_set, p.onset_inventory)


# ---------------------------------------------------------------------------
# frame-level tiers


def boundaries_to_frames(end_times_ms: Sequence[int], frame_hop_ms: int,
                         total_frames: int, level: str) -> BoundaryVector:
    """Mark the last frame overlapping each segment.

    Frame ``t`` covers ``[t*hop, (t+1)*hop)`` ms, so a segment ending at
    ``e`` closes at frame ``ceil(e/hop) - 1``.  The final frame is always
    marked.  Two segments falling on one frame mean a segment shorter than
    the hop, which is rejected.
    """
    if total_frames < 1:
        raise BoundaryError(f"total_frames must be >= 1, got {total_frames}")
    if frame_hop_ms < 1:
        raise BoundaryError(f"frame_hop_ms must be >= 1, got {frame_hop_ms}")
    ends = [int(e) for e in end_times_ms]
    if not ends:
        raise BoundaryError("no segment end times")
    if sorted(set(ends)) != ends:
        raise BoundaryError("segment end times must be strictly increasing")
    if ends[0] <= 0:
        raise BoundaryError(f"segment end time must be positive, got {ends[0]}")
    if ends[-1] > total_frames * frame_hop_ms:
        raise BoundaryError(
            f"segment end {ends[-1]} ms exceeds {total_frames} frames at hop {frame_hop_ms} ms")
    frames = [-(-e // frame_hop_ms) - 1 for e in ends]
    if len(set(frames)) != len(frames):
        raise BoundaryError("segment shorter than frame hop")
    bits = np.zeros(total_frames, dtype=np.uint8)
    bits[frames] = 1
    bits[total_frames - 1] = 1
    return BoundaryVector(bits=bits, level=level)


def token_tier(alignment: ParsedAlignment, kind: str, level: str) -> BoundaryVector:
    """Tier built from word or phone token end times."""
    ends = [t.end_ms for t in alignment.tokens if t.kind == kind]
    if not ends:
        raise BoundaryError(f"alignment has no {kind} tokens")
    return boundaries_to_frames(ends, alignment.frame_hop_ms, alignment.frame_count, level)


def shuffle_boundaries(b: BoundaryVector, seed: int) -> BoundaryVector:
    """Re-place interior boundaries uniformly at random, keeping popcount.

    The final frame stays a boundary, so the shuffled tier has the same
    number of segments as the input.  Deterministic per seed.
    """
    k = b.segment_count
    if k < 1:
        raise BoundaryError("tier has no boundaries to shuffle")
    T = b.frame_count
    bits = np.zeros(T, dtype=np.uint8)
    bits[T - 1] = 1
    if k > 1 and T > 1:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(T - 1, size=k - 1, replace=False)
        bits[chosen] = 1
    return BoundaryVector(bits=bits, level=b.level)


def project_boundaries(lower: BoundaryVector, higher: BoundaryVector) -> BoundaryVector:
    """Re-express a higher tier on the sequence of lower-tier segment ends.

    Position ``i`` of the output corresponds to the ``i``-th set bit of
    ``lower``; it is set iff that frame is also a boundary in ``higher``.
    Every higher boundary must coincide with a lower one.
    """
    if lower.frame_count != higher.frame_count:
        raise BoundaryError(
            f"tier lengths differ: {lower.frame_count} vs {higher.frame_count}")
    low_pos = lower.positions()
    low_set = set(low_pos.tolist())
    for f in higher.positions().tolist():
        if f not in low_set:
            raise BoundaryError(
                f"{higher.level!r} boundary at frame {f} is not a {lower.level!r} boundary")
    return BoundaryVector(bits=higher.bits[low_pos].astype(np.uint8), level=higher.level)


def compression_rate(b: BoundaryVector) -> float:
    """Percentage of frames a KEEP layer discards for this tier."""
    return 100.0 * (1.0 - b.segment_count / b.frame_count)
