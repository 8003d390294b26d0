"""Default English-like phone inventory for the syllabifier.

Onset legality is the only phonological knowledge the syllabifier needs:
a consonant cluster may start a syllable iff its space-joined symbol string
is listed here.  The sets cover both the IPA-style symbols used in spoken
transcriptions and the plain ASCII symbols the synthetic corpus uses, so
one default works everywhere.  Custom inventories can be supplied wherever
an ``Inventory`` is accepted (e.g. through corpus config files).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Inventory:
    """Phone classes and legal syllable onsets for one language setup."""

    vowels: frozenset[str]
    consonants: frozenset[str]
    onsets: frozenset[str]

    @staticmethod
    def default() -> "Inventory":
        return Inventory(vowels=DEFAULT_VOWELS, consonants=DEFAULT_CONSONANTS,
                         onsets=DEFAULT_ONSETS)


DEFAULT_VOWELS = frozenset({
    # IPA monophthongs, rhotacized vowels, diphthongs
    "i", "ɪ", "e", "ɛ", "æ", "a", "ɑ", "ɒ", "ɔ", "o", "ʊ", "u", "ʌ", "ə",
    "ɜ", "ɝ", "ɚ", "ɑr", "ɔr", "ər", "ɪr", "ɛr", "ʊr",
    "aɪ", "aʊ", "ɔɪ", "eɪ", "oʊ", "iː", "uː",
})

DEFAULT_CONSONANTS = frozenset({
    "p", "b", "t", "d", "k", "g", "m", "n", "ŋ", "f", "v", "θ", "ð",
    "s", "z", "ʃ", "ʒ", "h", "tʃ", "dʒ", "l", "r", "ɹ", "w", "j",
})

# Single-consonant onsets: everything but the velar nasal.
_SINGLES = DEFAULT_CONSONANTS - {"ŋ"}

_CLUSTERS = {
    "p r", "b r", "t r", "d r", "k r", "g r", "f r", "θ r", "ʃ r",
    "p ɹ", "b ɹ", "t ɹ", "d ɹ", "k ɹ", "g ɹ", "f ɹ", "θ ɹ", "ʃ ɹ",
    "p l", "b l", "k l", "g l", "f l", "s l",
    "t w", "k w", "d w", "s w", "θ w", "g w", "h w",
    "s p", "s t", "s k", "s m", "s n", "s f",
    "s p r", "s p l", "s t r", "s k r", "s k w", "s k l",
    "s p ɹ", "s t ɹ", "s k ɹ",
    "p j", "b j", "k j", "g j", "f j", "v j", "m j", "n j", "h j",
}

DEFAULT_ONSETS = frozenset(_SINGLES | _CLUSTERS)
