from __future__ import annotations

import numpy as np
import pytest

from segpack.inventory import Inventory
from segpack.segmentation import PhonemeString, SyllabificationError, syllabify
from segpack.synthcorpus import default_vocab

# "this is an article"
ARTICLE_WORDS = [
    ["ð", "ɪ", "s"],
    ["ɪ", "z"],
    ["ə", "n"],
    ["ɑr", "t", "ɪ", "k", "ə", "l"],
]


def _dotted(phones, ends):
    syllables, start = [], 0
    for e in ends:
        syllables.append("".join(phones[start:e + 1]))
        start = e + 1
    return ".".join(syllables)


def _article():
    return PhonemeString.from_words(ARTICLE_WORDS, Inventory.default())


def test_golden_word_mode():
    p = _article()
    ends = syllabify(p, "word")
    assert _dotted(p.phones, ends) == "ðɪs.ɪz.ən.ɑr.tɪ.kəl"


def test_golden_connected_mode():
    p = _article()
    ends = syllabify(p, "connected")
    assert _dotted(p.phones, ends) == "ðɪ.sɪ.zə.nɑr.tɪ.kəl"


def test_single_monosyllabic_word_identical_in_both_modes():
    p = PhonemeString.from_words([["d", "o", "g"]], Inventory.default())
    assert syllabify(p, "word") == [2]
    assert syllabify(p, "connected") == [2]


def test_word_mode_keeps_every_word_break():
    p = _article()
    ends = set(syllabify(p, "word"))
    assert set(p.word_breaks).issubset(ends)


def test_syllable_count_is_mode_independent():
    rng = np.random.default_rng(31)
    vocab = default_vocab()
    inv = Inventory.default()
    for _ in range(100):
        words = [vocab[int(i)].phones for i in rng.integers(len(vocab), size=int(rng.integers(1, 7)))]
        p = PhonemeString.from_words(words, inv)
        assert len(syllabify(p, "word")) == len(syllabify(p, "connected"))


def test_vowelless_word_rejected_with_its_phones():
    p = PhonemeString.from_words([["s", "t", "r"]], Inventory.default())
    with pytest.raises(SyllabificationError, match="str"):
        syllabify(p, "word")


def test_unknown_phone_rejected():
    p = PhonemeString.from_words([["d", "?", "g"]], Inventory.default())
    with pytest.raises(SyllabificationError, match="unknown phone"):
        syllabify(p, "word")


def test_unknown_mode_rejected():
    with pytest.raises(ValueError, match="mode"):
        syllabify(_article(), "fast")


def test_resyllabification_moves_final_consonant_onto_vowel():
    # "big apple": word mode keeps g with "big"; connected moves it to "a"
    inv = Inventory.default()
    p = PhonemeString.from_words([["b", "i", "g"], ["a", "p", "e", "l"]], inv)
    assert _dotted(p.phones, syllabify(p, "word")) == "big.a.pel"
    assert _dotted(p.phones, syllabify(p, "connected")) == "bi.ga.pel"


def test_connected_keeps_break_for_illegal_cluster():
    # "dog gate"-like junction g#g: "g g" is no onset, so the break survives
    inv = Inventory.default()
    p = PhonemeString.from_words([["d", "o", "g"], ["g", "e", "t"]], inv)
    assert _dotted(p.phones, syllabify(p, "connected")) == "dog.get"


def test_connected_migrates_legal_cluster_across_break():
    # V s # t V: "s t" is a legal onset, so both consonants start the syllable
    inv = Inventory.default()
    p = PhonemeString.from_words([["b", "u", "s"], ["t", "o"]], inv)
    assert _dotted(p.phones, syllabify(p, "connected")) == "bu.sto"


def test_vowel_vowel_junction_break_survives():
    inv = Inventory.default()
    p = PhonemeString.from_words([["p", "i"], ["a", "n"]], inv)
    assert _dotted(p.phones, syllabify(p, "connected")) == "pi.an"


def test_default_vocab_annotations_match_syllabifier():
    inv = Inventory.default()
    for word in default_vocab():
        p = PhonemeString.from_words([word.phones], inv)
        ends = syllabify(p, "word")
        sizes = []
        start = 0
        for e in ends:
            sizes.append(e - start + 1)
            start = e + 1
        assert tuple(sizes) == word.syllables, word.label


def test_phoneme_string_invariants():
    with pytest.raises(SyllabificationError):
        PhonemeString(phones=("a", "b"), word_breaks=(0,), vowel_set=frozenset("a"),
                      onset_inventory=frozenset("b"))
    with pytest.raises(SyllabificationError):
        PhonemeString(phones=(), word_breaks=(), vowel_set=frozenset(),
                      onset_inventory=frozenset())
