from __future__ import annotations

import numpy as np
import pytest

from segpack.segmentation import (AlignmentError, BoundaryError, BoundaryVector,
                                  boundaries_to_frames, compression_rate, parse_alignment,
                                  project_boundaries, shuffle_boundaries, token_tier)

DOG = """\
# a single word with three phones
id utt1 frames 30 hop_ms 10
word dog 0 300
phone d 0 100
phone o 100 200
phone g 200 300
"""


def test_parse_single_word_alignment():
    parsed = parse_alignment(DOG)
    assert parsed.utterance_id == "utt1"
    assert parsed.frame_count == 30
    assert len(parsed.words()) == 1
    assert [p.label for p in parsed.phones()] == ["d", "o", "g"]


def test_parse_empty_file_rejected():
    with pytest.raises(AlignmentError, match="no tokens"):
        parse_alignment("# nothing here\n")
    with pytest.raises(AlignmentError, match="no tokens"):
        parse_alignment("id u frames 10 hop_ms 10\n")


def test_parse_phone_straddling_words_rejected():
    text = """id u frames 20 hop_ms 10
word a 0 100
word b 100 200
phone x 50 150
"""
    with pytest.raises(AlignmentError, match="'x'"):
        parse_alignment(text)


def test_parse_reports_line_numbers_for_malformed_lines():
    text = "id u frames 10 hop_ms 10\nword a 0 100\nbogus line here\n"
    with pytest.raises(AlignmentError, match="line 3"):
        parse_alignment(text)


def test_parse_overlap_and_unsorted_rejected():
    overlap = "id u frames 20 hop_ms 10\nword a 0 120\nword b 110 200\n"
    with pytest.raises(AlignmentError, match="overlap"):
        parse_alignment(overlap)
    unsorted = "id u frames 20 hop_ms 10\nword b 100 200\nword a 0 100\n"
    with pytest.raises(AlignmentError, match="sorted"):
        parse_alignment(unsorted)


def test_parse_hop_conflict_and_frame_mismatch():
    with pytest.raises(AlignmentError, match="hop"):
        parse_alignment(DOG, frame_hop_ms=20)
    bad = DOG.replace("frames 30", "frames 31")
    with pytest.raises(AlignmentError, match="frame count mismatch"):
        parse_alignment(bad)


def test_boundaries_single_segment_spanning_everything():
    tier = boundaries_to_frames([300], 10, 30, "word")
    expected = np.zeros(30, dtype=np.uint8)
    expected[29] = 1
    np.testing.assert_array_equal(tier.bits, expected)


def test_boundaries_word_example():
    tier = boundaries_to_frames([100, 300], 10, 30, "word")
    assert tier.bits[9] == 1 and tier.bits[29] == 1
    assert tier.segment_count == 2


def test_boundaries_nesting_from_alignment():
    parsed = parse_alignment(DOG)
    words = token_tier(parsed, "word", "word")
    phones = token_tier(parsed, "phone", "phone")
    assert set(words.positions()).issubset(set(phones.positions()))


def test_boundaries_segment_shorter_than_hop_rejected():
    with pytest.raises(BoundaryError, match="shorter than frame hop"):
        boundaries_to_frames([5, 8], 10, 2, "phone")


def test_boundaries_end_beyond_frames_rejected():
    with pytest.raises(BoundaryError, match="exceeds"):
        boundaries_to_frames([310], 10, 30, "word")


def test_boundary_vector_invariants():
    with pytest.raises(BoundaryError, match="last bit"):
        BoundaryVector(bits=np.array([1, 0], dtype=np.uint8), level="word")
    with pytest.raises(BoundaryError, match="binary"):
        BoundaryVector(bits=np.array([0, 2], dtype=np.uint8), level="word")
    with pytest.raises(BoundaryError, match="level"):
        BoundaryVector(bits=np.array([1], dtype=np.uint8), level="chunk")


def test_shuffle_preserves_popcount_1000_cases():
    rng = np.random.default_rng(11)
    for case in range(1000):
        T = int(rng.integers(2, 40))
        k = int(rng.integers(1, T + 1))
        bits = np.zeros(T, dtype=np.uint8)
        pos = rng.choice(T - 1, size=k - 1, replace=False) if k > 1 else []
        bits[list(pos)] = 1
        bits[T - 1] = 1
        tier = BoundaryVector(bits=bits, level="phone")
        out = shuffle_boundaries(tier, seed=case)
        assert out.segment_count == tier.segment_count
        assert out.bits[-1] == 1


def test_shuffle_single_frame_unchanged():
    tier = BoundaryVector(bits=np.array([1], dtype=np.uint8), level="word")
    out = shuffle_boundaries(tier, seed=3)
    np.testing.assert_array_equal(out.bits, [1])


def test_shuffle_deterministic_per_seed():
    bits = np.zeros(25, dtype=np.uint8)
    bits[[3, 7, 24]] = 1
    tier = BoundaryVector(bits=bits, level="word")
    a = shuffle_boundaries(tier, seed=99)
    b = shuffle_boundaries(tier, seed=99)
    np.testing.assert_array_equal(a.bits, b.bits)
    c = shuffle_boundaries(tier, seed=100)
    assert not np.array_equal(a.bits, c.bits)


def test_shuffle_is_uniform_over_interior_positions():
    # chi-square over the 19 interior cells; critical value for df=18 at
    # alpha=0.001 is 42.3124
    T, k, draws = 20, 5, 10000
    bits = np.zeros(T, dtype=np.uint8)
    bits[[2, 5, 9, 14, 19]] = 1
    tier = BoundaryVector(bits=bits, level="word")
    counts = np.zeros(T - 1)
    for seed in range(draws):
        counts += shuffle_boundaries(tier, seed=seed).bits[:T - 1]
    expected = draws * (k - 1) / (T - 1)
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 42.3124, f"chi2={chi2}"


def test_project_direct_definition():
    T = 10
    lower = np.zeros(T, dtype=np.uint8)
    lower[[3, 5, 9]] = 1
    higher = np.zeros(T, dtype=np.uint8)
    higher[9] = 1
    out = project_boundaries(BoundaryVector(lower, "phone"), BoundaryVector(higher, "word"))
    np.testing.assert_array_equal(out.bits, [0, 0, 1])
    assert out.level == "word"


def test_project_equal_tiers_gives_all_ones():
    bits = np.zeros(6, dtype=np.uint8)
    bits[[1, 3, 5]] = 1
    out = project_boundaries(BoundaryVector(bits, "phone"), BoundaryVector(bits.copy(), "word"))
    np.testing.assert_array_equal(out.bits, [1, 1, 1])


def test_project_subset_violation_names_frame():
    lower = np.zeros(8, dtype=np.uint8)
    lower[[2, 7]] = 1
    higher = np.zeros(8, dtype=np.uint8)
    higher[[4, 7]] = 1
    with pytest.raises(BoundaryError, match="frame 4"):
        project_boundaries(BoundaryVector(lower, "phone"), BoundaryVector(higher, "word"))


def _random_nested(rng, T):
    """Random (phone, syllable, word) frame tiers with word c syl c phone."""
    n_phone = int(rng.integers(3, max(4, T // 2)))
    phone_pos = np.sort(rng.choice(T - 1, size=n_phone - 1, replace=False))
    phone_pos = np.append(phone_pos, T - 1)
    syl_pos = np.sort(rng.choice(phone_pos[:-1], size=int(rng.integers(1, n_phone)), replace=False))
    syl_pos = np.unique(np.append(syl_pos, T - 1))
    word_pos = np.sort(rng.choice(syl_pos[:-1], size=int(rng.integers(0, syl_pos.size)), replace=False))
    word_pos = np.unique(np.append(word_pos, T - 1))

    def tier(pos, level):
        bits = np.zeros(T, dtype=np.uint8)
        bits[pos] = 1
        return BoundaryVector(bits, level)

    return tier(phone_pos, "phone"), tier(syl_pos, "syllable_word"), tier(word_pos, "word")


def test_project_two_hops_equal_one_hop():
    # Word bits over syllable positions: directly from frames, or via the
    # phone-reduced axis first.  Both routes must agree on nested tiers.
    rng = np.random.default_rng(17)
    for _ in range(200):
        T = int(rng.integers(8, 40))
        phone, syl, word = _random_nested(rng, T)
        direct = project_boundaries(syl, word)
        syl_on_phone = project_boundaries(phone, syl)
        word_on_phone = project_boundaries(phone, word)
        two_hop = project_boundaries(syl_on_phone, word_on_phone)
        np.testing.assert_array_equal(direct.bits, two_hop.bits)


def test_compression_rate_formula():
    bits = np.zeros(100, dtype=np.uint8)
    bits[np.linspace(9, 99, 10, dtype=int)] = 1
    tier = BoundaryVector(bits, "word")
    assert compression_rate(tier) == 90.0


def test_compression_rate_all_boundaries_is_zero():
    tier = BoundaryVector(np.ones(7, dtype=np.uint8), "phone")
    assert compression_rate(tier) == 0.0


def test_compression_rate_range_property():
    rng = np.random.default_rng(23)
    for _ in range(100):
        T = int(rng.integers(1, 50))
        bits = (rng.random(T) < 0.4).astype(np.uint8)
        bits[T - 1] = 1
        tier = BoundaryVector(bits, "phone")
        rate = compression_rate(tier)
        assert 0.0 <= rate < 100.0
        assert (rate == 0.0) == bool(bits.all())
