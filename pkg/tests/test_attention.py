import numpy as np
import pytest
from hypothesis import given, strategies as st

from rest_zsar.attention import (AttentionMask, MaskValidationError, Scheme, SequenceLayout,
                                 build_mask, format_mask, validate_mask)


def grid(rows):
    return np.array([[c == "1" for c in r] for r in rows])


def test_modality_specific_t2_w2():
    m = build_mask(SequenceLayout(2, 2), Scheme.MODALITY_SPECIFIC)
    expected = grid(["11100", "11100", "11100", "11110", "11111"])
    np.testing.assert_array_equal(m.allow, expected)


def test_modality_specific_t1_w1():
    m = build_mask(SequenceLayout(1, 1), "modality")
    np.testing.assert_array_equal(m.allow, grid(["110", "110", "111"]))


def test_full_cross_t2_w2():
    m = build_mask(SequenceLayout(2, 2), Scheme.FULL_CROSS)
    expected = grid(["11111", "11111", "11111", "11110", "11111"])
    np.testing.assert_array_equal(m.allow, expected)


def test_validate_accepts_built_masks():
    for scheme in Scheme:
        layout = SequenceLayout(3, 4)
        validate_mask(build_mask(layout, scheme), layout)


def test_validate_rejects_visual_to_word():
    layout = SequenceLayout(2, 2)
    allow = build_mask(layout).allow.copy()
    allow[1, 3] = True
    with pytest.raises(MaskValidationError, match=r"\(1,3\)"):
        validate_mask(AttentionMask(allow, Scheme.MODALITY_SPECIFIC), layout)


def test_validate_rejects_false_diagonal():
    layout = SequenceLayout(2, 2)
    allow = build_mask(layout).allow.copy()
    allow[4, 4] = False
    with pytest.raises(MaskValidationError, match=r"\(4,4\)"):
        validate_mask(AttentionMask(allow, Scheme.MODALITY_SPECIFIC), layout)


@given(st.integers(1, 12), st.integers(1, 12))
def test_modality_specific_block_structure(t, w):
    layout = SequenceLayout(t, w)
    allow = build_mask(layout).allow
    vis, words = layout.visual_block, layout.word_block
    assert not allow[vis, words].any()
    assert allow[vis, vis].all()
    np.testing.assert_array_equal(allow[words, words], np.tril(np.ones((w, w), bool)))
    assert allow[words, vis].all()
    assert allow.diagonal().all()
    assert np.array_equal(allow, build_mask(layout).allow)


def test_format_mask():
    assert format_mask(build_mask(SequenceLayout(1, 1))) == "1 1 0\n1 1 0\n1 1 1"


def test_scheme_parse():
    assert Scheme.parse("cross") is Scheme.FULL_CROSS
    assert Scheme.parse("MODALITY_SPECIFIC") is Scheme.MODALITY_SPECIFIC
    with pytest.raises(ValueError):
        Scheme.parse("bogus")
