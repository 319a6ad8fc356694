"""Attention masks over the token layout ``[CLS], r_1..r_T, w_1..w_N``."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Scheme(str, Enum):
    MODALITY_SPECIFIC = "modality"
    FULL_CROSS = "cross"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for s in cls:
            if value in (s.value, s.name, s.name.lower()):
                return s
        raise ValueError(f"unknown attention scheme {value!r}")


class MaskValidationError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceLayout:
    n_visual: int
    n_words: int

    def __post_init__(self):
        if self.n_visual < 1 or self.n_words < 1:
            raise ValueError(f"layout needs >=1 visual and word token, got {self}")

    @property
    def total(self):
        return 1 + self.n_visual + self.n_words

    @property
    def visual_block(self):
        """[CLS] plus frame positions."""
        return slice(0, 1 + self.n_visual)

    @property
    def word_block(self):
        return slice(1 + self.n_visual, self.total)


@dataclass(frozen=True)
class AttentionMask:
    allow: np.ndarray  # allow[q, k]: query q may attend to key k
    scheme: Scheme


def build_mask(layout: SequenceLayout, scheme=Scheme.MODALITY_SPECIFIC) -> AttentionMask:
    scheme = Scheme.parse(scheme)
    n, nv = layout.total, 1 + layout.n_visual
    allow = np.zeros((n, n), dtype=bool)
    allow[:nv, :nv] = True
    if scheme is Scheme.FULL_CROSS:
        allow[:nv, nv:] = True
    # words see [CLS], every frame, and words up to and including themselves
    allow[nv:, :nv] = True
    allow[nv:, nv:] = np.tril(np.ones((layout.n_words, layout.n_words), dtype=bool))
    allow.setflags(write=False)
    return AttentionMask(allow=allow, scheme=scheme)


def validate_mask(mask: AttentionMask, layout: SequenceLayout) -> None:
    """Check ``mask`` cell by cell against its scheme's rules."""
    allow = np.asarray(mask.allow)
    if allow.shape != (layout.total, layout.total):
        raise MaskValidationError(
            f"mask shape {allow.shape} does not match layout total {layout.total}")
    expected = build_mask(layout, mask.scheme).allow
    bad = np.argwhere(allow != expected)
    if len(bad):
        q, k = (int(v) for v in bad[0])
        raise MaskValidationError(
            f"cell ({q},{k}) is {bool(allow[q, k])}, {mask.scheme.name} requires "
            f"{bool(expected[q, k])}")


def format_mask(mask: AttentionMask) -> str:
    return "\n".join(" ".join("1" if v else "0" for v in row) for row in mask.allow)
