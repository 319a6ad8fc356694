"""Word vectors, label tokenisation, label embeddings and the relatedness matrix."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class FormatError(ValueError):
    pass


class CoverageError(ValueError):
    pass


class DisjointnessError(ValueError):
    pass


@dataclass(frozen=True)
class WordVectorTable:
    dim: int
    entries: dict  # token -> np.ndarray(dim)

    def __contains__(self, token):
        return token in self.entries

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class LabelEmbedding:
    class_id: int
    label_text: str
    vector: np.ndarray
    covered_tokens: int
    total_tokens: int


def _is_header(parts):
    if len(parts) != 2:
        return False
    try:
        return all(int(p) > 0 for p in parts)
    except ValueError:
        return False


def load_word_vectors(path) -> WordVectorTable:
    """Read a word2vec-style text file, optional ``count dim`` header."""
    entries = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        lines = [ln.split() for ln in f]
    lines = [p for p in lines if p]
    if not lines:
        raise FormatError(f"{path}: empty word-vector file")
    if _is_header(lines[0]):
        lines = lines[1:]
    for lineno, parts in enumerate(lines, 1):
        token = parts[0].lower()
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: entry {lineno}: {exc}") from None
        if dim is None:
            if vec.size == 0:
                raise FormatError(f"{path}: entry {lineno} has no vector")
            dim = vec.size
        elif vec.size != dim:
            raise FormatError(
                f"{path}: entry {lineno} ({token!r}) has {vec.size} values, expected {dim}")
        if token in entries:
            log.warning("duplicate token %r in %s; keeping first occurrence", token, path)
            continue
        vec.setflags(write=False)
        entries[token] = vec
    if not entries:
        raise FormatError(f"{path}: no vectors")
    return WordVectorTable(dim=dim, entries=entries)


def write_word_vectors(table: WordVectorTable, path, header=True):
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.entries.items():
            f.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


_SPLIT = re.compile(r"[\s_\-]+")
_PUNCT = re.compile(r"[^\w]|_", re.UNICODE)


def tokenize_label(label: str) -> list[str]:
    """Lowercase, split on whitespace/underscore/hyphen, strip punctuation."""
    tokens = []
    for piece in _SPLIT.split(label.lower()):
        piece = _PUNCT.sub("", piece)
        if piece:
            tokens.append(piece)
    if not tokens:
        raise FormatError(f"label {label!r} has no tokens")
    return tokens


def embed_label(table: WordVectorTable, label: str, class_id: int = 0) -> LabelEmbedding:
    tokens = tokenize_label(label)
    found = [table.entries[t] for t in tokens if t in table.entries]
    if not found:
        raise CoverageError(f"label {label!r}: none of {tokens} is in the vocabulary")
    return LabelEmbedding(class_id=class_id, label_text=label,
                          vector=np.mean(found, axis=0),
                          covered_tokens=len(found), total_tokens=len(tokens))


def embed_labels(table, labels):
    out = [embed_label(table, lab, i) for i, lab in enumerate(labels)]
    for e in out:
        if e.covered_tokens < e.total_tokens:
            log.info("label %r: %d/%d tokens in vocabulary",
                     e.label_text, e.covered_tokens, e.total_tokens)
    return out


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b):
    """Pairwise cosine between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine of a zero vector is undefined")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def relatedness_matrix(unseen, seen) -> np.ndarray:
    """gamma x kappa matrix of cosines between unseen and seen label embeddings."""
    if not unseen or not seen:
        raise ValueError("relatedness_matrix needs non-empty label sets")
    shared = {e.label_text for e in unseen} & {e.label_text for e in seen}
    if shared:
        raise DisjointnessError(f"labels are both seen and unseen: {sorted(shared)}")
    dims = {e.vector.shape for e in unseen} | {e.vector.shape for e in seen}
    if len(dims) != 1:
        raise ValueError(f"embedding dimensions differ: {dims}")
    return cosine_matrix([e.vector for e in unseen], [e.vector for e in seen])


def read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        labels = [ln.strip() for ln in f]
    labels = [lab for lab in labels if lab]
    if not labels:
        raise FormatError(f"{path}: no labels")
    return labels


def save_embeddings(embeddings, path):
    doc = {
        "dim": int(embeddings[0].vector.size),
        "labels": [{"class_id": e.class_id, "label": e.label_text,
                    "vector": [float(v) for v in e.vector],
                    "covered_tokens": e.covered_tokens,
                    "total_tokens": e.total_tokens} for e in embeddings],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_embeddings(path):
    doc = json.loads(Path(path).read_text())
    try:
        dim = int(doc["dim"])
        out = []
        for item in doc["labels"]:
            vec = np.asarray(item["vector"], dtype=np.float64)
            if vec.size != dim:
                raise FormatError(f"{path}: label {item['label']!r} has dim {vec.size}")
            n = len(tokenize_label(item["label"]))
            out.append(LabelEmbedding(int(item["class_id"]), item["label"], vec,
                                      int(item.get("covered_tokens", n)),
                                      int(item.get("total_tokens", n))))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed embedding file ({exc})") from None
    return sorted(out, key=lambda e: e.class_id)
