"""Cross-modal transformer encoder with a [CLS] classification head and a
masked-token head over label words.

The sequence ``[CLS], r_1..r_T, w_1..w_N`` is carried as two streams, the
visual block (``[CLS]`` + frames) and the word block. Every position-wise
layer runs on each stream separately, and attention only builds logits
against a key block when the mask lets at least one query of that stream
see it. With modality-specific attention the visual stream therefore never
touches a word tensor, which makes ``x`` and the class logits bitwise
independent of the label text rather than merely numerically close.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from . import tensor as tc
from .attention import Scheme, SequenceLayout, build_mask
from .labels import tokenize_label
from .tensor import Tensor

PAD = "[PAD]"
MASK = "[MASK]"


class ConfigError(ValueError):
    pass


class LossMode(str, Enum):
    CLS_ONLY = "cls"
    MLM_ONLY = "mlm"
    JOINT = "joint"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name, m.name.lower()):
                return m
        raise ConfigError(f"unknown loss mode {value!r}")


@dataclass
class EncoderConfig:
    input_feature_dim: int = 16
    vocab_size: int = 2
    max_visual_len: int = 16
    max_word_len: int = 8
    num_seen_classes: int = 2
    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 4
    mlp_dim: int = 64
    attention_scheme: Scheme = Scheme.MODALITY_SPECIFIC
    loss_mode: LossMode = LossMode.JOINT
    omega_mtl: float = 0.5
    mask_prob: float = 0.15
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.attention_scheme = Scheme.parse(self.attention_scheme)
        self.loss_mode = LossMode.parse(self.loss_mode)
        if self.num_layers < 1 or self.num_heads < 1:
            raise ConfigError("num_layers and num_heads must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0 < self.mask_prob < 1:
            raise ConfigError(f"mask_prob must lie in (0, 1), got {self.mask_prob}")
        if self.omega_mtl < 0:
            raise ConfigError("omega_mtl must be >= 0")
        for name in ("input_feature_dim", "vocab_size", "max_visual_len",
                     "max_word_len", "num_seen_classes", "mlp_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["attention_scheme"] = self.attention_scheme.value
        d["loss_mode"] = self.loss_mode.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Vocabulary:
    token_to_id: dict

    @classmethod
    def build(cls, seen_labels):
        tokens = sorted({t for lab in seen_labels for t in tokenize_label(lab)})
        if not tokens:
            raise ValueError("vocabulary would be empty")
        ids = {t: i for i, t in enumerate(tokens)}
        ids[PAD] = len(ids)
        ids[MASK] = len(ids)
        return cls(ids)

    def __len__(self):
        return len(self.token_to_id)

    @property
    def pad_id(self):
        return self.token_to_id[PAD]

    @property
    def mask_id(self):
        return self.token_to_id[MASK]

    def encode(self, label):
        try:
            return [self.token_to_id[t] for t in tokenize_label(label)]
        except KeyError as exc:
            raise KeyError(f"label {label!r}: token {exc} not in vocabulary") from None


def build_vocabulary(seen_labels):
    return Vocabulary.build(seen_labels)


# parameters ---------------------------------------------------------------

def param_shapes(config: EncoderConfig):
    D, M = config.hidden_dim, config.mlp_dim
    shapes = {
        "cls_token": (D,),
        "visual_proj.w": (config.input_feature_dim, D),
        "visual_proj.b": (D,),
        "word_embedding": (config.vocab_size, D),
        "pos_visual": (config.max_visual_len + 1, D),  # index 0 is [CLS]
        "pos_word": (config.max_word_len, D),
        "segment": (2, D),
    }
    for layer in range(config.num_layers):
        p = f"layer{layer}."
        for m in "qkvo":
            shapes[p + f"attn.{m}.w"] = (D, D)
            shapes[p + f"attn.{m}.b"] = (D,)
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        shapes[p + "mlp.w1"] = (D, M)
        shapes[p + "mlp.b1"] = (M,)
        shapes[p + "mlp.w2"] = (M, D)
        shapes[p + "mlp.b2"] = (D,)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
    shapes.update({
        "final_ln.g": (D,),
        "final_ln.b": (D,),
        "cls_head.w1": (D, D),
        "cls_head.b1": (D,),
        "cls_head.w2": (D, config.num_seen_classes),
        "cls_head.b2": (config.num_seen_classes,),
        "mtl_head.w": (D, config.vocab_size),
        "mtl_head.b": (config.vocab_size,),
    })
    return shapes


def _is_bias(name):
    return name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2")


def init_params(config: EncoderConfig) -> dict:
    """N(0, init_std^2) weights, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if ".ln" in name or name.startswith("final_ln"):
            data = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
        elif _is_bias(name):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, config.init_std, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def count_params(params):
    return sum(p.data.size for p in params.values())


# batches ------------------------------------------------------------------

@dataclass
class MaskingPlan:
    positions: np.ndarray  # word indices replaced by [MASK]
    original_tokens: np.ndarray

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("a masking plan must mask at least one word")


def make_masking_plan(word_ids, mask_prob, rng) -> MaskingPlan:
    """Mask each word independently with ``mask_prob``; at least one is always masked."""
    word_ids = np.asarray(word_ids, dtype=np.int64)
    n = len(word_ids)
    if n < 1:
        raise ValueError("cannot mask an empty word sequence")
    chosen = rng.random(n) < mask_prob
    if not chosen.any():
        chosen[rng.integers(n)] = True
    pos = np.flatnonzero(chosen)
    return MaskingPlan(positions=pos, original_tokens=word_ids[pos])


@dataclass
class Batch:
    frames: np.ndarray       # (B, T, p), zero padded
    visual_len: np.ndarray   # (B,)
    words: np.ndarray        # (B, W) token ids, [PAD] padded, already masked
    word_len: np.ndarray     # (B,)
    class_ids: np.ndarray    # (B,)
    plans: list = field(default_factory=list)  # MaskingPlan or None per item

    def __len__(self):
        return len(self.frames)


def make_batch(frames_list, word_lists, class_ids, vocab: Vocabulary, plans=None):
    """Pad a list of items into a :class:`Batch`, substituting [MASK] per plan."""
    B = len(frames_list)
    plans = list(plans) if plans is not None else [None] * B
    T = max(len(f) for f in frames_list)
    W = max(len(w) for w in word_lists)
    p = np.asarray(frames_list[0]).shape[1]
    frames = np.zeros((B, T, p))
    words = np.full((B, W), vocab.pad_id, dtype=np.int64)
    for b, (f, w, plan) in enumerate(zip(frames_list, word_lists, plans)):
        f = np.asarray(f, dtype=np.float64)
        frames[b, :len(f)] = f
        w = np.array(w, dtype=np.int64)
        if plan is not None:
            w[plan.positions] = vocab.mask_id
        words[b, :len(w)] = w
    return Batch(frames=frames,
                 visual_len=np.array([len(f) for f in frames_list]),
                 words=words,
                 word_len=np.array([len(w) for w in word_lists]),
                 class_ids=np.asarray(class_ids, dtype=np.int64),
                 plans=plans)


# forward ------------------------------------------------------------------

@dataclass
class ForwardOutput:
    x: Tensor                 # (B, D) visual representation, LN(z_L^0)
    cls_logits: Tensor        # (B, kappa)
    mtl_logits: Tensor | None  # (n_masked, V) rows ordered by (item, position)
    mtl_targets: np.ndarray | None
    word_states: Tensor       # (B, W, D) last-layer word outputs


def _linear(x, params, prefix):
    return x @ params[prefix + ".w"] + params[prefix + ".b"]


def _split_heads(x, H):
    B, n, D = x.shape
    return x.reshape(B, n, H, D // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, H * dh)


def _attention(streams, mask, blocks, params, prefix, H):
    """Multi-head self-attention over the concatenation of ``streams``.

    ``blocks`` are the slices of the full sequence occupied by each stream;
    ``mask`` is the (B, n, n) boolean allow matrix.
    """
    D = streams[0].shape[-1]
    scale = 1.0 / math.sqrt(D // H)
    q = [_split_heads(_linear(s, params, prefix + ".q"), H) for s in streams]
    k = [_split_heads(_linear(s, params, prefix + ".k"), H) for s in streams]
    v = [_split_heads(_linear(s, params, prefix + ".v"), H) for s in streams]
    outputs = []
    for qi, rows in zip(q, blocks):
        sub = mask[:, rows, :]
        keep = [j for j, cols in enumerate(blocks) if sub[:, :, cols].any()]
        logits = [(qi @ k[j].transpose(0, 1, 3, 2)) * scale for j in keep]
        logits = logits[0] if len(logits) == 1 else tc.concat(logits, axis=-1)
        allow = np.concatenate([sub[:, None, :, blocks[j]] for j in keep], axis=-1)
        probs = tc.softmax_masked(logits, allow)
        out, lo = None, 0
        for j in keep:
            width = blocks[j].stop - blocks[j].start
            part = (probs if len(keep) == 1 else probs[..., lo:lo + width]) @ v[j]
            out = part if out is None else out + part
            lo += width
        outputs.append(_linear(_merge_heads(out), params, prefix + ".o"))
    return outputs


def _block(streams, mask, blocks, params, layer, H):
    p = f"layer{layer}."
    attn = _attention(streams, mask, blocks, params, p + "attn", H)
    mid = [tc.layer_norm(a + s, params[p + "ln1.g"], params[p + "ln1.b"])
           for a, s in zip(attn, streams)]
    out = []
    for h in mid:
        m = tc.gelu(h @ params[p + "mlp.w1"] + params[p + "mlp.b1"])
        m = m @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        out.append(tc.layer_norm(m + h, params[p + "ln2.g"], params[p + "ln2.b"]))
    return out


def attention_allow(config, batch):
    """Scheme mask ANDed with key padding, shape (B, n, n)."""
    B, T = batch.frames.shape[:2]
    W = batch.words.shape[1]
    base = build_mask(SequenceLayout(T, W), config.attention_scheme).allow
    valid = np.ones((B, 1 + T + W), dtype=bool)
    valid[:, 1:1 + T] = np.arange(T)[None, :] < batch.visual_len[:, None]
    valid[:, 1 + T:] = np.arange(W)[None, :] < batch.word_len[:, None]
    return base[None, :, :] & valid[:, None, :]


def forward(params, config: EncoderConfig, batch: Batch) -> ForwardOutput:
    B, T, _ = batch.frames.shape
    W = batch.words.shape[1]
    if T > config.max_visual_len:
        raise ConfigError(f"{T} frames exceed max_visual_len {config.max_visual_len}")
    if W > config.max_word_len:
        raise ConfigError(f"{W} words exceed max_word_len {config.max_word_len}")
    D = config.hidden_dim
    seg = params["segment"]

    cls = params["cls_token"].reshape(1, 1, D) + Tensor(np.zeros((B, 1, D)))
    frames = _linear(Tensor(batch.frames), params, "visual_proj")
    visual = tc.concat([cls, frames], axis=1)
    visual = visual + params["pos_visual"][:1 + T] + seg[0]
    words = tc.embedding(params["word_embedding"], batch.words)
    words = words + params["pos_word"][:W] + seg[1]

    mask = attention_allow(config, batch)
    blocks = [slice(0, 1 + T), slice(1 + T, 1 + T + W)]
    streams = [visual, words]
    for layer in range(config.num_layers):
        streams = _block(streams, mask, blocks, params, layer, config.num_heads)
    visual, words = streams

    x = tc.layer_norm(visual[:, 0, :], params["final_ln.g"], params["final_ln.b"])
    hidden = tc.gelu(_linear_named(x, params, "cls_head.w1", "cls_head.b1"))
    cls_logits = _linear_named(hidden, params, "cls_head.w2", "cls_head.b2")

    mtl_logits = targets = None
    flat, tgt = [], []
    for b, plan in enumerate(batch.plans):
        if plan is not None:
            flat.extend(b * W + int(q) for q in plan.positions)
            tgt.extend(int(t) for t in plan.original_tokens)
    if flat:
        picked = tc.embedding(words.reshape(B * W, D), np.array(flat))
        mtl_logits = picked @ params["mtl_head.w"] + params["mtl_head.b"]
        targets = np.array(tgt, dtype=np.int64)
    return ForwardOutput(x=x, cls_logits=cls_logits, mtl_logits=mtl_logits,
                         mtl_targets=targets, word_states=words)


def _linear_named(x, params, w, b):
    return x @ params[w] + params[b]


# losses -------------------------------------------------------------------

def loss_cls(cls_logits, class_ids):
    return tc.cross_entropy(cls_logits, class_ids)


def loss_mtl(mtl_logits, original_tokens):
    original_tokens = np.asarray(original_tokens).reshape(-1)
    if mtl_logits.shape[0] != len(original_tokens):
        raise ValueError(f"{mtl_logits.shape[0]} MTL logit rows for "
                         f"{len(original_tokens)} masked positions")
    return tc.cross_entropy(mtl_logits, original_tokens)


def total_loss(l_cls, l_mtl, config: EncoderConfig):
    mode = config.loss_mode
    if mode is LossMode.CLS_ONLY:
        return l_cls
    if mode is LossMode.MLM_ONLY:
        return l_mtl
    return l_cls + config.omega_mtl * l_mtl


def batch_losses(params, config, batch):
    """Forward ``batch`` and return (total, l_cls, l_mtl, output)."""
    out = forward(params, config, batch)
    l_cls = loss_cls(out.cls_logits, batch.class_ids)
    l_mtl = loss_mtl(out.mtl_logits, out.mtl_targets) if out.mtl_logits is not None else None
    if l_mtl is None and config.loss_mode is not LossMode.CLS_ONLY:
        raise ValueError("MTL loss requested but the batch has no masking plans")
    return total_loss(l_cls, l_mtl, config), l_cls, l_mtl, out


# inference ----------------------------------------------------------------

def _mask_only_batch(frames_list, mask_id):
    B = len(frames_list)
    T = max(len(f) for f in frames_list)
    p = np.asarray(frames_list[0]).shape[1]
    frames = np.zeros((B, T, p))
    for b, f in enumerate(frames_list):
        frames[b, :len(f)] = f
    return Batch(frames=frames, visual_len=np.array([len(f) for f in frames_list]),
                 words=np.full((B, 1), mask_id, dtype=np.int64),
                 word_len=np.ones(B, dtype=np.int64),
                 class_ids=np.zeros(B, dtype=np.int64), plans=[None] * B)


def represent(params, config, frames) -> np.ndarray:
    """Visual representation of one clip: word block is a single [MASK]."""
    return represent_many(params, config, [frames])[0]


def represent_many(params, config, frames_list, batch_size=64) -> np.ndarray:
    mask_id = config.vocab_size - 1  # [MASK] is always the last id
    out = []
    for lo in range(0, len(frames_list), batch_size):
        batch = _mask_only_batch(frames_list[lo:lo + batch_size], mask_id)
        out.append(forward(params, config, batch).x.data)
    return np.concatenate(out, axis=0)
