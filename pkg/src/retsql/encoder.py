"""The question abstractor: a small bidirectional LSTM encoder.

The encoder maps a composite input sequence (SQL element tokens, question
tokens, table headers) to three things: a retrieval vector ``q``, a
grounding seed ``g``, and one contextual vector per input position.  ``q``
and ``g`` are slices of an affine projection of the [CLS] position.

All forward/backward passes run through the kernels module so the hot
loops can be numba-compiled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import corpus, kernels, optim
from .errors import DimensionMismatch, EmptyDataset, EmptyInput

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"

# One element token per SQL keyword/operator used by slot templates, plus a
# generic column marker.
ELEMENT_TOKENS = (
    "[SELECT]",
    "[WHERE]",
    "[AND]",
    "[MAX]",
    "[MIN]",
    "[COUNT]",
    "[SUM]",
    "[AVG]",
    "[=]",
    "[>]",
    "[<]",
    "[COL]",
)

RESERVED_TOKENS = (PAD, UNK, CLS, SEP) + ELEMENT_TOKENS


class Vocabulary:
    """Token-to-id map with an unknown-token bucket.

    Ids 0..len(RESERVED_TOKENS)-1 are reserved; corpus tokens follow,
    ordered by descending count then token text, so construction is
    deterministic.
    """

    def __init__(self, token_to_id: dict[str, int]):
        self.token_to_id = token_to_id
        self.unk_id = token_to_id[UNK]

    @classmethod
    def build(cls, token_lists, min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for tokens in token_lists:
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
        mapping = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        for tok, count in ordered:
            if count >= min_count and tok not in mapping:
                mapping[tok] = len(mapping)
        return cls(mapping)

    @classmethod
    def from_dataset(cls, dataset: corpus.Dataset, min_count: int = 1) -> "Vocabulary":
        lists = [ex.tokens for ex in dataset.examples]
        for schema in dataset.schemas.values():
            for header in schema.headers:
                lists.append(corpus.tokenize(header))
        return cls.build(lists, min_count=min_count)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def __len__(self) -> int:
        return len(self.token_to_id)


@dataclass
class EncoderConfig:
    vocab: Vocabulary
    d_q: int = 256
    d_h: int = 100
    embed_dim: int = 64
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.d_q <= 0 or self.d_h <= 0:
            raise DimensionMismatch("d_q and d_h must be positive")
        if self.hidden_dim % 2 != 0:
            raise DimensionMismatch("hidden_dim must be even (bidirectional halves)")

    @property
    def proj_dim(self) -> int:
        return self.d_q + 2 * self.d_h


@dataclass(frozen=True)
class InputLayout:
    """The composite encoder input: [CLS], elements, question, headers.

    Element tokens and headers are each followed by [SEP].  Segment id 0
    covers [CLS] and the element block, segment id 1 the question and
    headers.  ``header_anchors[i]`` is the position of header i's first
    token; column slots point at these anchors.
    """

    tokens: tuple[str, ...]
    segment_ids: tuple[int, ...]
    roles: tuple[str, ...]
    header_anchors: tuple[int, ...]
    question_positions: tuple[int, ...]
    element_positions: dict[str, int]

    def __len__(self) -> int:
        return len(self.tokens)


def build_input(
    question_tokens, header_token_lists, element_tokens=ELEMENT_TOKENS
) -> InputLayout:
    """Assemble the encoder input layout for one question and its headers."""
    if not question_tokens:
        raise EmptyInput("question has no tokens")
    if not header_token_lists or any(not h for h in header_token_lists):
        raise EmptyInput("need at least one non-empty header")
    tokens = [CLS]
    segments = [0]
    roles = ["cls"]
    element_positions = {}
    for elem in element_tokens:
        element_positions[elem] = len(tokens)
        tokens += [elem, SEP]
        segments += [0, 0]
        roles += ["element", "separator"]
    question_positions = tuple(range(len(tokens), len(tokens) + len(question_tokens)))
    for tok in question_tokens:
        tokens.append(tok)
        segments.append(1)
        roles.append("question")
    tokens.append(SEP)
    segments.append(1)
    roles.append("separator")
    anchors = []
    for header in header_token_lists:
        anchors.append(len(tokens))
        for i, tok in enumerate(header):
            tokens.append(tok)
            segments.append(1)
            roles.append("header_start" if i == 0 else "header_cont")
        tokens.append(SEP)
        segments.append(1)
        roles.append("separator")
    return InputLayout(
        tokens=tuple(tokens),
        segment_ids=tuple(segments),
        roles=tuple(roles),
        header_anchors=tuple(anchors),
        question_positions=question_positions,
        element_positions=element_positions,
    )


def build_pair_input(tokens_a, tokens_b) -> InputLayout:
    """Layout for paraphrase classification: [CLS], Q1, [SEP], Q2, [SEP]."""
    if not tokens_a or not tokens_b:
        raise EmptyInput("both questions need tokens")
    tokens = [CLS] + list(tokens_a) + [SEP] + list(tokens_b) + [SEP]
    segments = [0] * (len(tokens_a) + 2) + [1] * (len(tokens_b) + 1)
    roles = (
        ["cls"]
        + ["question"] * len(tokens_a)
        + ["separator"]
        + ["question"] * len(tokens_b)
        + ["separator"]
    )
    return InputLayout(
        tokens=tuple(tokens),
        segment_ids=tuple(segments),
        roles=tuple(roles),
        header_anchors=(),
        question_positions=tuple(range(1, 1 + len(tokens_a))),
        element_positions={},
    )


def layout_for_example(example: corpus.Example, schema: corpus.TableSchema) -> InputLayout:
    headers = [corpus.tokenize(h) for h in schema.headers]
    return build_input(example.tokens, headers)


@dataclass
class EncodedQuestion:
    q: np.ndarray
    g: np.ndarray
    token_vectors: np.ndarray  # (len(layout), hidden_dim)
    layout: InputLayout


@dataclass
class BatchEncoding:
    q: np.ndarray  # (B, d_q)
    g: np.ndarray  # (B, 2*d_h)
    token_vectors: np.ndarray  # (B, T, hidden_dim), zero beyond each length
    lengths: np.ndarray
    layouts: list[InputLayout]
    cache: dict = field(repr=False, default_factory=dict)

    def single(self, i: int) -> EncodedQuestion:
        n = int(self.lengths[i])
        return EncodedQuestion(
            q=self.q[i],
            g=self.g[i],
            token_vectors=self.token_vectors[i, :n],
            layout=self.layouts[i],
        )


ENCODER_PARAM_NAMES = (
    "emb_tok",
    "emb_seg",
    "enc_fwd_wx",
    "enc_fwd_wh",
    "enc_fwd_b",
    "enc_bwd_wx",
    "enc_bwd_wh",
    "enc_bwd_b",
    "proj_w",
    "proj_b",
    "para_w",
    "para_b",
)


def init_params(config: EncoderConfig, rng: np.random.Generator | None = None) -> dict:
    """Uniform [-0.08, 0.08] initialization for every encoder tensor."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    de = config.embed_dim
    h2 = config.hidden_dim // 2

    def u(*shape):
        return rng.uniform(-0.08, 0.08, size=shape)

    return {
        "emb_tok": u(len(config.vocab), de),
        "emb_seg": u(2, de),
        "enc_fwd_wx": u(de, 4 * h2),
        "enc_fwd_wh": u(h2, 4 * h2),
        "enc_fwd_b": u(4 * h2),
        "enc_bwd_wx": u(de, 4 * h2),
        "enc_bwd_wh": u(h2, 4 * h2),
        "enc_bwd_b": u(4 * h2),
        "proj_w": u(config.hidden_dim, config.proj_dim),
        "proj_b": u(config.proj_dim),
        "para_w": u(config.hidden_dim),
        "para_b": u(1),
    }


def encode_batch(layouts, params, config: EncoderConfig) -> BatchEncoding:
    """Encode a batch of layouts in one padded pass."""
    layouts = list(layouts)
    if not layouts:
        raise EmptyInput("no layouts to encode")
    B = len(layouts)
    lengths = np.array([len(l) for l in layouts], dtype=np.int64)
    T = int(lengths.max())
    ids = np.zeros((B, T), dtype=np.int64)
    segs = np.zeros((B, T), dtype=np.int64)
    vocab = config.vocab
    for i, layout in enumerate(layouts):
        n = len(layout)
        ids[i, :n] = [vocab.id_of(tok) for tok in layout.tokens]
        segs[i, :n] = layout.segment_ids
    mask = np.arange(T)[None, :] < lengths[:, None]
    x = params["emb_tok"][ids] + params["emb_seg"][segs]
    x *= mask[:, :, None]
    h2 = config.hidden_dim // 2
    zeros = np.zeros((B, h2))
    gates_f, hs_f, cs_f = kernels.lstm_forward(
        x, lengths, params["enc_fwd_wx"], params["enc_fwd_wh"], params["enc_fwd_b"],
        zeros, zeros, False,
    )
    gates_b, hs_b, cs_b = kernels.lstm_forward(
        x, lengths, params["enc_bwd_wx"], params["enc_bwd_wh"], params["enc_bwd_b"],
        zeros, zeros, True,
    )
    hctx = np.concatenate([hs_f, hs_b], axis=2)
    cls_vec = hctx[:, 0, :]
    proj = cls_vec @ params["proj_w"] + params["proj_b"]
    cache = {
        "ids": ids,
        "segs": segs,
        "mask": mask,
        "x": x,
        "fwd": (gates_f, hs_f, cs_f),
        "bwd": (gates_b, hs_b, cs_b),
        "hctx": hctx,
    }
    return BatchEncoding(
        q=proj[:, : config.d_q],
        g=proj[:, config.d_q :],
        token_vectors=hctx,
        lengths=lengths,
        layouts=layouts,
        cache=cache,
    )


def encode(layout: InputLayout, params, config: EncoderConfig) -> EncodedQuestion:
    """Encode a single layout; see EncodedQuestion for the outputs."""
    return encode_batch([layout], params, config).single(0)


def encode_backward(
    enc: BatchEncoding, params, config: EncoderConfig, dq=None, dg=None, dtok=None
) -> dict:
    """Backpropagate upstream gradients on (q, g, token_vectors) to parameters."""
    cache = enc.cache
    B, T, _ = cache["x"].shape
    hidden = config.hidden_dim
    h2 = hidden // 2
    dhctx = np.zeros((B, T, hidden))
    if dtok is not None:
        dhctx += dtok
    if dq is not None or dg is not None:
        dproj = np.zeros((B, config.proj_dim))
        if dq is not None:
            dproj[:, : config.d_q] = dq
        if dg is not None:
            dproj[:, config.d_q :] = dg
        cls_vec = cache["hctx"][:, 0, :]
        dproj_w = cls_vec.T @ dproj
        dproj_b = dproj.sum(axis=0)
        dhctx[:, 0, :] += dproj @ params["proj_w"].T
    else:
        dproj_w = np.zeros_like(params["proj_w"])
        dproj_b = np.zeros_like(params["proj_b"])
    zeros = np.zeros((B, h2))
    gates_f, hs_f, cs_f = cache["fwd"]
    gates_b, hs_b, cs_b = cache["bwd"]
    dx_f, dwx_f, dwh_f, db_f, _, _ = kernels.lstm_backward(
        cache["x"], enc.lengths, params["enc_fwd_wx"], params["enc_fwd_wh"],
        gates_f, hs_f, cs_f, zeros, zeros, np.ascontiguousarray(dhctx[:, :, :h2]), False,
    )
    dx_b, dwx_b, dwh_b, db_b, _, _ = kernels.lstm_backward(
        cache["x"], enc.lengths, params["enc_bwd_wx"], params["enc_bwd_wh"],
        gates_b, hs_b, cs_b, zeros, zeros, np.ascontiguousarray(dhctx[:, :, h2:]), True,
    )
    dx = dx_f + dx_b
    dx *= cache["mask"][:, :, None]
    demb_tok = np.zeros_like(params["emb_tok"])
    demb_seg = np.zeros_like(params["emb_seg"])
    flat_ids = cache["ids"][cache["mask"]]
    flat_segs = cache["segs"][cache["mask"]]
    flat_dx = dx[cache["mask"]]
    np.add.at(demb_tok, flat_ids, flat_dx)
    np.add.at(demb_seg, flat_segs, flat_dx)
    return {
        "emb_tok": demb_tok,
        "emb_seg": demb_seg,
        "enc_fwd_wx": dwx_f,
        "enc_fwd_wh": dwh_f,
        "enc_fwd_b": db_f,
        "enc_bwd_wx": dwx_b,
        "enc_bwd_wh": dwh_b,
        "enc_bwd_b": db_b,
        "proj_w": dproj_w,
        "proj_b": dproj_b,
        "para_w": np.zeros_like(params["para_w"]),
        "para_b": np.zeros_like(params["para_b"]),
    }


# ---------------------------------------------------------------------------
# Paraphrase-pair pre-training
# ---------------------------------------------------------------------------


def classify_pairs(pairs, params, config: EncoderConfig, batch_size: int = 64):
    """Paraphrase probability for each (text_a, text_b) pair."""
    probs = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        layouts = [
            build_pair_input(corpus.tokenize(a), corpus.tokenize(b)) for a, b, *_ in chunk
        ]
        enc = encode_batch(layouts, params, config)
        cls_vec = enc.token_vectors[:, 0, :]
        z = cls_vec @ params["para_w"] + params["para_b"][0]
        probs.extend(0.5 * (np.tanh(0.5 * z) + 1.0))
    return np.array(probs)


def pair_accuracy(pairs, params, config: EncoderConfig) -> float:
    probs = classify_pairs(pairs, params, config)
    labels = np.array([p[2] for p in pairs])
    return float(((probs >= 0.5) == (labels == 1)).mean())


def pretrain_paraphrase(
    pair_dataset,
    params,
    config: EncoderConfig,
    lr: float = 1e-3,
    batch_size: int = 32,
    max_epochs: int = 50,
    patience: int = 5,
    seed: int = 0,
    dev_pairs=None,
    log_fn=None,
) -> dict:
    """Train the encoder on binary paraphrase classification.

    The classifier head reads the [CLS] contextual vector of the pair
    layout; training runs until held-out accuracy stops improving.  Returns
    the updated parameter dict (mutated in place).
    """
    if not pair_dataset:
        raise EmptyDataset("no paraphrase pairs")
    rng = np.random.default_rng(seed)
    if dev_pairs is None:
        n_dev = max(1, len(pair_dataset) // 10)
        order = rng.permutation(len(pair_dataset))
        dev_pairs = [pair_dataset[i] for i in order[:n_dev]]
        train_pairs = [pair_dataset[i] for i in order[n_dev:]]
    else:
        train_pairs = list(pair_dataset)
    if not train_pairs:
        raise EmptyDataset("no training pairs left after the dev split")
    layouts = [
        build_pair_input(corpus.tokenize(a), corpus.tokenize(b))
        for a, b, *_ in train_pairs
    ]
    labels = np.array([p[2] for p in train_pairs], dtype=np.float64)
    adam = optim.Adam()
    best_acc = -1.0
    stale = 0
    for epoch in range(max_epochs):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            enc = encode_batch([layouts[i] for i in idx], params, config)
            cls_vec = enc.token_vectors[:, 0, :]
            z = cls_vec @ params["para_w"] + params["para_b"][0]
            p = 0.5 * (np.tanh(0.5 * z) + 1.0)
            y = labels[idx]
            eps = 1e-12
            loss = float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())
            epoch_loss += loss * len(idx)
            dz = (p - y) / len(idx)
            dtok = np.zeros_like(enc.token_vectors)
            dtok[:, 0, :] = dz[:, None] * params["para_w"][None, :]
            grads = encode_backward(enc, params, config, dtok=dtok)
            grads["para_w"] = cls_vec.T @ dz
            grads["para_b"] = np.array([dz.sum()])
            adam.step(params, grads, {name: lr for name in grads})
        acc = pair_accuracy(dev_pairs, params, config)
        if log_fn:
            log_fn(
                {"epoch": epoch, "loss": epoch_loss / len(train_pairs), "dev_acc": acc}
            )
        if acc > best_acc:
            best_acc = acc
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return params


def grad_check(params, loss_fn, rng, samples_per_tensor: int = 3, step: float = 1e-5):
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` evaluates the loss against the current contents of
    ``params`` and returns (loss, grads).  A random subset of coordinates of
    every tensor is probed; the maximum relative error is returned.
    """
    _, grads = loss_fn()
    max_err = 0.0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        n = min(samples_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=n, replace=False):
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = loss_fn()
            flat[idx] = orig - step
            lm, _ = loss_fn()
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            analytic = gflat[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            max_err = max(max_err, err)
    return max_err
