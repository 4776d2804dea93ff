"""Phrase encoders.

The main encoder is a two-level LSTM. At each token the attention cell reads
the word embedding, the global image feature and the previous language state;
its output queries an attention pool over the regional image features, and
the attended vector together with the attention state drives the language
cell. The final language state is the phrase encoding.

    h_att[t] = lstm_att(x[t], v, h_lan[t-1]; h_att[t-1])
    a[t]     = sum_i softmax_i(u_i . (P h_att[t])) * u_i
    h_lan[t] = lstm_lan(a[t], h_att[t]; h_lan[t-1])
    z        = h_lan[T]

Both hidden and cell states start at zero. A cheap order-invariant mean
encoder is included as a baseline for tests and ablations. All forward
functions can return a cache that the matching ``*_backward`` function turns
into exact reverse-mode parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPhraseError, InvalidTokenError, ShapeError
from .numerics import check_finite, sigmoid, softmax


@dataclass
class ImageContext:
    """Global feature vector ``v`` and regional feature matrix ``u`` (M x d_r)."""

    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.v.ndim != 1 or self.u.ndim != 2 or self.u.shape[0] < 1:
            raise ShapeError(
                f"image context needs a vector v and an (M, d_r) matrix u, "
                f"got {self.v.shape} / {self.u.shape}"
            )
        check_finite(self.v, "image context v")
        check_finite(self.u, "image context u")

    @classmethod
    def zeros(cls, d_g: int, d_r: int, n_regions: int = 1) -> "ImageContext":
        return cls(v=np.zeros(d_g), u=np.zeros((n_regions, d_r)))


@dataclass
class EncoderParams:
    """Weights of the two-level encoder.

    Gate rows of the recurrent weight matrices are packed input, forget,
    output, candidate. The attention cell consumes [x; v; h_lan_prev;
    h_att_prev], the language cell [a; h_att; h_lan_prev].
    """

    embedding: np.ndarray  # (V, E)
    att_w: np.ndarray      # (4H, E + G + 2H)
    att_b: np.ndarray      # (4H,)
    lan_w: np.ndarray      # (4H, R + 2H)
    lan_b: np.ndarray      # (4H,)
    attn_proj: np.ndarray  # (R, H)
    hidden_dim: int

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def d_r(self) -> int:
        return self.attn_proj.shape[0]

    @property
    def d_g(self) -> int:
        return self.att_w.shape[1] - self.embed_dim - 2 * self.hidden_dim

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "embedding": self.embedding,
            "att_w": self.att_w,
            "att_b": self.att_b,
            "lan_w": self.lan_w,
            "lan_b": self.lan_b,
            "attn_proj": self.attn_proj,
        }

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors().items()}


def init_encoder_params(
    rng: np.random.Generator,
    vocab_size: int,
    embed_dim: int,
    d_g: int,
    d_r: int,
    hidden_dim: int,
) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    h = hidden_dim
    return EncoderParams(
        embedding=uniform((vocab_size, embed_dim), embed_dim),
        att_w=uniform((4 * h, embed_dim + d_g + 2 * h), embed_dim + d_g + 2 * h),
        att_b=np.zeros(4 * h),
        lan_w=uniform((4 * h, d_r + 2 * h), d_r + 2 * h),
        lan_b=np.zeros(4 * h),
        attn_proj=uniform((d_r, h), h),
        hidden_dim=h,
    )


def _lstm_forward(w, b, full_in, c_prev, h):
    pre = w @ full_in + b
    i = sigmoid(pre[:h])
    f = sigmoid(pre[h : 2 * h])
    o = sigmoid(pre[2 * h : 3 * h])
    g = np.tanh(pre[3 * h :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h_out = o * tc
    return h_out, c, (full_in, i, f, o, g, c_prev, tc)


def _lstm_backward(w, cache, dh, dc, h):
    full_in, i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * c_prev
    dc_prev = dc_total * f
    d_pre = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ]
    )
    dw = np.outer(d_pre, full_in)
    db = d_pre
    d_full_in = w.T @ d_pre
    return d_full_in, dc_prev, dw, db


def _check_phrase(phrase_ids, vocab_size: int) -> list[int]:
    ids = list(phrase_ids)
    if not ids:
        raise EmptyPhraseError("cannot encode an empty phrase")
    for t in ids:
        if not 0 <= int(t) < vocab_size:
            raise InvalidTokenError(f"token id {t} outside vocabulary of size {vocab_size}")
    return [int(t) for t in ids]


def encode_two_level(phrase_ids, ctx: ImageContext, params: EncoderParams, want_cache: bool = False):
    """Encode a token-id sequence; returns ``z`` or ``(z, cache)``."""
    ids = _check_phrase(phrase_ids, params.vocab_size)
    h = params.hidden_dim
    if ctx.v.shape[0] != params.d_g or ctx.u.shape[1] != params.d_r:
        raise ShapeError(
            f"context dims {ctx.v.shape[0]}/{ctx.u.shape[1]} do not match "
            f"encoder dims {params.d_g}/{params.d_r}"
        )
    h_att = np.zeros(h)
    c_att = np.zeros(h)
    h_lan = np.zeros(h)
    c_lan = np.zeros(h)
    steps = []
    for tok in ids:
        x = params.embedding[tok]
        att_in = np.concatenate([x, ctx.v, h_lan, h_att])
        h_att, c_att, att_cache = _lstm_forward(params.att_w, params.att_b, att_in, c_att, h)
        query = params.attn_proj @ h_att
        logits = ctx.u @ query
        alpha = softmax(logits)
        a = alpha @ ctx.u
        lan_in = np.concatenate([a, h_att, h_lan])
        h_lan, c_lan, lan_cache = _lstm_forward(params.lan_w, params.lan_b, lan_in, c_lan, h)
        if want_cache:
            steps.append((tok, att_cache, lan_cache, alpha, h_att))
    z = check_finite(h_lan.copy(), "phrase encoding")
    if not want_cache:
        return z
    return z, {"steps": steps, "ctx": ctx, "params": params}


def encode_two_level_backward(cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss with upstream derivative ``dz``."""
    params: EncoderParams = cache["params"]
    ctx: ImageContext = cache["ctx"]
    h = params.hidden_dim
    e = params.embed_dim
    g_dim = params.d_g
    r = params.d_r
    grads = params.zero_grads()

    dh_lan = np.asarray(dz, dtype=np.float64).copy()
    dc_lan = np.zeros(h)
    dh_att = np.zeros(h)
    dc_att = np.zeros(h)
    for tok, att_cache, lan_cache, alpha, h_att_t in reversed(cache["steps"]):
        d_lan_in, dc_lan, dw_lan, db_lan = _lstm_backward(params.lan_w, lan_cache, dh_lan, dc_lan, h)
        grads["lan_w"] += dw_lan
        grads["lan_b"] += db_lan
        da = d_lan_in[:r]
        dh_att_total = dh_att + d_lan_in[r : r + h]
        dh_lan = d_lan_in[r + h :]

        # attention: a = alpha @ u, alpha = softmax(u @ (P h_att))
        dalpha = ctx.u @ da
        dlogits = alpha * (dalpha - float(alpha @ dalpha))
        dquery = ctx.u.T @ dlogits
        grads["attn_proj"] += np.outer(dquery, h_att_t)
        dh_att_total = dh_att_total + params.attn_proj.T @ dquery

        d_att_in, dc_att, dw_att, db_att = _lstm_backward(
            params.att_w, att_cache, dh_att_total, dc_att, h
        )
        grads["att_w"] += dw_att
        grads["att_b"] += db_att
        grads["embedding"][tok] += d_att_in[:e]
        dh_lan = dh_lan + d_att_in[e + g_dim : e + g_dim + h]
        dh_att = d_att_in[e + g_dim + h :]
    return grads


@dataclass
class MeanEncoderParams:
    """Baseline encoder: a linear map of the mean embedding."""

    embedding: np.ndarray  # (V, E)
    proj: np.ndarray       # (H, E)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"embedding": self.embedding, "proj": self.proj}

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors().items()}


def init_mean_encoder_params(
    rng: np.random.Generator, vocab_size: int, embed_dim: int, hidden_dim: int
) -> MeanEncoderParams:
    s_e = 1.0 / np.sqrt(embed_dim)
    return MeanEncoderParams(
        embedding=rng.uniform(-s_e, s_e, size=(vocab_size, embed_dim)),
        proj=rng.uniform(-s_e, s_e, size=(hidden_dim, embed_dim)),
    )


def encode_mean(phrase_ids, params: MeanEncoderParams, want_cache: bool = False):
    ids = _check_phrase(phrase_ids, params.vocab_size)
    mean = params.embedding[ids].mean(axis=0)
    z = check_finite(params.proj @ mean, "phrase encoding")
    if not want_cache:
        return z
    return z, {"ids": ids, "mean": mean, "params": params}


def encode_mean_backward(cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    params: MeanEncoderParams = cache["params"]
    ids = cache["ids"]
    grads = params.zero_grads()
    dz = np.asarray(dz, dtype=np.float64)
    grads["proj"] += np.outer(dz, cache["mean"])
    dmean = params.proj.T @ dz
    per_token = dmean / len(ids)
    for tok in ids:
        grads["embedding"][tok] += per_token
    return grads
