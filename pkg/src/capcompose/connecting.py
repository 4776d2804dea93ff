"""Connecting-phrase classifier for ordered phrase pairs.

Given an ordered pair of phrases, two encoders (independent by default, one
per side of the pair) produce encodings that are combined through two linear
maps and a softmax over the connector classes plus one virtual negative
class. The virtual class winning the argmax marks the pair unconnectable.

    scores = softmax(W_combine (W_l z_left + W_r z_right))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import CompositionTriple, Vocabulary
from .encoder import (
    EncoderParams,
    ImageContext,
    encode_two_level,
    encode_two_level_backward,
    init_encoder_params,
)
from .errors import (
    ConfigError,
    EmptyPhraseError,
    EmptyTrainingSetError,
    InputError,
)
from .numerics import check_finite, log_softmax, softmax
from . import serialization
from .artifacts import read_json, write_json


@dataclass
class CModuleParams:
    left_encoder: EncoderParams
    right_encoder: EncoderParams
    w_l: np.ndarray        # (H, H)
    w_r: np.ndarray        # (H, H)
    w_combine: np.ndarray  # (L + 1, H)
    share_encoders: bool

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"w_l": self.w_l, "w_r": self.w_r, "w_combine": self.w_combine}
        if self.share_encoders:
            for name, t in self.left_encoder.tensors().items():
                out[f"enc/{name}"] = t
        else:
            for name, t in self.left_encoder.tensors().items():
                out[f"left/{name}"] = t
            for name, t in self.right_encoder.tensors().items():
                out[f"right/{name}"] = t
        return out


def combine_scores(z_left, z_right, w_l, w_r, w_combine) -> np.ndarray:
    """Softmax over connector classes from the two phrase encodings."""
    return softmax(w_combine @ (w_l @ z_left + w_r @ z_right))


def _encoder_from_tensors(tensors: dict[str, np.ndarray], prefix: str, hidden_dim: int) -> EncoderParams:
    def take(name):
        return tensors[f"{prefix}{name}"].copy()

    return EncoderParams(
        embedding=take("embedding"),
        att_w=take("att_w"),
        att_b=take("att_b"),
        lan_w=take("lan_w"),
        lan_b=take("lan_b"),
        attn_proj=take("attn_proj"),
        hidden_dim=hidden_dim,
    )


class ConnectingClassifier(BaseEstimator):
    """Scores every connector class for an ordered phrase pair.

    Parameters mirror the training configuration: toy-scale dims by default,
    plain SGD with a fixed learning rate, shuffling reseeded from ``seed``
    each run so fits are reproducible bit for bit.
    """

    def __init__(
        self,
        vocab: Vocabulary | None = None,
        n_connector_classes: int | None = None,
        hidden_dim: int = 16,
        embed_dim: int = 16,
        d_g: int = 4,
        d_r: int = 4,
        n_regions: int = 1,
        learning_rate: float = 1e-4,
        epochs: int = 10,
        seed: int = 0,
        share_encoders: bool = False,
    ):
        self.vocab = vocab
        self.n_connector_classes = n_connector_classes
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.d_g = d_g
        self.d_r = d_r
        self.n_regions = n_regions
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.share_encoders = share_encoders

    @property
    def neg_class_id(self) -> int:
        return self.n_connector_classes

    def _validate_config(self):
        if self.vocab is None:
            raise ConfigError("a Vocabulary is required")
        if not self.n_connector_classes or self.n_connector_classes < 1:
            raise ConfigError("n_connector_classes must be a positive integer")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def _zero_ctx(self) -> ImageContext:
        return ImageContext.zeros(self.d_g, self.d_r, self.n_regions)

    def _ctx_for(self, image_id, contexts, fallback):
        if contexts is None:
            return fallback
        return contexts.get(image_id, fallback)

    def _params(self) -> CModuleParams:
        params = getattr(self, "params_", None)
        if params is None:
            raise NotFittedError("this ConnectingClassifier has not been fitted or loaded")
        return params

    def _init_params(self, rng: np.random.Generator) -> CModuleParams:
        vocab_size = len(self.vocab)
        left = init_encoder_params(
            rng, vocab_size, self.embed_dim, self.d_g, self.d_r, self.hidden_dim
        )
        right = (
            left
            if self.share_encoders
            else init_encoder_params(
                rng, vocab_size, self.embed_dim, self.d_g, self.d_r, self.hidden_dim
            )
        )
        h = self.hidden_dim
        s = 1.0 / np.sqrt(h)
        return CModuleParams(
            left_encoder=left,
            right_encoder=right,
            w_l=rng.uniform(-s, s, size=(h, h)),
            w_r=rng.uniform(-s, s, size=(h, h)),
            w_combine=rng.uniform(-s, s, size=(self.n_connector_classes + 1, h)),
            share_encoders=self.share_encoders,
        )

    def _loss_and_grads(self, params: CModuleParams, left_ids, right_ids, label, ctx):
        z_l, cache_l = encode_two_level(left_ids, ctx, params.left_encoder, want_cache=True)
        z_r, cache_r = encode_two_level(right_ids, ctx, params.right_encoder, want_cache=True)
        combined = params.w_l @ z_l + params.w_r @ z_r
        logits = params.w_combine @ combined
        logp = log_softmax(logits)
        loss = float(check_finite(-logp[label], "connecting loss"))

        dlogits = np.exp(logp)
        dlogits[label] -= 1.0
        grads = {
            "w_combine": np.outer(dlogits, combined),
        }
        dcombined = params.w_combine.T @ dlogits
        grads["w_l"] = np.outer(dcombined, z_l)
        grads["w_r"] = np.outer(dcombined, z_r)
        dz_l = params.w_l.T @ dcombined
        dz_r = params.w_r.T @ dcombined
        left_grads = encode_two_level_backward(cache_l, dz_l)
        right_grads = encode_two_level_backward(cache_r, dz_r)
        if params.share_encoders:
            for name, g in left_grads.items():
                grads[f"enc/{name}"] = g + right_grads[name]
        else:
            for name, g in left_grads.items():
                grads[f"left/{name}"] = g
            for name, g in right_grads.items():
                grads[f"right/{name}"] = g
        return loss, grads

    def example_loss(self, triple: CompositionTriple, ctx: ImageContext | None = None) -> float:
        """Cross-entropy of a single example under the fitted parameters."""
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        loss, _ = self._loss_and_grads(
            params, self.vocab.ids(triple.left), self.vocab.ids(triple.right), triple.middle_class, ctx
        )
        return loss

    def example_loss_and_grads(self, triple: CompositionTriple, ctx: ImageContext | None = None):
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        return self._loss_and_grads(
            params, self.vocab.ids(triple.left), self.vocab.ids(triple.right), triple.middle_class, ctx
        )

    def fit(self, triples, contexts=None):
        """SGD over composition triples; ``contexts`` maps image ids to features."""
        self._validate_config()
        triples = list(triples)
        if not triples:
            raise EmptyTrainingSetError("no composition triples to train on")
        n_total = self.n_connector_classes + 1
        for t in triples:
            if not 0 <= t.middle_class < n_total:
                raise InputError(f"middle_class {t.middle_class} outside [0, {n_total})")
            if not t.left or not t.right:
                raise EmptyPhraseError("composition triples need non-empty left and right phrases")

        rng = np.random.default_rng(self.seed)
        params = self._init_params(rng)
        zero = self._zero_ctx()
        prepared = [
            (
                self.vocab.ids(t.left),
                self.vocab.ids(t.right),
                t.middle_class,
                self._ctx_for(t.image_id, contexts, zero),
            )
            for t in triples
        ]

        trace = []
        lr = self.learning_rate
        for _ in range(self.epochs):
            order = rng.permutation(len(prepared))
            total = 0.0
            for idx in order:
                left_ids, right_ids, label, ctx = prepared[idx]
                loss, grads = self._loss_and_grads(params, left_ids, right_ids, label, ctx)
                total += loss
                if lr != 0.0:
                    tensors = params.tensors()
                    for name, g in grads.items():
                        tensors[name] -= lr * g
            trace.append(total / len(prepared))
        self.params_ = params
        self.loss_trace_ = trace
        return self

    def connect_scores(self, left_tokens, right_tokens, ctx: ImageContext | None = None) -> np.ndarray:
        """Probability over the L+1 connector classes for the ordered pair."""
        params = self._params()
        if not tuple(left_tokens) or not tuple(right_tokens):
            raise EmptyPhraseError("cannot score an empty phrase")
        ctx = ctx if ctx is not None else self._zero_ctx()
        z_l = encode_two_level(self.vocab.ids(left_tokens), ctx, params.left_encoder)
        z_r = encode_two_level(self.vocab.ids(right_tokens), ctx, params.right_encoder)
        return combine_scores(z_l, z_r, params.w_l, params.w_r, params.w_combine)

    def best_connections(self, left_tokens, right_tokens, ctx: ImageContext | None = None, k: int = 1):
        """Top-k real connector classes, or [] when the pair is unconnectable."""
        if k < 1:
            raise InputError(f"k must be >= 1, got {k}")
        dist = self.connect_scores(left_tokens, right_tokens, ctx)
        if int(np.argmax(dist)) == self.neg_class_id:
            return []
        real = dist[:-1]
        order = sorted(range(len(real)), key=lambda j: (-real[j], j))
        return [(j, float(real[j])) for j in order[:k]]

    def left_encoding(self, tokens, ctx: ImageContext | None = None) -> np.ndarray:
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        return encode_two_level(self.vocab.ids(tokens), ctx, params.left_encoder)

    def right_encoding(self, tokens, ctx: ImageContext | None = None) -> np.ndarray:
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        return encode_two_level(self.vocab.ids(tokens), ctx, params.right_encoder)

    def predict_proba(self, pairs, contexts=None) -> np.ndarray:
        """Row-stacked connect_scores for pairs or CompositionTriples."""
        zero = self._zero_ctx()
        rows = []
        for item in pairs:
            if isinstance(item, CompositionTriple):
                ctx = self._ctx_for(item.image_id, contexts, zero)
                rows.append(self.connect_scores(item.left, item.right, ctx))
            else:
                left, right = item
                rows.append(self.connect_scores(left, right, zero))
        return np.vstack(rows)

    def predict(self, pairs, contexts=None) -> np.ndarray:
        return np.argmax(self.predict_proba(pairs, contexts), axis=1)

    def save(self, path, metadata: dict | None = None) -> None:
        """Write the tensor file plus a ``path + '.json'`` sidecar."""
        params = self._params()
        serialization.save_tensors(path, params.tensors())
        sidecar = {
            "kind": "connecting",
            "format_version": serialization.TENSOR_VERSION,
            "n_connector_classes": self.n_connector_classes,
            "share_encoders": self.share_encoders,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "d_g": self.d_g,
            "d_r": self.d_r,
            "n_regions": self.n_regions,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "vocab_size": len(self.vocab),
        }
        sidecar.update(metadata or {})
        write_json(f"{path}.json", sidecar)

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "ConnectingClassifier":
        sidecar = read_json(f"{path}.json")
        if sidecar.get("kind") != "connecting":
            raise InputError(f"{path}: not a connecting model")
        if sidecar["vocab_size"] != len(vocab):
            raise InputError(
                f"{path}: model was trained with a vocabulary of size "
                f"{sidecar['vocab_size']}, got {len(vocab)}"
            )
        clf = cls(
            vocab=vocab,
            n_connector_classes=sidecar["n_connector_classes"],
            hidden_dim=sidecar["hidden_dim"],
            embed_dim=sidecar["embed_dim"],
            d_g=sidecar["d_g"],
            d_r=sidecar["d_r"],
            n_regions=sidecar["n_regions"],
            learning_rate=sidecar["learning_rate"],
            epochs=sidecar["epochs"],
            seed=sidecar["seed"],
            share_encoders=sidecar["share_encoders"],
        )
        tensors = serialization.load_tensors(path)
        h = clf.hidden_dim
        if clf.share_encoders:
            enc = _encoder_from_tensors(tensors, "enc/", h)
            left = right = enc
        else:
            left = _encoder_from_tensors(tensors, "left/", h)
            right = _encoder_from_tensors(tensors, "right/", h)
        clf.params_ = CModuleParams(
            left_encoder=left,
            right_encoder=right,
            w_l=tensors["w_l"].copy(),
            w_r=tensors["w_r"].copy(),
            w_combine=tensors["w_combine"].copy(),
            share_encoders=clf.share_encoders,
        )
        clf.loss_trace_ = []
        clf.sidecar_ = sidecar
        return clf
