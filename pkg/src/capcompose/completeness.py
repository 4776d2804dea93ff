"""Completeness classifier: the probability that a phrase is a full caption.

A phrase is encoded with the two-level encoder and squashed through a single
sigmoid head. ``is_complete`` thresholds the probability (default 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import CompletenessExample, Vocabulary
from .encoder import (
    EncoderParams,
    ImageContext,
    encode_two_level,
    encode_two_level_backward,
    init_encoder_params,
)
from .errors import ConfigError, EmptyPhraseError, EmptyTrainingSetError
from .numerics import check_finite, sigmoid
from . import serialization
from .artifacts import read_json, write_json
from .connecting import _encoder_from_tensors

_PROB_EPS = 1e-15


@dataclass
class EModuleParams:
    encoder: EncoderParams
    w_cp: np.ndarray  # (H,)
    threshold: float

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"w_cp": self.w_cp}
        for name, t in self.encoder.tensors().items():
            out[f"enc/{name}"] = t
        return out


def completeness_probability(z: np.ndarray, w_cp: np.ndarray) -> float:
    """sigma(w_cp . z), clipped into the open unit interval."""
    p = sigmoid(float(w_cp @ z))
    return float(np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS))


class CompletenessClassifier(BaseEstimator):
    def __init__(
        self,
        vocab: Vocabulary | None = None,
        hidden_dim: int = 16,
        embed_dim: int = 16,
        d_g: int = 4,
        d_r: int = 4,
        n_regions: int = 1,
        learning_rate: float = 1e-4,
        epochs: int = 10,
        seed: int = 0,
        threshold: float = 0.5,
    ):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.d_g = d_g
        self.d_r = d_r
        self.n_regions = n_regions
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.threshold = threshold

    def _validate_config(self):
        if self.vocab is None:
            raise ConfigError("a Vocabulary is required")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie strictly in (0, 1), got {self.threshold}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def _zero_ctx(self) -> ImageContext:
        return ImageContext.zeros(self.d_g, self.d_r, self.n_regions)

    def _params(self) -> EModuleParams:
        params = getattr(self, "params_", None)
        if params is None:
            raise NotFittedError("this CompletenessClassifier has not been fitted or loaded")
        return params

    def _loss_and_grads(self, params: EModuleParams, ids, label: bool, ctx):
        z, cache = encode_two_level(ids, ctx, params.encoder, want_cache=True)
        logit = float(params.w_cp @ z)
        y = 1.0 if label else 0.0
        # stable binary cross-entropy: softplus(logit) - y * logit
        loss = float(check_finite(np.logaddexp(0.0, logit) - y * logit, "completeness loss"))
        dlogit = sigmoid(logit) - y
        grads = {"w_cp": dlogit * z}
        dz = dlogit * params.w_cp
        for name, g in encode_two_level_backward(cache, dz).items():
            grads[f"enc/{name}"] = g
        return loss, grads

    def example_loss(self, example: CompletenessExample, ctx: ImageContext | None = None) -> float:
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        loss, _ = self._loss_and_grads(params, self.vocab.ids(example.phrase), example.label, ctx)
        return loss

    def example_loss_and_grads(self, example: CompletenessExample, ctx: ImageContext | None = None):
        params = self._params()
        ctx = ctx if ctx is not None else self._zero_ctx()
        return self._loss_and_grads(params, self.vocab.ids(example.phrase), example.label, ctx)

    def fit(self, examples, contexts=None):
        self._validate_config()
        examples = list(examples)
        if not examples:
            raise EmptyTrainingSetError("no completeness examples to train on")
        for ex in examples:
            if not ex.phrase:
                raise EmptyPhraseError("completeness examples need non-empty phrases")

        rng = np.random.default_rng(self.seed)
        encoder = init_encoder_params(
            rng, len(self.vocab), self.embed_dim, self.d_g, self.d_r, self.hidden_dim
        )
        s = 1.0 / np.sqrt(self.hidden_dim)
        params = EModuleParams(
            encoder=encoder,
            w_cp=rng.uniform(-s, s, size=self.hidden_dim),
            threshold=self.threshold,
        )
        zero = self._zero_ctx()
        prepared = [
            (
                self.vocab.ids(ex.phrase),
                ex.label,
                zero if contexts is None else contexts.get(ex.image_id, zero),
            )
            for ex in examples
        ]

        trace = []
        lr = self.learning_rate
        for _ in range(self.epochs):
            order = rng.permutation(len(prepared))
            total = 0.0
            for idx in order:
                ids, label, ctx = prepared[idx]
                loss, grads = self._loss_and_grads(params, ids, label, ctx)
                total += loss
                if lr != 0.0:
                    tensors = params.tensors()
                    for name, g in grads.items():
                        tensors[name] -= lr * g
            trace.append(total / len(prepared))
        self.params_ = params
        self.loss_trace_ = trace
        return self

    def completeness(self, tokens, ctx: ImageContext | None = None) -> float:
        params = self._params()
        if not tuple(tokens):
            raise EmptyPhraseError("cannot evaluate an empty phrase")
        ctx = ctx if ctx is not None else self._zero_ctx()
        z = encode_two_level(self.vocab.ids(tokens), ctx, params.encoder)
        return completeness_probability(z, params.w_cp)

    def is_complete(self, tokens, ctx: ImageContext | None = None) -> bool:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie strictly in (0, 1), got {self.threshold}")
        return self.completeness(tokens, ctx) >= self.threshold

    def predict_proba(self, phrases, contexts=None) -> np.ndarray:
        zero = self._zero_ctx()
        out = []
        for item in phrases:
            if isinstance(item, CompletenessExample):
                ctx = zero if contexts is None else contexts.get(item.image_id, zero)
                out.append(self.completeness(item.phrase, ctx))
            else:
                out.append(self.completeness(item, zero))
        return np.asarray(out)

    def predict(self, phrases, contexts=None) -> np.ndarray:
        return self.predict_proba(phrases, contexts) >= self.threshold

    def save(self, path, metadata: dict | None = None) -> None:
        params = self._params()
        serialization.save_tensors(path, params.tensors())
        sidecar = {
            "kind": "completeness",
            "format_version": serialization.TENSOR_VERSION,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "d_g": self.d_g,
            "d_r": self.d_r,
            "n_regions": self.n_regions,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "threshold": self.threshold,
            "vocab_size": len(self.vocab),
        }
        sidecar.update(metadata or {})
        write_json(f"{path}.json", sidecar)

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "CompletenessClassifier":
        sidecar = read_json(f"{path}.json")
        if sidecar.get("kind") != "completeness":
            raise ConfigError(f"{path}: not a completeness model")
        if sidecar["vocab_size"] != len(vocab):
            raise ConfigError(
                f"{path}: model was trained with a vocabulary of size "
                f"{sidecar['vocab_size']}, got {len(vocab)}"
            )
        clf = cls(
            vocab=vocab,
            hidden_dim=sidecar["hidden_dim"],
            embed_dim=sidecar["embed_dim"],
            d_g=sidecar["d_g"],
            d_r=sidecar["d_r"],
            n_regions=sidecar["n_regions"],
            learning_rate=sidecar["learning_rate"],
            epochs=sidecar["epochs"],
            seed=sidecar["seed"],
            threshold=sidecar["threshold"],
        )
        tensors = serialization.load_tensors(path)
        clf.params_ = EModuleParams(
            encoder=_encoder_from_tensors(tensors, "enc/", clf.hidden_dim),
            w_cp=tensors["w_cp"].copy(),
            threshold=clf.threshold,
        )
        clf.loss_trace_ = []
        clf.sidecar_ = sidecar
        return clf
