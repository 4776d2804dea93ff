"""Noun-phrase scoring from image features, top-n selection, semantic NMS.

The classifier maps a global image feature through two fully-connected
layers (rectified linear between them) to a code vector, then scores each
noun-phrase class with an independent sigmoid head. Scored phrases are
pruned with a greedy keep-highest suppression pass in which two phrases
count as similar when their central nouns are synonyms (or plurals of
synonyms), or when their pair-encoder encodings sit closer than ``epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ConfigError, EmptyPhraseError, EmptyTrainingSetError, InputError, ShapeError
from .numerics import check_finite, relu, sigmoid
from . import serialization
from .artifacts import read_json, write_json
from .corpus import NounPhraseInventory, Phrase


@dataclass(frozen=True)
class ScoredNounPhrase:
    phrase: Phrase
    score: float
    class_id: int


# Ordered suffix rewrites used to singularize a head noun; exceptions are
# looked up first. Deliberately crude: inventories are short, frequent words.
DEFAULT_PLURAL_RULES = (("sses", "ss"), ("ies", "y"), ("s", ""))


@dataclass
class SynonymLexicon:
    """Disjoint synonym groups over singular head nouns, plus plural handling."""

    groups: tuple[frozenset[str], ...] = ()
    plural_exceptions: frozenset = frozenset()
    plural_rules: tuple = DEFAULT_PLURAL_RULES
    _group_of: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.groups = tuple(frozenset(g) for g in self.groups)
        self.plural_exceptions = frozenset(self.plural_exceptions)
        seen: dict[str, int] = {}
        for gi, group in enumerate(self.groups):
            for lemma in group:
                if lemma in seen:
                    raise InputError(f"lexicon groups are not disjoint: {lemma!r} repeats")
                seen[lemma] = gi
        self._group_of = seen

    def singularize(self, word: str) -> str:
        if word in self.plural_exceptions:
            return word
        for suffix, repl in self.plural_rules:
            if not word.endswith(suffix) or len(word) <= len(suffix):
                continue
            if suffix == "s" and (len(word) < 4 or word.endswith("ss")):
                continue
            return word[: -len(suffix)] + repl
        return word

    def synonyms(self, lemma_a: str, lemma_b: str) -> bool:
        if lemma_a == lemma_b:
            return True
        ga = self._group_of.get(lemma_a)
        return ga is not None and ga == self._group_of.get(lemma_b)

    @classmethod
    def empty(cls) -> "SynonymLexicon":
        return cls()

    @classmethod
    def from_dict(cls, obj: dict) -> "SynonymLexicon":
        return cls(
            groups=tuple(frozenset(g) for g in obj.get("groups", [])),
            plural_exceptions=frozenset(obj.get("plural_exceptions", [])),
        )

    @classmethod
    def from_file(cls, path) -> "SynonymLexicon":
        return cls.from_dict(read_json(path))

    def to_dict(self) -> dict:
        return {
            "groups": [sorted(g) for g in self.groups],
            "plural_exceptions": sorted(self.plural_exceptions),
        }


def central_noun(phrase, lexicon: SynonymLexicon) -> str:
    """Head noun of a phrase: its last token, singularized."""
    phrase = tuple(phrase)
    if not phrase:
        raise EmptyPhraseError("cannot take the central noun of an empty phrase")
    return lexicon.singularize(phrase[-1])


@dataclass
class NpClassifierParams:
    fc1_w: np.ndarray          # (hidden, d_g)
    fc1_b: np.ndarray          # (hidden,)
    fc2_w: np.ndarray          # (code, hidden)
    fc2_b: np.ndarray          # (code,)
    class_weights: np.ndarray  # (K, code)

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "fc1_w": self.fc1_w,
            "fc1_b": self.fc1_b,
            "fc2_w": self.fc2_w,
            "fc2_b": self.fc2_b,
            "class_weights": self.class_weights,
        }


def np_scores(v: np.ndarray, params: NpClassifierParams) -> np.ndarray:
    """Per-class sigmoid scores for one global feature vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.fc1_w.shape[1],):
        raise ShapeError(f"feature of shape {v.shape}, classifier expects ({params.fc1_w.shape[1]},)")
    hidden = relu(params.fc1_w @ v + params.fc1_b)
    code = params.fc2_w @ hidden + params.fc2_b
    return check_finite(sigmoid(params.class_weights @ code), "noun-phrase scores")


class NounPhraseClassifier(BaseEstimator):
    """Multi-label scorer over the noun-phrase inventory classes."""

    def __init__(
        self,
        n_classes: int | None = None,
        hidden_dim: int = 16,
        code_dim: int = 16,
        learning_rate: float = 1e-4,
        epochs: int = 10,
        seed: int = 0,
    ):
        self.n_classes = n_classes
        self.hidden_dim = hidden_dim
        self.code_dim = code_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    def _params(self) -> NpClassifierParams:
        params = getattr(self, "params_", None)
        if params is None:
            raise NotFittedError("this NounPhraseClassifier has not been fitted or loaded")
        return params

    def _loss_and_grads(self, params: NpClassifierParams, v, target: np.ndarray):
        pre1 = params.fc1_w @ v + params.fc1_b
        hidden = relu(pre1)
        code = params.fc2_w @ hidden + params.fc2_b
        logits = params.class_weights @ code
        # summed stable binary cross-entropy over all classes
        loss = float(np.sum(np.logaddexp(0.0, logits) - target * logits))
        dlogits = sigmoid(logits) - target
        dcode = params.class_weights.T @ dlogits
        dhidden = params.fc2_w.T @ dcode
        dpre1 = dhidden * (pre1 > 0)
        grads = {
            "class_weights": np.outer(dlogits, code),
            "fc2_w": np.outer(dcode, hidden),
            "fc2_b": dcode,
            "fc1_w": np.outer(dpre1, v),
            "fc1_b": dpre1,
        }
        return loss, grads

    def fit(self, features, label_sets):
        """Train on (N, d_g) features and one iterable of class ids per row."""
        if self.n_classes is None or self.n_classes < 1:
            raise ConfigError("n_classes must be a positive integer")
        if self.learning_rate < 0 or self.epochs < 0:
            raise ConfigError("learning_rate and epochs must be >= 0")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise EmptyTrainingSetError("need a non-empty (N, d_g) feature matrix")
        label_sets = [frozenset(int(k) for k in labels) for labels in label_sets]
        if len(label_sets) != features.shape[0]:
            raise InputError("features and label_sets disagree in length")
        for labels in label_sets:
            for k in labels:
                if not 0 <= k < self.n_classes:
                    raise InputError(f"label {k} outside [0, {self.n_classes})")

        rng = np.random.default_rng(self.seed)
        d_g = features.shape[1]

        def uniform(shape, fan_in):
            s = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-s, s, size=shape)

        params = NpClassifierParams(
            fc1_w=uniform((self.hidden_dim, d_g), d_g),
            fc1_b=np.zeros(self.hidden_dim),
            fc2_w=uniform((self.code_dim, self.hidden_dim), self.hidden_dim),
            fc2_b=np.zeros(self.code_dim),
            class_weights=uniform((self.n_classes, self.code_dim), self.code_dim),
        )
        targets = np.zeros((features.shape[0], self.n_classes))
        for row, labels in enumerate(label_sets):
            for k in labels:
                targets[row, k] = 1.0

        trace = []
        lr = self.learning_rate
        for _ in range(self.epochs):
            order = rng.permutation(features.shape[0])
            total = 0.0
            for idx in order:
                loss, grads = self._loss_and_grads(params, features[idx], targets[idx])
                total += loss
                if lr != 0.0:
                    tensors = params.tensors()
                    for name, g in grads.items():
                        tensors[name] -= lr * g
            trace.append(total / features.shape[0])
        self.params_ = params
        self.loss_trace_ = trace
        self.feature_dim_ = d_g
        return self

    def scores(self, v) -> np.ndarray:
        return np_scores(v, self._params())

    def predict_proba(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            return self.scores(features)
        return np.vstack([self.scores(row) for row in features])

    def predict(self, features, score_threshold: float = 0.5) -> np.ndarray:
        return self.predict_proba(features) >= score_threshold

    def save(self, path, metadata: dict | None = None) -> None:
        params = self._params()
        serialization.save_tensors(path, params.tensors())
        sidecar = {
            "kind": "nounphrase",
            "format_version": serialization.TENSOR_VERSION,
            "n_classes": self.n_classes,
            "hidden_dim": self.hidden_dim,
            "code_dim": self.code_dim,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "feature_dim": getattr(self, "feature_dim_", None),
        }
        sidecar.update(metadata or {})
        write_json(f"{path}.json", sidecar)

    @classmethod
    def load(cls, path) -> "NounPhraseClassifier":
        sidecar = read_json(f"{path}.json")
        if sidecar.get("kind") != "nounphrase":
            raise InputError(f"{path}: not a noun-phrase model")
        clf = cls(
            n_classes=sidecar["n_classes"],
            hidden_dim=sidecar["hidden_dim"],
            code_dim=sidecar["code_dim"],
            learning_rate=sidecar["learning_rate"],
            epochs=sidecar["epochs"],
            seed=sidecar["seed"],
        )
        tensors = serialization.load_tensors(path)
        clf.params_ = NpClassifierParams(
            fc1_w=tensors["fc1_w"].copy(),
            fc1_b=tensors["fc1_b"].copy(),
            fc2_w=tensors["fc2_w"].copy(),
            fc2_b=tensors["fc2_b"].copy(),
            class_weights=tensors["class_weights"].copy(),
        )
        clf.feature_dim_ = sidecar.get("feature_dim")
        clf.sidecar_ = sidecar
        return clf


def select_top_n(scores, inventory: NounPhraseInventory, n: int) -> list[ScoredNounPhrase]:
    """The n best-scoring classes, score-descending, ties to the lower id."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(inventory),):
        raise ShapeError(f"{scores.shape[0]} scores for an inventory of {len(inventory)} classes")
    order = sorted(range(len(inventory)), key=lambda k: (-scores[k], k))
    return [
        ScoredNounPhrase(phrase=inventory.phrases[k], score=float(scores[k]), class_id=k)
        for k in order[:n]
    ]


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def semantic_nms_clusters(
    candidates,
    lexicon: SynonymLexicon,
    cmodule,
    ctx=None,
    epsilon: float = 0.002,
):
    """Greedy suppression clusters: (kept phrase, list of suppressed phrases).

    Candidates are visited best-score-first; one is suppressed when it is
    similar to an already-kept phrase, where similar means synonymic central
    nouns, or a summed normalized-encoding distance (left-encoder part plus
    right-encoder part) below ``epsilon``.
    """
    if epsilon < 0:
        raise InputError(f"epsilon must be >= 0, got {epsilon}")
    order = sorted(candidates, key=lambda c: (-c.score, c.class_id, c.phrase))
    nouns = {}
    encodings = {}
    for cand in order:
        nouns[cand] = central_noun(cand.phrase, lexicon)
        encodings[cand] = (
            _unit(cmodule.left_encoding(cand.phrase, ctx)),
            _unit(cmodule.right_encoding(cand.phrase, ctx)),
        )

    def similar(a: ScoredNounPhrase, b: ScoredNounPhrase) -> bool:
        if lexicon.synonyms(nouns[a], nouns[b]):
            return True
        (la, ra), (lb, rb) = encodings[a], encodings[b]
        distance = float(np.linalg.norm(la - lb)) + float(np.linalg.norm(ra - rb))
        return distance < epsilon

    clusters: list[tuple[ScoredNounPhrase, list[ScoredNounPhrase]]] = []
    for cand in order:
        for kept, suppressed in clusters:
            if similar(cand, kept):
                suppressed.append(cand)
                break
        else:
            clusters.append((cand, []))
    return clusters


def semantic_nms(
    candidates,
    lexicon: SynonymLexicon,
    cmodule,
    ctx=None,
    epsilon: float = 0.002,
) -> list[ScoredNounPhrase]:
    """Candidates that survive suppression, best score first."""
    return [kept for kept, _ in semantic_nms_clusters(candidates, lexicon, cmodule, ctx, epsilon)]
