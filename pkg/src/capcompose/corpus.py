"""Corpus mining: vocabularies, phrase inventories, and training examples.

The input is a JSON Lines file with one object per caption:

    {"image_id": "...", "caption": "a man riding a horse",
     "parse": "(S (NP a man) (VP riding (NP a horse)))"}

Captions are lowercased and truncated to ``max_caption_len`` tokens. Base
noun-phrases are the innermost NP-labeled constituents. Walking up the parse
tree from those phrases yields, per caption, a binary merge plan whose
internal nodes record the connecting words between adjacent units; the plan
supplies classification examples for the connecting and completeness models.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorpusFormatError,
    EmptyCorpusError,
    InputError,
    NotEnoughPhrasesError,
)
from .trees import ParseNode, parse_penn, truncate_tree, validate_tree

UNK = "UNK"

Phrase = tuple[str, ...]
Span = tuple[int, int]


@dataclass
class ParsedCaption:
    image_id: str
    tokens: Phrase
    tree: ParseNode


@dataclass
class Vocabulary:
    """Token-to-id map over frequent, purely alphabetic tokens, plus UNK."""

    id_of: dict[str, int]
    unk_id: int
    min_count: int

    def __len__(self) -> int:
        return len(self.id_of)

    def id(self, token: str) -> int:
        return self.id_of.get(token, self.unk_id)

    def ids(self, tokens) -> list[int]:
        unk = self.unk_id
        return [self.id_of.get(t, unk) for t in tokens]

    @property
    def words(self) -> list[str]:
        out = [None] * len(self.id_of)
        for tok, i in self.id_of.items():
            out[i] = tok
        return out

    def to_dict(self) -> dict:
        return {"words": self.words, "unk_id": self.unk_id, "min_count": self.min_count}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        words = obj["words"]
        return cls(
            id_of={w: i for i, w in enumerate(words)},
            unk_id=int(obj["unk_id"]),
            min_count=int(obj["min_count"]),
        )


@dataclass
class NounPhraseInventory:
    """The distinct noun-phrase classes, most frequent first."""

    phrases: list[Phrase]
    min_occurrences: int
    _index: dict[Phrase, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.phrases = [tuple(p) for p in self.phrases]
        self._index = {p: i for i, p in enumerate(self.phrases)}

    def __len__(self) -> int:
        return len(self.phrases)

    def index_of(self, phrase) -> int:
        """Class id of a phrase, or -1 when it is not in the inventory."""
        return self._index.get(tuple(phrase), -1)

    def to_dict(self) -> dict:
        return {
            "phrases": [list(p) for p in self.phrases],
            "min_occurrences": self.min_occurrences,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NounPhraseInventory":
        return cls(
            phrases=[tuple(p) for p in obj["phrases"]],
            min_occurrences=int(obj["min_occurrences"]),
        )


@dataclass
class ConnectingInventory:
    """Connecting-phrase classes 0..L-1 plus the virtual negative class L.

    The empty phrase is a legitimate class: it joins adjacent noun-phrases
    that have no words between them.
    """

    phrases: list[Phrase]
    _index: dict[Phrase, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.phrases = [tuple(p) for p in self.phrases]
        if len(set(self.phrases)) != len(self.phrases):
            raise InputError("connecting inventory has duplicate entries")
        self._index = {p: i for i, p in enumerate(self.phrases)}

    @property
    def neg_id(self) -> int:
        return len(self.phrases)

    @property
    def n_classes(self) -> int:
        """Real classes plus the virtual negative class."""
        return len(self.phrases) + 1

    def __len__(self) -> int:
        return len(self.phrases)

    def index_of(self, phrase) -> int:
        return self._index.get(tuple(phrase), -1)

    def to_dict(self) -> dict:
        return {"phrases": [list(p) for p in self.phrases]}

    @classmethod
    def from_dict(cls, obj: dict) -> "ConnectingInventory":
        return cls(phrases=[tuple(p) for p in obj["phrases"]])


@dataclass
class CompositionTriple:
    """One connecting-classification example: left and right phrase plus class."""

    left: Phrase
    right: Phrase
    middle_class: int
    image_id: str

    def to_dict(self) -> dict:
        return {
            "left": list(self.left),
            "right": list(self.right),
            "middle_class": self.middle_class,
            "image_id": self.image_id,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CompositionTriple":
        return cls(tuple(obj["left"]), tuple(obj["right"]), int(obj["middle_class"]), obj["image_id"])


@dataclass
class CompletenessExample:
    phrase: Phrase
    label: bool
    image_id: str

    def to_dict(self) -> dict:
        return {"phrase": list(self.phrase), "label": self.label, "image_id": self.image_id}

    @classmethod
    def from_dict(cls, obj: dict) -> "CompletenessExample":
        return cls(tuple(obj["phrase"]), bool(obj["label"]), obj["image_id"])


@dataclass
class MiningStats:
    captions_used: int = 0
    captions_skipped: int = 0
    tokens_trimmed: int = 0
    triples_emitted: int = 0
    distinct_connectors: int = 0
    connectors_dropped: int = 0
    leaves_out_of_inventory: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


def load_corpus(path, max_caption_len: int = 18) -> list[ParsedCaption]:
    """Read a JSON Lines caption corpus, lowercasing and truncating."""
    captions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                image_id = row["image_id"]
                caption = row["caption"]
                parse = row["parse"]
            except (KeyError, TypeError):
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected image_id, caption and parse fields"
                ) from None
            tree, words = parse_penn(parse)
            words = [w.lower() for w in words]
            if caption.lower().split() != words:
                raise CorpusFormatError(f"{path}:{lineno}: caption does not match parse leaves")
            if len(words) > max_caption_len:
                words = words[:max_caption_len]
                tree = truncate_tree(tree, max_caption_len)
            validate_tree(tree, len(words))
            captions.append(ParsedCaption(image_id=str(image_id), tokens=tuple(words), tree=tree))
    if not captions:
        raise EmptyCorpusError(f"no captions in {path}")
    return captions


def build_vocabulary(captions: list[ParsedCaption], min_count: int = 5) -> Vocabulary:
    """Keep lowercase alphabetic tokens seen at least ``min_count`` times."""
    if not captions:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise InputError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for cap in captions:
        counts.update(t for t in cap.tokens if t.isalpha())
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    id_of = {t: i for i, t in enumerate(kept)}
    id_of[UNK] = len(kept)
    return Vocabulary(id_of=id_of, unk_id=len(kept), min_count=min_count)


def _is_np(node: ParseNode) -> bool:
    return node.label.split("-")[0].split("=")[0] == "NP"


def _base_np_nodes(tree: ParseNode) -> list[ParseNode]:
    """NP nodes with no NP descendant, in left-to-right order."""
    out: list[ParseNode] = []

    def walk(node: ParseNode) -> bool:
        np_below = False
        for child in node.children:
            np_below = walk(child) or np_below
        if _is_np(node) and not np_below:
            out.append(node)
            return True
        return np_below or _is_np(node)

    walk(tree)
    return out


def extract_noun_phrase_spans(tree: ParseNode) -> list[Span]:
    return [node.span for node in _base_np_nodes(tree)]


def build_np_inventory(
    captions: list[ParsedCaption], min_occurrences: int = 50
) -> NounPhraseInventory:
    """Distinct base noun-phrases occurring strictly more than the threshold."""
    if min_occurrences < 0:
        raise InputError(f"min_occurrences must be >= 0, got {min_occurrences}")
    counts = Counter()
    for cap in captions:
        for start, end in extract_noun_phrase_spans(cap.tree):
            counts[cap.tokens[start:end]] += 1
    kept = sorted(
        (p for p, c in counts.items() if c > min_occurrences),
        key=lambda p: (-counts[p], p),
    )
    return NounPhraseInventory(phrases=kept, min_occurrences=min_occurrences)


@dataclass
class PlanNode:
    """A unit of the merge plan: a leaf noun-phrase or a merge of two units.

    Internal nodes record the connector token span ``[connector_start,
    connector_end)`` that sits between the left and right unit, and the
    sequence number of the merge.
    """

    start: int
    end: int
    left: "PlanNode | None" = None
    right: "PlanNode | None" = None
    connector_start: int = -1
    connector_end: int = -1
    order: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def internal_nodes(self) -> list["PlanNode"]:
        """All merge nodes, in recorded merge order."""
        out = []

        def walk(node: "PlanNode"):
            if node.is_leaf:
                return
            walk(node.left)
            walk(node.right)
            out.append(node)

        walk(self)
        out.sort(key=lambda n: n.order)
        return out


def derive_composition_plan(caption: ParsedCaption, np_spans: list[Span]) -> PlanNode:
    """Binary merge plan over the caption's noun-phrase spans.

    Adjacent units whose lowest common ancestor in the parse tree is deepest
    merge first; ties go left to right. The connector of a merge is the token
    gap between the two units.
    """
    if len(np_spans) < 2:
        raise NotEnoughPhrasesError(
            f"need at least 2 noun-phrase spans, got {len(np_spans)}"
        )
    node_by_span = {n.span: n for n in _base_np_nodes(caption.tree)}
    try:
        rep_nodes = [node_by_span[tuple(s)] for s in np_spans]
    except KeyError as exc:
        raise InputError(f"span {exc} is not a base noun-phrase of the caption") from exc

    ancestors: dict[int, list[ParseNode]] = {}

    def index_paths(node: ParseNode, path: list[ParseNode]):
        path = path + [node]
        ancestors[id(node)] = path
        for child in node.children:
            index_paths(child, path)

    index_paths(caption.tree, [])

    def lca_entry(a: ParseNode, b: ParseNode) -> tuple[int, ParseNode]:
        pa, pb = ancestors[id(a)], ancestors[id(b)]
        lca = pa[0]
        for x, y in zip(pa, pb):
            if x is not y:
                break
            lca = x
        return len(ancestors[id(lca)]) - 1, lca

    units: list[tuple[PlanNode, ParseNode]] = [
        (PlanNode(start=n.start, end=n.end), n) for n in rep_nodes
    ]
    order = 0
    while len(units) > 1:
        best_i, best_depth = 0, -1
        for i in range(len(units) - 1):
            depth, _ = lca_entry(units[i][1], units[i + 1][1])
            if depth > best_depth:
                best_i, best_depth = i, depth
        (left, lnode), (right, rnode) = units[best_i], units[best_i + 1]
        _, lca = lca_entry(lnode, rnode)
        merged = PlanNode(
            start=left.start,
            end=right.end,
            left=left,
            right=right,
            connector_start=left.end,
            connector_end=right.start,
            order=order,
        )
        order += 1
        units[best_i : best_i + 2] = [(merged, lca)]
    return units[0][0]


def _plan_phrases(caption: ParsedCaption, plan: PlanNode) -> list[Phrase]:
    """Token sequences of every plan unit (leaves and merges)."""
    out = []

    def walk(node: PlanNode):
        out.append(caption.tokens[node.start : node.end])
        if not node.is_leaf:
            walk(node.left)
            walk(node.right)

    walk(plan)
    return out


def build_connecting_inventory(
    captions: list[ParsedCaption], min_occurrences: int = 1
) -> ConnectingInventory:
    """Distinct connector token sequences mined from merge plans."""
    if min_occurrences < 1:
        raise InputError(f"min_occurrences must be >= 1, got {min_occurrences}")
    counts = Counter()
    for cap in captions:
        spans = extract_noun_phrase_spans(cap.tree)
        if len(spans) < 2:
            continue
        plan = derive_composition_plan(cap, spans)
        for node in plan.internal_nodes():
            counts[cap.tokens[node.connector_start : node.connector_end]] += 1
    kept = sorted(
        (p for p, c in counts.items() if c >= min_occurrences),
        key=lambda p: (-counts[p], p),
    )
    return ConnectingInventory(phrases=kept)


def emit_training_examples(
    captions: list[ParsedCaption],
    connecting_inventory: ConnectingInventory,
    neg_ratio: float = 1.0,
    seed: int = 0,
    np_inventory: NounPhraseInventory | None = None,
) -> tuple[list[CompositionTriple], list[CompletenessExample], MiningStats]:
    """Derive classification examples by walking each caption's merge plan.

    Positives: one triple per merge whose connector is in the inventory.
    Negatives (labelled with the virtual class, ``neg_ratio`` per positive):
    order-swapped positive pairs never seen as a positive pair, then phrase
    pairs drawn from different captions, again excluding observed positive
    pairs. Completeness positives are the trimmed captions; negatives are the
    intermediate (non-final) merge results.
    """
    if neg_ratio < 0:
        raise InputError(f"neg_ratio must be >= 0, got {neg_ratio}")
    rng = np.random.default_rng(seed)
    stats = MiningStats()
    neg_id = connecting_inventory.neg_id

    positives: list[CompositionTriple] = []
    completeness: list[CompletenessExample] = []
    phrases_by_caption: list[tuple[str, list[Phrase]]] = []
    connector_kinds: set[Phrase] = set()

    for cap in captions:
        spans = extract_noun_phrase_spans(cap.tree)
        if not spans:
            stats.captions_skipped += 1
            continue
        stats.captions_used += 1
        trim_start, trim_end = spans[0][0], spans[-1][1]
        stats.tokens_trimmed += len(cap.tokens) - (trim_end - trim_start)
        completeness.append(
            CompletenessExample(cap.tokens[trim_start:trim_end], True, cap.image_id)
        )
        if np_inventory is not None:
            stats.leaves_out_of_inventory += sum(
                1 for s in spans if np_inventory.index_of(cap.tokens[s[0] : s[1]]) < 0
            )
        if len(spans) < 2:
            continue
        plan = derive_composition_plan(cap, spans)
        merges = plan.internal_nodes()
        for node in merges:
            connector = cap.tokens[node.connector_start : node.connector_end]
            class_id = connecting_inventory.index_of(connector)
            if class_id < 0:
                stats.connectors_dropped += 1
                continue
            connector_kinds.add(connector)
            positives.append(
                CompositionTriple(
                    left=cap.tokens[node.left.start : node.left.end],
                    right=cap.tokens[node.right.start : node.right.end],
                    middle_class=class_id,
                    image_id=cap.image_id,
                )
            )
        for node in merges[:-1]:
            completeness.append(
                CompletenessExample(cap.tokens[node.start : node.end], False, cap.image_id)
            )
        phrases_by_caption.append((cap.image_id, _plan_phrases(cap, plan)))

    stats.distinct_connectors = len(connector_kinds)

    positive_pairs = {(t.left, t.right) for t in positives}
    n_neg = int(round(neg_ratio * len(positives)))
    negatives: list[CompositionTriple] = []

    swapped = [
        CompositionTriple(t.right, t.left, neg_id, t.image_id)
        for t in positives
        if (t.right, t.left) not in positive_pairs
    ]
    rng.shuffle(swapped)
    target_swapped = n_neg - n_neg // 2
    negatives.extend(swapped[:target_swapped])

    if len(phrases_by_caption) >= 2:
        attempts = 0
        while len(negatives) < n_neg and attempts < 50 * n_neg:
            attempts += 1
            ia, ib = rng.choice(len(phrases_by_caption), size=2, replace=False)
            img_a, pool_a = phrases_by_caption[ia]
            _, pool_b = phrases_by_caption[ib]
            left = pool_a[rng.integers(len(pool_a))]
            right = pool_b[rng.integers(len(pool_b))]
            if (left, right) in positive_pairs:
                continue
            negatives.append(CompositionTriple(left, right, neg_id, img_a))
    if len(negatives) < n_neg:
        negatives.extend(swapped[target_swapped:][: n_neg - len(negatives)])

    triples = positives + negatives[:n_neg]
    stats.triples_emitted = len(triples)
    return triples, completeness, stats
