"""Bottom-up caption composition over a phrase pool.

Starting from scored noun-phrases, each step scans all ordered pairs in the
pool, asks the connecting classifier for the best connector of each pair,
merges the winning pair into a longer phrase, and stops when the
completeness classifier accepts the new phrase (or the pool is down to one
phrase). A composed phrase's score is the sum of its parts plus the
connection score, so every phrase carries an exact provenance tree.

Three search modes are provided: greedy, beam (multiple retained pairs and
connectors per step), and seeded temperature sampling. A brute-force oracle
enumerates the full search space on small pools for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ConnectingInventory, Phrase
from .errors import (
    ConfigError,
    EmptyPoolError,
    NoConnectablePairError,
    OracleTooLargeError,
    PoolTooSmallError,
)
from .nounphrases import ScoredNounPhrase
from .numerics import softmax


@dataclass(frozen=True)
class Leaf:
    class_id: int


@dataclass(frozen=True)
class Node:
    left: "ScoredPhrase"
    middle_class: int
    right: "ScoredPhrase"
    connection_score: float


@dataclass(frozen=True)
class ScoredPhrase:
    tokens: Phrase
    score: float
    provenance: "Leaf | Node"


def composed_score(left: ScoredPhrase, right: ScoredPhrase, connection: float) -> float:
    # fixed summation order so recomputation is bit-identical
    return (left.score + right.score) + connection


def merge_phrases(
    left: ScoredPhrase, right: ScoredPhrase, class_id: int, connection: float,
    inventory: ConnectingInventory,
) -> ScoredPhrase:
    return ScoredPhrase(
        tokens=left.tokens + inventory.phrases[class_id] + right.tokens,
        score=composed_score(left, right, connection),
        provenance=Node(left, class_id, right, connection),
    )


def recomputed_score(phrase: ScoredPhrase) -> float:
    """Replay the provenance tree bottom-up with the same summation order."""
    prov = phrase.provenance
    if isinstance(prov, Leaf):
        return phrase.score
    return (recomputed_score(prov.left) + recomputed_score(prov.right)) + prov.connection_score


def provenance_tokens(phrase: ScoredPhrase, inventory: ConnectingInventory) -> Phrase:
    """Rebuild the token sequence from the provenance tree."""
    prov = phrase.provenance
    if isinstance(prov, Leaf):
        return phrase.tokens
    return (
        provenance_tokens(prov.left, inventory)
        + inventory.phrases[prov.middle_class]
        + provenance_tokens(prov.right, inventory)
    )


def leaf_phrases(initial) -> list[ScoredPhrase]:
    """Wrap scored noun-phrases as pool leaves (leaf score = classifier score)."""
    return [
        ScoredPhrase(tokens=tuple(p.phrase), score=float(p.score), provenance=Leaf(p.class_id))
        for p in initial
    ]


@dataclass
class SearchConfig:
    mode: str = "greedy"
    beam_pairs: int = 3
    beam_connections: int = 1
    sample_seed: int = 0
    sample_temperature: float = 1.0
    max_steps: int | None = None
    stop_on_complete: bool = True
    max_caption_len: int = 18

    def __post_init__(self):
        if self.mode not in ("greedy", "beam", "sample"):
            raise ConfigError(f"unknown search mode {self.mode!r}")
        if self.beam_pairs < 1 or self.beam_connections < 1:
            raise ConfigError("beam sizes must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.sample_temperature <= 0:
            raise ConfigError("sample_temperature must be > 0")
        if self.max_caption_len < 1:
            raise ConfigError("max_caption_len must be >= 1")


@dataclass
class CompositionResult:
    captions: list[ScoredPhrase]
    complete: list[bool]
    steps_taken: int

    @property
    def best(self) -> ScoredPhrase:
        return self.captions[0]


@dataclass
class _Candidate:
    i: int
    j: int
    class_id: int
    connection: float
    phrase: ScoredPhrase


def _phrase_order(p: ScoredPhrase):
    return (-p.score, p.tokens)


def _pair_candidates(pool, cmodule, inventory, ctx, max_len, k):
    """Per ordered pair, up to k connector candidates; unconnectable pairs skipped."""
    by_pair = []
    for i, left in enumerate(pool):
        for j, right in enumerate(pool):
            if i == j:
                continue
            top = cmodule.best_connections(left.tokens, right.tokens, ctx, k=k)
            cands = []
            for class_id, connection in top:
                tokens = left.tokens + inventory.phrases[class_id] + right.tokens
                if len(tokens) > max_len:
                    continue
                cands.append(
                    _Candidate(
                        i, j, class_id, connection,
                        merge_phrases(left, right, class_id, connection, inventory),
                    )
                )
            if cands:
                by_pair.append(cands)
    # pairs ranked by their best connector: score first, then the composed
    # phrase score, then the tokens, so the scan order never matters
    by_pair.sort(
        key=lambda cands: (-cands[0].connection, -cands[0].phrase.score, cands[0].phrase.tokens)
    )
    return by_pair


def _replace_pair(pool, i, j, new_phrase):
    return [p for k, p in enumerate(pool) if k not in (i, j)] + [new_phrase]


def step_greedy(pool, cmodule, emodule, inventory, ctx=None, max_caption_len: int = 18):
    """One merge: best pair by connecting score; returns (pool', phrase, complete)."""
    if len(pool) < 2:
        raise PoolTooSmallError(f"need at least 2 pooled phrases, got {len(pool)}")
    ranked = _pair_candidates(pool, cmodule, inventory, ctx, max_caption_len, k=1)
    if not ranked:
        raise NoConnectablePairError("no ordered pair in the pool can be connected")
    best = ranked[0][0]
    new_pool = _replace_pair(pool, best.i, best.j, best.phrase)
    complete = emodule.is_complete(best.phrase.tokens, ctx)
    return new_pool, best.phrase, complete


def _singleton_result(pool, emodule, ctx) -> CompositionResult:
    phrase = pool[0]
    return CompositionResult([phrase], [emodule.is_complete(phrase.tokens, ctx)], 0)


def _ranked_completed(completed: dict[Phrase, ScoredPhrase]) -> list[ScoredPhrase]:
    return sorted(completed.values(), key=_phrase_order)


def compose(
    initial,
    cmodule,
    emodule,
    inventory: ConnectingInventory,
    ctx=None,
    config: SearchConfig | None = None,
) -> CompositionResult:
    """Greedy composition until completeness, a single phrase, or max_steps."""
    config = config or SearchConfig()
    if not initial:
        raise EmptyPoolError("the initial noun-phrase set is empty")
    pool = leaf_phrases(initial)
    if len(pool) == 1:
        return _singleton_result(pool, emodule, ctx)
    max_steps = config.max_steps if config.max_steps is not None else len(pool) - 1
    completed: dict[Phrase, ScoredPhrase] = {}
    steps = 0
    while len(pool) > 1 and steps < max_steps:
        try:
            pool, phrase, complete = step_greedy(
                pool, cmodule, emodule, inventory, ctx, config.max_caption_len
            )
        except NoConnectablePairError:
            best = min(pool, key=_phrase_order)
            return CompositionResult([best], [False], steps)
        steps += 1
        if complete:
            if config.stop_on_complete:
                return CompositionResult([phrase], [True], steps)
            if phrase.tokens not in completed or completed[phrase.tokens].score < phrase.score:
                completed[phrase.tokens] = phrase
    if completed:
        ranked = _ranked_completed(completed)
        return CompositionResult(ranked, [True] * len(ranked), steps)
    best = min(pool, key=_phrase_order)
    return CompositionResult([best], [emodule.is_complete(best.tokens, ctx)], steps)


@dataclass
class _Hypothesis:
    pool: list[ScoredPhrase]
    newest: ScoredPhrase

    def sort_key(self):
        return _phrase_order(self.newest)


def compose_beam(
    initial,
    cmodule,
    emodule,
    inventory: ConnectingInventory,
    ctx=None,
    config: SearchConfig | None = None,
) -> CompositionResult:
    """Beam search retaining several pairs and connectors per step.

    At most ``beam_pairs`` pairs are expanded per hypothesis and
    ``beam_connections`` connectors per pair; the next generation keeps the
    beam_pairs x beam_connections hypotheses whose newest phrase scores
    highest. Completed captions are collected (deduplicated by tokens,
    keeping the best score) and returned ranked.
    """
    config = config or SearchConfig()
    if not initial:
        raise EmptyPoolError("the initial noun-phrase set is empty")
    start = leaf_phrases(initial)
    if len(start) == 1:
        return _singleton_result(start, emodule, ctx)
    max_steps = config.max_steps if config.max_steps is not None else len(start) - 1
    beam_cap = config.beam_pairs * config.beam_connections

    completed: dict[Phrase, ScoredPhrase] = {}
    dead_end: list[ScoredPhrase] = []     # best phrase of pools with no connectable pair
    exhausted: list[ScoredPhrase] = []    # single-phrase or max-step leftovers

    live = [_Hypothesis(pool=start, newest=max(start, key=lambda p: p.score))]
    steps = 0
    while live and steps < max_steps:
        children: list[_Hypothesis] = []
        for hyp in live:
            ranked_pairs = _pair_candidates(
                hyp.pool, cmodule, inventory, ctx, config.max_caption_len, k=config.beam_connections
            )
            if not ranked_pairs:
                dead_end.append(min(hyp.pool, key=_phrase_order))
                continue
            for pair_cands in ranked_pairs[: config.beam_pairs]:
                for cand in pair_cands[: config.beam_connections]:
                    phrase = cand.phrase
                    is_complete = emodule.is_complete(phrase.tokens, ctx)
                    if is_complete:
                        prev = completed.get(phrase.tokens)
                        if prev is None or prev.score < phrase.score:
                            completed[phrase.tokens] = phrase
                        if config.stop_on_complete:
                            continue
                    children.append(
                        _Hypothesis(
                            pool=_replace_pair(hyp.pool, cand.i, cand.j, phrase),
                            newest=phrase,
                        )
                    )
        steps += 1
        children.sort(key=_Hypothesis.sort_key)
        live = []
        for child in children[:beam_cap]:
            if len(child.pool) == 1:
                exhausted.append(child.pool[0])
            else:
                live.append(child)
    exhausted.extend(min(hyp.pool, key=_phrase_order) for hyp in live)

    if completed:
        ranked = _ranked_completed(completed)
        return CompositionResult(ranked, [True] * len(ranked), steps)
    if exhausted:
        best = min(exhausted, key=_phrase_order)
        return CompositionResult([best], [emodule.is_complete(best.tokens, ctx)], steps)
    if dead_end:
        best = min(dead_end, key=_phrase_order)
        return CompositionResult([best], [False], steps)
    raise NoConnectablePairError("beam search produced no candidate captions")


def compose_sample(
    initial,
    cmodule,
    emodule,
    inventory: ConnectingInventory,
    ctx=None,
    config: SearchConfig | None = None,
) -> CompositionResult:
    """Diverse composition: restrict pairs to a random subset, sample connectors.

    Each step draws a uniform subset of at most ``beam_pairs`` ordered pairs,
    picks the best pair within the subset, then samples the connector from
    the temperature-scaled distribution over real classes. Deterministic for
    a fixed ``sample_seed``.
    """
    config = config or SearchConfig()
    if not initial:
        raise EmptyPoolError("the initial noun-phrase set is empty")
    rng = np.random.default_rng(config.sample_seed)
    pool = leaf_phrases(initial)
    if len(pool) == 1:
        return _singleton_result(pool, emodule, ctx)
    max_steps = config.max_steps if config.max_steps is not None else len(pool) - 1
    completed: dict[Phrase, ScoredPhrase] = {}
    steps = 0
    while len(pool) > 1 and steps < max_steps:
        pairs = [(i, j) for i in range(len(pool)) for j in range(len(pool)) if i != j]
        if len(pairs) > config.beam_pairs:
            chosen = rng.choice(len(pairs), size=config.beam_pairs, replace=False)
            pairs = [pairs[k] for k in sorted(chosen)]
        options = []
        for i, j in pairs:
            left, right = pool[i], pool[j]
            dist = cmodule.connect_scores(left.tokens, right.tokens, ctx)
            if int(np.argmax(dist)) == cmodule.neg_class_id:
                continue
            allowed = [
                class_id
                for class_id in range(len(inventory.phrases))
                if len(left.tokens) + len(inventory.phrases[class_id]) + len(right.tokens)
                <= config.max_caption_len
            ]
            if not allowed:
                continue
            best_id = min(allowed, key=lambda c: (-dist[c], c))
            options.append((i, j, dist, allowed, best_id))
        if not options:
            best = min(pool, key=_phrase_order)
            return CompositionResult([best], [False], steps)

        def option_key(opt):
            i, j, dist, _, best_id = opt
            phrase_score = composed_score(pool[i], pool[j], float(dist[best_id]))
            tokens = pool[i].tokens + inventory.phrases[best_id] + pool[j].tokens
            return (-dist[best_id], -phrase_score, tokens)

        i, j, dist, allowed, best_id = min(options, key=option_key)
        probs = dist[allowed]
        if np.all(probs <= 0.0):
            class_id = best_id
        else:
            with np.errstate(divide="ignore"):
                weights = softmax(np.log(probs) / config.sample_temperature)
            class_id = int(rng.choice(allowed, p=weights))
        phrase = merge_phrases(pool[i], pool[j], class_id, float(dist[class_id]), inventory)
        pool = _replace_pair(pool, i, j, phrase)
        steps += 1
        if emodule.is_complete(phrase.tokens, ctx):
            if config.stop_on_complete:
                return CompositionResult([phrase], [True], steps)
            if phrase.tokens not in completed or completed[phrase.tokens].score < phrase.score:
                completed[phrase.tokens] = phrase
    if completed:
        ranked = _ranked_completed(completed)
        return CompositionResult(ranked, [True] * len(ranked), steps)
    best = min(pool, key=_phrase_order)
    return CompositionResult([best], [emodule.is_complete(best.tokens, ctx)], steps)


@dataclass
class UserControl:
    """Filters and score modulation applied to the initial phrase set."""

    exclude: tuple[Phrase, ...] = ()
    boost: tuple[tuple[int, float], ...] = ()

    @classmethod
    def from_dict(cls, obj: dict) -> "UserControl":
        exclude = tuple(
            tuple(p.split()) if isinstance(p, str) else tuple(p) for p in obj.get("exclude", [])
        )
        boost = tuple((int(c), float(m)) for c, m in obj.get("boost", []))
        return cls(exclude=exclude, boost=boost)


def _pattern_matches(pattern: Phrase, phrase: Phrase) -> bool:
    if not pattern:
        return False
    width = len(pattern)
    return any(phrase[i : i + width] == pattern for i in range(len(phrase) - width + 1))


def apply_user_control(initial, control: UserControl) -> list[ScoredNounPhrase]:
    """Drop excluded phrases; multiply boosted scores, clamped into [0, 1]."""
    for class_id, multiplier in control.boost:
        if multiplier <= 0:
            raise ConfigError(f"boost multiplier for class {class_id} must be > 0")
    factors: dict[int, float] = {}
    for class_id, multiplier in control.boost:
        factors[class_id] = factors.get(class_id, 1.0) * multiplier
    out = []
    for cand in initial:
        if any(_pattern_matches(pat, cand.phrase) for pat in control.exclude):
            continue
        score = cand.score
        if cand.class_id in factors:
            score = min(1.0, max(0.0, score * factors[cand.class_id]))
        out.append(ScoredNounPhrase(phrase=cand.phrase, score=score, class_id=cand.class_id))
    if not out:
        raise EmptyPoolError("user control excluded every initial phrase")
    return out


def brute_force_oracle(
    initial,
    cmodule,
    emodule,
    inventory: ConnectingInventory,
    ctx=None,
    max_caption_len: int = 18,
    max_pool: int = 5,
) -> ScoredPhrase | None:
    """Exhaustive search reference: best complete caption, or None.

    Enumerates every merge order and every real connector choice over the
    pool (the full space the searches sample from), honoring the same rules:
    unconnectable pairs are skipped, merges past completeness are not
    explored, and over-long phrases are discarded. Intended for pools of at
    most ``max_pool`` phrases.
    """
    initial = list(initial)
    if not initial:
        raise EmptyPoolError("the initial noun-phrase set is empty")
    if len(initial) > max_pool:
        raise OracleTooLargeError(
            f"oracle limited to pools of {max_pool}, got {len(initial)}"
        )
    leaves = leaf_phrases(initial)
    if len(leaves) == 1:
        return leaves[0] if emodule.is_complete(leaves[0].tokens, ctx) else None

    best: ScoredPhrase | None = None
    seen: set = set()

    def consider(phrase: ScoredPhrase):
        nonlocal best
        if best is None or (-phrase.score, phrase.tokens) < (-best.score, best.tokens):
            best = phrase

    def search(pool: list[ScoredPhrase]):
        key = tuple(sorted((p.tokens, p.score) for p in pool))
        if key in seen:
            return
        seen.add(key)
        for i, left in enumerate(pool):
            for j, right in enumerate(pool):
                if i == j:
                    continue
                dist = cmodule.connect_scores(left.tokens, right.tokens, ctx)
                if int(np.argmax(dist)) == cmodule.neg_class_id:
                    continue
                for class_id in range(len(inventory.phrases)):
                    tokens = left.tokens + inventory.phrases[class_id] + right.tokens
                    if len(tokens) > max_caption_len:
                        continue
                    phrase = merge_phrases(left, right, class_id, float(dist[class_id]), inventory)
                    if emodule.is_complete(phrase.tokens, ctx):
                        consider(phrase)
                    elif len(pool) > 2:
                        search(_replace_pair(pool, i, j, phrase))

    search(leaves)
    return best
