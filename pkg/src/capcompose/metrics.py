"""Diversity statistics over generated caption sets.

Five numbers: the fraction of captions unseen in training, the fraction of
distinct captions, vocabulary coverage, and mean pairwise token edit
distances across images (one caption each) and within images (several
captions each). Edit distance is token-level Levenshtein.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .corpus import Phrase, Vocabulary
from .errors import EmptySetError, NotEnoughCaptionsError


def token_edit_distance(a, b) -> int:
    """Levenshtein distance over tokens, unit insert/delete/substitute cost."""
    a, b = tuple(a), tuple(b)
    if len(a) > len(b):
        a, b = b, a
    current = list(range(len(a) + 1))
    for i in range(1, len(b) + 1):
        previous, current = current, [i] + [0] * len(a)
        for j in range(1, len(a) + 1):
            change = previous[j - 1] + (a[j - 1] != b[i - 1])
            current[j] = min(previous[j] + 1, current[j - 1] + 1, change)
    return current[len(a)]


def novel_ratio(generated, training) -> float:
    """Fraction of generated captions absent from the training caption set."""
    generated = [tuple(c) for c in generated]
    if not generated:
        raise EmptySetError("no generated captions")
    training = {tuple(c) for c in training}
    return sum(1 for c in generated if c not in training) / len(generated)


def unique_ratio(generated) -> float:
    generated = [tuple(c) for c in generated]
    if not generated:
        raise EmptySetError("no generated captions")
    return len(set(generated)) / len(generated)


def vocabulary_usage(generated, vocab) -> float:
    """Fraction of vocabulary words that appear in some generated caption."""
    if isinstance(vocab, Vocabulary):
        words = set(vocab.id_of)
    else:
        words = set(vocab)
    if not words:
        raise EmptySetError("empty vocabulary")
    used = set()
    for caption in generated:
        used.update(caption)
    return len(words & used) / len(words)


def diversity_dataset(captions) -> float:
    """Mean pairwise distance over one caption per image."""
    captions = [tuple(c) for c in captions]
    if len(captions) < 2:
        raise NotEnoughCaptionsError("dataset-level diversity needs at least 2 captions")
    pairs = list(combinations(captions, 2))
    return sum(token_edit_distance(a, b) for a, b in pairs) / len(pairs)


def diversity_image(per_image: dict[str, list]) -> float:
    """Mean over images of the mean pairwise distance among that image's captions."""
    if not per_image:
        raise NotEnoughCaptionsError("no images")
    means = []
    for image_id, captions in per_image.items():
        captions = [tuple(c) for c in captions]
        if len(captions) < 2:
            raise NotEnoughCaptionsError(
                f"image {image_id!r} has {len(captions)} caption(s), need at least 2"
            )
        pairs = list(combinations(captions, 2))
        means.append(sum(token_edit_distance(a, b) for a, b in pairs) / len(pairs))
    return sum(means) / len(means)


@dataclass
class DiversityReport:
    novel_ratio: float
    unique_ratio: float
    vocab_usage: float
    diversity_dataset: float
    diversity_image: float | None

    def to_dict(self) -> dict:
        return dict(vars(self))


def diversity_report(
    per_image: dict[str, list[Phrase]],
    training,
    vocab,
    skip_image_level_if_single: bool = False,
) -> DiversityReport:
    """All five statistics for a per-image caption mapping.

    Dataset-level diversity uses each image's first caption. When
    ``skip_image_level_if_single`` is set and some image has fewer than two
    captions, the image-level entry becomes None instead of an error.
    """
    if not per_image or any(not caps for caps in per_image.values()):
        raise EmptySetError("every image needs at least one caption")
    flat = [tuple(c) for caps in per_image.values() for c in caps]
    firsts = [caps[0] for caps in per_image.values()]
    image_level: float | None
    if skip_image_level_if_single and any(len(caps) < 2 for caps in per_image.values()):
        image_level = None
    else:
        image_level = diversity_image(per_image)
    return DiversityReport(
        novel_ratio=novel_ratio(flat, training),
        unique_ratio=unique_ratio(flat),
        vocab_usage=vocabulary_usage(flat, vocab),
        diversity_dataset=diversity_dataset(firsts),
        diversity_image=image_level,
    )
