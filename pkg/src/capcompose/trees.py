"""Constituency trees in Penn bracketed notation.

The reader accepts both full preterminal style ``(NP (DT a) (NN man))`` and
the more compact bare-word style ``(NP a man)``; bare words become leaves
with an empty tag. Leaf order defines token positions, so every node carries
a half-open ``[start, end)`` span into the token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CorpusFormatError


@dataclass
class ParseNode:
    label: str
    start: int
    end: int
    children: list["ParseNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def iter_nodes(self):
        yield self
        for child in self.children:
            yield from child.iter_nodes()


def _lex(text: str) -> list[str]:
    out = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in "()":
            out.append(c)
            i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def parse_penn(text: str) -> tuple[ParseNode, list[str]]:
    """Read one bracketed tree; returns the root node and the leaf words."""
    toks = _lex(text)
    if not toks:
        raise CorpusFormatError("empty parse string")
    words: list[str] = []

    def parse_node(i: int) -> tuple[ParseNode, int]:
        if toks[i] != "(":
            raise CorpusFormatError(f"expected '(' at token {i} of parse")
        if i + 1 >= len(toks) or toks[i + 1] in "()":
            raise CorpusFormatError("constituent without a label")
        label = toks[i + 1]
        i += 2
        children: list[ParseNode] = []
        while i < len(toks) and toks[i] != ")":
            if toks[i] == "(":
                child, i = parse_node(i)
                children.append(child)
            else:
                idx = len(words)
                words.append(toks[i])
                children.append(ParseNode(label="", start=idx, end=idx + 1))
                i += 1
        if i >= len(toks):
            raise CorpusFormatError("unbalanced parentheses")
        i += 1  # closing ')'
        if not children:
            raise CorpusFormatError(f"empty constituent ({label})")
        if len(children) == 1 and children[0].is_leaf and children[0].label == "":
            # preterminal like (NN man): collapse to a tagged leaf
            leaf = children[0]
            return ParseNode(label=label, start=leaf.start, end=leaf.end), i
        return (
            ParseNode(label=label, start=children[0].start, end=children[-1].end, children=children),
            i,
        )

    root, i = parse_node(0)
    if i != len(toks):
        raise CorpusFormatError("trailing content after parse tree")
    return root, words


def validate_tree(node: ParseNode, n_tokens: int) -> None:
    """Check span bookkeeping: children are contiguous, ordered, and tile the parent."""
    if node.start < 0 or node.end > n_tokens or node.start >= node.end:
        raise CorpusFormatError(f"bad span {node.span} for {n_tokens} tokens")
    if node.is_leaf:
        if node.end - node.start != 1:
            raise CorpusFormatError(f"leaf with non-unit span {node.span}")
        return
    pos = node.start
    for child in node.children:
        if child.start != pos:
            raise CorpusFormatError("children do not tile the parent span")
        validate_tree(child, n_tokens)
        pos = child.end
    if pos != node.end:
        raise CorpusFormatError("children do not reach the parent span end")


def truncate_tree(node: ParseNode, limit: int) -> ParseNode | None:
    """Drop all leaves at positions >= limit, pruning emptied subtrees."""
    if node.start >= limit:
        return None
    if node.is_leaf:
        return node
    kept = [c for c in (truncate_tree(child, limit) for child in node.children) if c is not None]
    return ParseNode(label=node.label, start=node.start, end=min(node.end, limit), children=kept)
