"""Recover discrete parse trees from soft composition histories.

Each content position accumulates composition probability over
iterations; a position "fires" (merges into its right neighbor) the first
time its running total crosses 0.5.  Positions that never cross are merged
in one final cleanup wave so the result is always a full binary tree.
Within a wave, merges run sequentially: larger accumulated mass first,
ties resolved leftward.  Trees are nested ``(left, right)`` tuples over
leaf indices — the same shape `discrete.tree_to_schedule` accepts.
"""
from __future__ import annotations

import numpy as np

from .tensor import no_grad


class ParseError(ValueError):
    pass


def merge_waves(history: np.ndarray) -> list:
    """Group positions into firing waves from an (iterations, n) history."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise ParseError("history must be 2-D (iterations, positions)")
    n = history.shape[1]
    cum = np.zeros(n)
    fired = np.zeros(n, dtype=bool)
    waves = []
    for row in history:
        cum += row
        crossed = np.nonzero(~fired & (cum >= 0.5))[0]
        if crossed.size:
            waves.append(sorted(crossed, key=lambda i: (-cum[i], i)))
            fired[crossed] = True
    rest = np.nonzero(~fired)[0]
    if rest.size:
        waves.append(sorted(rest, key=lambda i: (-cum[i], i)))
    return waves


def parse_tree(history: np.ndarray):
    """Binarize a composition history into a tree of leaf indices."""
    history = np.asarray(history, dtype=np.float64)
    n = history.shape[1]
    if n == 0:
        raise ParseError("empty sequence")
    if n == 1:
        return 0
    nodes: list = list(range(n))
    pos = list(range(n))
    for wave in merge_waves(history):
        for p in wave:
            k = pos.index(p)
            if k == len(pos) - 1:
                continue  # rightmost survivor: merging right would hit the end marker
            nodes[k + 1] = (nodes[k], nodes[k + 1])
            del nodes[k]
            del pos[k]
    if len(pos) != 1:
        raise ParseError(f"{len(pos)} positions left unmerged")
    return nodes[0]


def to_bracketed(tree, tokens) -> str:
    """Render a leaf-index tree over its tokens, e.g. ``((a b) c)``."""
    if isinstance(tree, tuple):
        return f"({to_bracketed(tree[0], tokens)} {to_bracketed(tree[1], tokens)})"
    return str(tokens[tree])


def history_for_row(result, row: int, length: int) -> np.ndarray:
    """Slice one sequence's content-position history out of an encode result."""
    rows = [c[row, 1:length + 1] for c in result.c_history]
    return np.stack(rows) if rows else np.zeros((0, length))


def parse_tokens(model, tokens, vocab):
    """Encode one token sequence and return its induced tree."""
    ids = vocab.encode(tokens)[None, :]
    lengths = np.array([len(tokens)], dtype=np.int64)
    with no_grad():
        result = model.encode(ids, lengths)
    return parse_tree(history_for_row(result, 0, len(tokens)))
