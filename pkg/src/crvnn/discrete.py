"""Exact discrete execution of binary composition schedules.

This is the reference semantics the continuous encoder relaxes: at each
iteration every marked position composes into its nearest existing right
neighbor and stops existing.  Everything here runs on plain Python/numpy
values (no tape); exactness over differentiability.

Positions are 0-based original sequence indices throughout.
"""
from __future__ import annotations

from dataclasses import dataclass


class InvalidScheduleError(ValueError):
    """Schedule violates the discrete execution contract."""


@dataclass
class DiscreteStep:
    """State after one iteration (iteration 0 is the initial state)."""

    iteration: int
    existing: tuple
    items: list  # [(position, representation)] for existing positions
    compositions: list  # [(source, target)] applied at this iteration


def _nearest_right(existing: list, i: int):
    for j in existing:
        if j > i:
            return j
    return None


def run_discrete(leaves, schedule, cell):
    """Run `schedule` over `leaves`, composing pairs with `cell`.

    leaves:   initial representations, one per position.
    schedule: list of iterations, each an iterable of marked positions.
    cell:     compose function, (left_value, right_value) -> value.

    Returns (root_representation, trace) where trace is a list of
    DiscreteStep.  All compositions within one iteration read the state at
    the start of the iteration.
    """
    reps = list(leaves)
    existing = list(range(len(reps)))
    trace = [DiscreteStep(0, tuple(existing), [(i, reps[i]) for i in existing], [])]

    for it, marked in enumerate(schedule, start=1):
        marked = sorted(set(marked))
        for i in marked:
            if i not in existing:
                raise InvalidScheduleError(f"iteration {it}: position {i} does not exist")
        pairs = []
        for i in marked:
            j = _nearest_right(existing, i)
            if j is None:
                raise InvalidScheduleError(f"iteration {it}: position {i} has no right neighbor")
            if j in marked:
                raise InvalidScheduleError(
                    f"iteration {it}: contiguous existing positions {i} and {j} both marked"
                )
            pairs.append((i, j))
        for i, j in pairs:
            reps[j] = cell(reps[i], reps[j])
        existing = [p for p in existing if p not in marked]
        trace.append(DiscreteStep(it, tuple(existing), [(i, reps[i]) for i in existing], pairs))

    if len(existing) != 1:
        raise InvalidScheduleError(f"schedule leaves {len(existing)} positions, not a single root")
    return reps[existing[0]], trace


def tree_to_schedule(tree) -> list:
    """Greedy level-parallel schedule for a binary tree.

    `tree` is nested 2-tuples with leaf indices (in left-to-right order) at
    the leaves.  Each internal node fires as soon as both child subtrees are
    fully reduced, so the schedule length equals the tree depth.
    """
    iterations: dict[int, list] = {}

    def walk(node):
        # returns (completion iteration, leftmost leaf, rightmost leaf)
        if not isinstance(node, tuple):
            return 0, node, node
        lit, llo, lhi = walk(node[0])
        rit, rlo, rhi = walk(node[1])
        if lhi >= rlo:
            raise ValueError("tree leaves are not in left-to-right order")
        it = max(lit, rit) + 1
        iterations.setdefault(it, []).append(lhi)
        return it, llo, rhi

    depth, _, _ = walk(tree)
    return [sorted(iterations[k]) for k in range(1, depth + 1)]


def valid_schedules(n: int):
    """Yield every valid schedule composing n leaves into one root.

    Exhaustive; intended for small n (the count grows fast).  A marked set
    is valid when it is a non-empty subset of the existing positions minus
    the last one, with no two members adjacent in existing order.
    """

    def marked_sets(existing):
        cands = existing[:-1]
        k = len(cands)

        def grow(idx, current, last_taken):
            if idx == k:
                if current:
                    yield tuple(current)
                return
            yield from grow(idx + 1, current, False)
            if not last_taken:
                current.append(cands[idx])
                yield from grow(idx + 1, current, True)
                current.pop()

        yield from grow(0, [], False)

    def rec(existing, prefix):
        if len(existing) == 1:
            yield list(prefix)
            return
        for marked in marked_sets(existing):
            rest = [p for p in existing if p not in marked]
            prefix.append(sorted(marked))
            yield from rec(rest, prefix)
            prefix.pop()

    yield from rec(list(range(n)), [])
