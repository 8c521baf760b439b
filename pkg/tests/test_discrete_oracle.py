"""Discrete schedule executor: reference traces, error cases, enumeration."""
from math import comb

import pytest

from crvnn.discrete import (
    InvalidScheduleError,
    run_discrete,
    tree_to_schedule,
    valid_schedules,
)


def pair(left, right):
    return f"({left} {right})"


LEAVES6 = ["x1", "x2", "x3", "x4", "x5", "x6"]
SCHEDULE6 = [[1, 4], [0, 3], [2]]


def test_six_leaf_walkthrough_root():
    root, trace = run_discrete(LEAVES6, SCHEDULE6, pair)
    assert root == "((x1 (x2 x3)) (x4 (x5 x6)))"
    assert len(trace) == 4  # initial state + three iterations


def test_six_leaf_walkthrough_trace():
    _, trace = run_discrete(LEAVES6, SCHEDULE6, pair)
    assert trace[0].existing == (0, 1, 2, 3, 4, 5)
    assert trace[0].compositions == []

    assert trace[1].existing == (0, 2, 3, 5)
    assert trace[1].compositions == [(1, 2), (4, 5)]
    assert dict(trace[1].items)[2] == "(x2 x3)"
    assert dict(trace[1].items)[5] == "(x5 x6)"

    assert trace[2].existing == (2, 5)
    assert trace[2].compositions == [(0, 2), (3, 5)]
    assert dict(trace[2].items)[2] == "(x1 (x2 x3))"
    assert dict(trace[2].items)[5] == "(x4 (x5 x6))"

    assert trace[3].existing == (5,)
    assert trace[3].compositions == [(2, 5)]


def test_compositions_read_iteration_start_state():
    # both marks in one iteration see pre-iteration neighbors: 0 composes
    # into 1 even though 1 composes away in the same iteration
    root, trace = run_discrete(["a", "b", "c", "d"], [[0, 2], [1]], pair)
    assert trace[1].compositions == [(0, 1), (2, 3)]
    assert root == "((a b) (c d))"


def test_single_leaf_trivial():
    root, trace = run_discrete(["only"], [], pair)
    assert root == "only"
    assert len(trace) == 1


def test_marking_missing_position_rejected():
    with pytest.raises(InvalidScheduleError):
        run_discrete(LEAVES6, [[1], [1]], pair)


def test_marking_rightmost_rejected():
    with pytest.raises(InvalidScheduleError):
        run_discrete(["a", "b"], [[1]], pair)


def test_marking_adjacent_existing_rejected():
    with pytest.raises(InvalidScheduleError):
        run_discrete(["a", "b", "c"], [[0, 1]], pair)
    # adjacency is in existing order, not original index order
    with pytest.raises(InvalidScheduleError):
        run_discrete(["a", "b", "c", "d"], [[1], [0, 2]], pair)


def test_incomplete_schedule_rejected():
    with pytest.raises(InvalidScheduleError):
        run_discrete(["a", "b", "c"], [[0]], pair)


def all_trees(lo, hi):
    if hi - lo == 1:
        yield lo
        return
    for mid in range(lo + 1, hi):
        for left in all_trees(lo, mid):
            for right in all_trees(mid, hi):
                yield (left, right)


def bracketed(tree):
    if not isinstance(tree, tuple):
        return f"x{tree}"
    return pair(bracketed(tree[0]), bracketed(tree[1]))


def test_tree_schedule_round_trip_all_trees_up_to_six_leaves():
    for n in range(1, 7):
        trees = list(all_trees(0, n))
        assert len(trees) == [1, 1, 2, 5, 14][n - 1] if n <= 5 else True
        for tree in trees:
            schedule = tree_to_schedule(tree)
            root, _ = run_discrete([f"x{i}" for i in range(n)], schedule, pair)
            assert root == bracketed(tree)


def test_tree_schedule_is_level_parallel():
    # balanced 8-leaf tree reduces in exactly 3 iterations
    tree = (((0, 1), (2, 3)), ((4, 5), (6, 7)))
    schedule = tree_to_schedule(tree)
    assert schedule == [[0, 2, 4, 6], [1, 5], [3]]


def test_tree_with_out_of_order_leaves_rejected():
    with pytest.raises(ValueError):
        tree_to_schedule((1, 0))


def schedule_count(n: int) -> int:
    # independent recurrence: a marked set is a non-empty non-adjacent
    # subset of the first n-1 existing positions; subsets of size k from a
    # row of m candidates number C(m - k + 1, k)
    counts = {1: 1}
    for m in range(2, n + 1):
        total = 0
        for k in range(1, m):
            total += comb((m - 1) - k + 1, k) * counts[m - k]
        counts[m] = total
    return counts[n]


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_valid_schedule_enumeration(n):
    schedules = list(valid_schedules(n))
    keys = {tuple(tuple(it) for it in s) for s in schedules}
    assert len(keys) == len(schedules)  # no duplicates
    assert len(schedules) == schedule_count(n)
    for s in schedules:
        root, _ = run_discrete([f"x{i}" for i in range(n)], s, pair)
        assert root.count("x") == n  # every leaf folded in exactly once


def test_known_schedule_counts():
    assert [schedule_count(n) for n in range(1, 7)] == [1, 1, 2, 7, 34, 214]
    assert len(list(valid_schedules(4))) == 7
