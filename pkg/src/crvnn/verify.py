"""Cross-checks between the continuous encoder and its discrete reference.

Two families: (1) forced-schedule agreement — run the encoder with the
decision pipeline overridden by a binary schedule and demand bit-for-bit
equality with the discrete executor using the same cell weights; (2) a
finite-difference gradient check of the whole model loss.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .discrete import run_discrete
from .gradcheck import check
from .model import CRvNN, ModelConfig, schedule_to_forced
from .tensor import Tensor, no_grad


def pair_cell(model: CRvNN):
    """Wrap the model's composition cell as a plain (left, right) -> value."""
    def cell(left: np.ndarray, right: np.ndarray) -> np.ndarray:
        with no_grad():
            out = model.compose(Tensor(left[None, None, :]),
                                Tensor(right[None, None, :]))
        return out.array[0, 0]
    return cell


def forced_agreement(model: CRvNN, ids: np.ndarray, lengths: np.ndarray,
                     schedule, leaves_include_end: bool = False) -> dict:
    """Compare a forced continuous run against the discrete executor.

    Single-row batch only.  Leaf i of the schedule is content position i;
    with leaves_include_end the last leaf is the end marker, so a full
    reduction also exercises dynamic halting.  All comparisons are exact
    (np.array_equal), not approximate.
    """
    if ids.shape[0] != 1:
        raise ValueError("forced_agreement expects a single-row batch")
    length = int(lengths[0])
    total = ids.shape[1] + 2
    forced = schedule_to_forced(schedule, length, total, leaves_include_end)
    with no_grad():
        result = model.encode(ids, lengths, forced=forced, trace=True)
        x, _, _, _ = model._embed(ids, lengths)
        leaf_reps = model.leaf_transform(x)

    n_leaves = length + 1 if leaves_include_end else length
    leaves = [leaf_reps.array[0, i + 1].copy() for i in range(n_leaves)]
    root, trace = run_discrete(leaves, schedule, pair_cell(model))

    ok_e = ok_r = True
    for k, step in enumerate(trace[1:], start=1):
        e_row = result.e_history[k - 1][0]
        want = np.zeros(n_leaves)
        want[list(step.existing)] = 1.0
        got = np.array([e_row[i + 1] for i in range(n_leaves)])
        if not np.array_equal(got, want):
            ok_e = False
        r_row = result.r_history[k - 1][0]
        for i, rep in step.items:
            if not np.array_equal(r_row[i + 1], rep):
                ok_r = False
    last = trace[-1].existing[0]
    ok_root = np.array_equal(result.r_history[-1][0][last + 1], root)
    return {"e": ok_e, "r": ok_r, "root": ok_root,
            "iterations": result.iterations,
            "halt_iteration": int(result.halt_iteration[0]),
            "all": ok_e and ok_r and ok_root}


def model_gradient_check(seed: int = 0, *, n_content: int = 6,
                         max_iterations: int = 4) -> float:
    """Worst finite-difference error over every weight of a tiny model.

    The loss is the full training objective (cross entropy plus weighted
    halt penalty).  Halting is effectively disabled and the iteration count
    pinned so perturbed runs stay on the same control path.
    """
    from .training import ClassifierHead, total_loss

    with T.precision("wide"):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(vocab_size=8, d_embed=6, d_hidden=8, d_transition=4,
                          window=1, halt_threshold=1e-9,
                          max_iterations=max_iterations)
        model = CRvNN(cfg, rng)
        head = ClassifierHead(8, 3, rng, layers=2, d_hidden=6)
        ids = rng.integers(1, 8, size=(2, n_content))
        short = max(1, n_content // 2)
        ids[1, short:] = 0
        lengths = np.array([n_content, short])
        labels = np.array([0, 2])
        names = sorted(set(model.params) | set(head.params))
        arrays = [np.array(
            (model.params.get(n) or head.params[n]).array, dtype=np.float64)
            for n in names]

    def build(*tensors):
        for n, t in zip(names, tensors):
            (model.params if n in model.params else head.params)[n] = t
        res = model.encode(ids, lengths)
        logits = head(res.encoding)
        return total_loss(logits, labels, res.penalty, 0.01)

    return check(build, arrays)
