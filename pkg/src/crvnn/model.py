"""Latent-tree sequence encoder with soft composition decisions.

The encoder keeps, per position, a representation r and an existential
probability e.  Each iteration it scores positions with a windowed
decision function, converts scores to composition probabilities c
(optionally modulated by neighbor scores), softly composes every position
into its nearest existing right neighbor, and decays e by (1 - c).
Sequences halt once every content position has effectively stopped
existing; the root accumulates at the per-row END token.

Special layout: column 0 is START, column lengths[b] + 1 is that row's
END, later columns are padding.  START and END are forced to c = 0 and
keep e = 1; padding keeps e = 0.  The forced END also carries the final
encoding.

Binary c schedules reproduce the discrete oracle exactly: retrieval rows
become one-hot neighbor indicators and the convex update degenerates to
a hard overwrite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    concat,
    cumsum,
    dropout,
    embedding,
    exp,
    flip,
    gather_rows,
    gelu,
    layer_norm,
    log,
    maximum,
    minimum,
    relu,
    sigmoid,
    tanh,
)

RETRIEVERS = ("cumulative", "logspace")
GATES = ("modulated", "plain")
COMPOSERS = ("gated", "memory")
STRUCTURES = ("induced", "sequential")


@dataclass
class ModelConfig:
    vocab_size: int
    d_embed: int = 128
    d_hidden: int = 128
    d_cell: int = 0              # 0 means 4 * d_hidden
    d_transition: int = 64
    window: int = 2              # decision function sees 2*window + 1 taps
    retriever: str = "cumulative"
    gate: str = "modulated"
    composer: str = "gated"
    structure: str = "induced"
    transition_features: bool = True
    cell_activation: str = "gelu"
    halt_threshold: float = 0.01
    max_iterations: int = 0      # 0 means content length of the batch
    input_dropout: float = 0.0
    hidden_dropout: float = 0.0

    def __post_init__(self):
        if self.d_cell == 0:
            self.d_cell = 4 * self.d_hidden
        if self.retriever not in RETRIEVERS:
            raise ValueError(f"retriever must be one of {RETRIEVERS}")
        if self.gate not in GATES:
            raise ValueError(f"gate must be one of {GATES}")
        if self.composer not in COMPOSERS:
            raise ValueError(f"composer must be one of {COMPOSERS}")
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if not 0.0 < self.halt_threshold < 1.0:
            raise ValueError("halt_threshold must lie strictly between 0 and 1")


@dataclass
class EncodeResult:
    encoding: Tensor             # (B, d_hidden) root representation per row
    e_final: Tensor              # (B, P) existential probabilities
    penalty: Tensor              # (B,) halt penalty
    iterations: int              # iterations actually run
    halt_iteration: np.ndarray   # (B,) first iteration each row halted
    c_history: list = field(default_factory=list)   # per-iteration (B, P) c values
    r_history: list = field(default_factory=list)   # per-iteration (B, P, d) reps (trace only)
    e_history: list = field(default_factory=list)   # per-iteration (B, P) e values (trace only)
    end_positions: np.ndarray | None = None


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _affine(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return _uniform(rng, shape, 1.0 / np.sqrt(fan_in))


def retrieval_right(e: Tensor, mode: str = "cumulative") -> Tensor:
    """Soft nearest-existing-right-neighbor weights, shape (B, P, P).

    Row i spreads at most one unit of mass over the columns to its right:
    each column j takes e_j until the running mass Sum_{l=i+1..j} e_l
    exceeds 1, then only the remainder.  Rows are substochastic; on binary
    e rows are exact nearest-neighbor indicators.
    """
    b, p = e.shape
    upper = Tensor(np.triu(np.ones((p, p)), k=1))
    ej = e.reshape(b, 1, p)
    if mode == "cumulative":
        cum = cumsum(e, 1)
        span = cum.reshape(b, 1, p) - cum.reshape(b, p, 1)  # Sum_{l=i+1..j} e_l
        weights = minimum(ej, relu(1.0 - (span - ej)))
    elif mode == "logspace":
        margin = 1e-6
        logw = log(1.0 - minimum(e, 1.0 - margin))          # log max(1-e, margin)
        t = cumsum(logw, 1)
        tprev = concat([Tensor(np.zeros((b, 1))), t[:, :-1]], 1)
        inner = tprev.reshape(b, 1, p) - t.reshape(b, p, 1)  # Sum_{l=i+1..j-1} log w_l
        # inner <= 0 wherever j > i; clamp the meaningless lower triangle
        # too, else it can overflow exp and poison the final mask multiply
        weights = ej * exp(minimum(inner, 0.0))
        # the log-domain clamp leaks exp(k log margin) through saturated
        # positions; hard-zero any span containing an interior e >= 1
        hard = np.cumsum(e.array >= 1.0, axis=1)
        hardprev = np.concatenate([np.zeros((b, 1)), hard[:, :-1]], axis=1)
        blocked = (hardprev[:, None, :] - hard[:, :, None]) > 0
        weights = weights * Tensor(~blocked)
    else:
        raise ValueError(f"unknown retriever mode {mode!r}")
    return weights * upper


def retrieval_left(e: Tensor, mode: str = "cumulative") -> Tensor:
    """Mirror of retrieval_right: reverse, retrieve right, reverse back."""
    return flip(retrieval_right(flip(e, (1,)), mode), (1, 2))


def schedule_to_forced(schedule, length: int, total_positions: int,
                       leaves_include_end: bool = False) -> list:
    """Map a discrete schedule over leaf indices into padded-column c rows.

    Leaf i sits at column i + 1; when the last leaf stands for the END
    token it sits at column length + 1 instead.  Returns one (P,) float
    array per iteration.
    """
    n_leaves = length + 1 if leaves_include_end else length
    rows = []
    for marked in schedule:
        row = np.zeros(total_positions)
        for leaf in marked:
            if leaves_include_end and leaf == n_leaves - 1:
                row[length + 1] = 1.0
            else:
                row[leaf + 1] = 1.0
        rows.append(row)
    return rows


class CRvNN:
    """Continuous recursive encoder over token id sequences."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config
        p: dict[str, Tensor] = {}

        def param(name, array):
            p[name] = Tensor(array, requires_grad=True)

        param("embed.table", _uniform(rng, (c.vocab_size, c.d_embed), 0.05))
        param("embed.start", _uniform(rng, (c.d_embed,), 0.05))
        param("embed.end", _uniform(rng, (c.d_embed,), 0.05))
        param("leaf.weight", _affine(rng, c.d_embed, (c.d_embed, c.d_hidden)))
        param("leaf.bias", np.zeros(c.d_hidden))
        param("leaf.ln_gain", np.ones(c.d_hidden))
        param("leaf.ln_bias", np.zeros(c.d_hidden))

        if c.structure == "induced":
            d_aug = c.d_hidden + (c.d_transition if c.transition_features else 0)
            if c.transition_features:
                param("transition.composed", _uniform(rng, (c.d_transition,), 0.05))
                param("transition.idle", _uniform(rng, (c.d_transition,), 0.05))
            for k in range(2 * c.window + 1):
                param(f"decision.conv{k}", _affine(rng, d_aug, (d_aug, c.d_hidden)))
            param("decision.conv_bias", np.zeros(c.d_hidden))
            param("decision.out_weight", _affine(rng, c.d_hidden, (c.d_hidden, 1)))
            param("decision.out_bias", np.zeros(1))

        if c.composer == "gated":
            param("cell.in_weight", _affine(rng, 2 * c.d_hidden, (2 * c.d_hidden, c.d_cell)))
            param("cell.in_bias", np.zeros(c.d_cell))
            param("cell.out_weight", _affine(rng, c.d_cell, (c.d_cell, 4 * c.d_hidden)))
            param("cell.out_bias", np.zeros(4 * c.d_hidden))
            param("cell.ln_gain", np.ones(c.d_hidden))
            param("cell.ln_bias", np.zeros(c.d_hidden))
        else:  # input/forget/output-gated memory cell, state = representation
            param("cell.gate_weight", _affine(rng, 2 * c.d_hidden, (2 * c.d_hidden, 4 * c.d_hidden)))
            param("cell.gate_bias", np.zeros(4 * c.d_hidden))

        self.params = p

    # ------------------------------------------------------------ pieces

    def leaf_transform(self, x: Tensor) -> Tensor:
        """Affine then layer norm, mapping embeddings to leaf states."""
        p = self.params
        return layer_norm(x @ p["leaf.weight"] + p["leaf.bias"],
                          p["leaf.ln_gain"], p["leaf.ln_bias"])

    def compose(self, left: Tensor, right: Tensor, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Compose a (left, right) pair of states into a parent state."""
        c, p = self.config, self.params
        d = c.d_hidden
        x = concat([left, right], -1)
        if c.composer == "gated":
            h = x @ p["cell.in_weight"] + p["cell.in_bias"]
            h = gelu(h) if c.cell_activation == "gelu" else relu(h)
            h = dropout(h, c.hidden_dropout, rng, training)
            gates = h @ p["cell.out_weight"] + p["cell.out_bias"]
            keep_left = sigmoid(gates[..., 0:d])
            keep_right = sigmoid(gates[..., d:2 * d])
            keep_new = sigmoid(gates[..., 2 * d:3 * d])
            candidate = gates[..., 3 * d:]
            mix = keep_left * left + keep_right * right + keep_new * candidate
            return layer_norm(mix, p["cell.ln_gain"], p["cell.ln_bias"])
        gates = x @ p["cell.gate_weight"] + p["cell.gate_bias"]
        into = sigmoid(gates[..., 0:d])
        forget = sigmoid(gates[..., d:2 * d])
        out = sigmoid(gates[..., 2 * d:3 * d])
        candidate = tanh(gates[..., 3 * d:])
        memory = forget * right + into * candidate
        return out * tanh(memory)

    def decision_scores(self, ra: Tensor, p_left: Tensor, p_right: Tensor) -> Tensor:
        """Windowed convolution over soft neighbor retrievals -> (B, P)."""
        c, p = self.config, self.params
        taps = [ra]
        cur = ra
        for _ in range(c.window):
            cur = p_left @ cur
            taps.insert(0, cur)
        cur = ra
        for _ in range(c.window):
            cur = p_right @ cur
            taps.append(cur)
        h = taps[0] @ p["decision.conv0"]
        for k in range(1, len(taps)):
            h = h + taps[k] @ p[f"decision.conv{k}"]
        h = gelu(h + p["decision.conv_bias"])
        u = h @ p["decision.out_weight"] + p["decision.out_bias"]
        b, pos = ra.shape[0], ra.shape[1]
        return u.reshape(b, pos)

    def composition_probabilities(self, u: Tensor, p_left: Tensor, p_right: Tensor,
                                  allowed: np.ndarray) -> Tensor:
        """Scores to probabilities; forced zeros applied via `allowed` mask."""
        c = self.config
        if c.gate == "plain":
            probs = sigmoid(u)
        else:
            b, pos = u.shape
            u3 = u.reshape(b, pos, 1)
            left_u = (p_left @ u3).reshape(b, pos)
            right_u = (p_right @ u3).reshape(b, pos)
            # stabilizing shift; mathematically cancels, so keep it off-tape
            m = np.maximum.reduce([u.array, left_u.array, right_u.array,
                                   np.zeros_like(u.array)])
            shift = Tensor(m)
            num = exp(u - shift)
            den = num + exp(left_u - shift) + exp(right_u - shift) + exp(-shift)
            probs = num / den
        return probs * Tensor(allowed)

    def transition_features(self, prev_alpha: Tensor) -> Tensor:
        """Blend 'just composed' vs 'idle' signal vectors by prev alpha."""
        p = self.params
        return prev_alpha * p["transition.composed"] + (1.0 - prev_alpha) * p["transition.idle"]

    def halt_penalty(self, e_final: Tensor, penalty_mask: np.ndarray,
                     end_positions: np.ndarray) -> Tensor:
        """Per-row -log of the END share of remaining existence mass."""
        num = gather_rows(e_final, end_positions)
        den = maximum((e_final * Tensor(penalty_mask)).sum(1), 1e-9)
        return -log(num / den)

    # ------------------------------------------------------------ encode

    def _embed(self, ids: np.ndarray, lengths: np.ndarray):
        c, p = self.config, self.params
        b, content = ids.shape
        total = content + 2
        cols = np.arange(total)
        content_mask = (cols[None, :] >= 1) & (cols[None, :] <= lengths[:, None])
        end_onehot = (cols[None, :] == (lengths[:, None] + 1)).astype(float)

        emb = embedding(p["embed.table"], ids) * Tensor(content_mask[:, 1:-1, None])
        start = Tensor(np.zeros((b, 1, c.d_embed))) + p["embed.start"]
        x = concat([start, emb, Tensor(np.zeros((b, 1, c.d_embed)))], 1)
        x = x + Tensor(end_onehot[:, :, None]) * p["embed.end"]

        valid = content_mask | (cols[None, :] == 0) | (end_onehot > 0)
        return x, content_mask, end_onehot, valid

    def encode(self, ids: np.ndarray, lengths: np.ndarray, *,
               training: bool = False, rng: np.random.Generator | None = None,
               forced=None, trace: bool = False) -> EncodeResult:
        """Encode padded id rows; returns root encodings and halting info.

        forced: optional list of (B, P) binary c arrays that override the
        decision pipeline (the run then lasts at most len(forced)
        iterations).  trace: record per-iteration representations.
        """
        ids = np.asarray(ids)
        lengths = np.asarray(lengths)
        if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
            raise ValueError("ids must be (B, L) with lengths of shape (B,)")
        if np.any(lengths < 1) or np.any(lengths > ids.shape[1]):
            raise ValueError("lengths must lie in [1, L]")
        c = self.config
        if c.structure == "sequential":
            return self._encode_sequential(ids, lengths, training, rng)

        b, content = ids.shape
        total = content + 2
        x, content_mask, end_onehot, valid = self._embed(ids, lengths)
        x = dropout(x, c.input_dropout, rng, training)
        r = self.leaf_transform(x)

        e = Tensor(valid.astype(float))
        allowed_base = content_mask.astype(float)        # c forced 0 at START/END/pad
        penalty_mask = (content_mask | (end_onehot > 0)).astype(float)
        end_positions = (lengths + 1).astype(int)

        cap = c.max_iterations if c.max_iterations > 0 else max(1, int(lengths.max()))
        if forced is not None:
            cap = min(cap, len(forced))
        halted = np.zeros(b, dtype=bool)
        halt_iteration = np.full(b, cap, dtype=int)
        prev_alpha = Tensor(np.zeros((b, total, 1)))
        c_history: list[np.ndarray] = []
        r_history: list[np.ndarray] = []
        e_history: list[np.ndarray] = []

        k = 0
        while k < cap and not halted.all():
            if c.transition_features:
                ra = concat([r, self.transition_features(prev_alpha)], -1)
            else:
                ra = r
            p_left = retrieval_left(e, c.retriever)
            p_right = retrieval_right(e, c.retriever)

            allowed = allowed_base * ~halted[:, None]
            if forced is not None:
                probs = Tensor(np.asarray(forced[k], dtype=float)) * Tensor(allowed)
            else:
                u = self.decision_scores(ra, p_left, p_right)
                probs = self.composition_probabilities(u, p_left, p_right, allowed)

            alpha = p_left @ probs.reshape(b, total, 1)
            left_r = p_left @ r
            composed = self.compose(left_r, r, training, rng)
            r = alpha * composed + (1.0 - alpha) * r
            e = e * (1.0 - probs)
            prev_alpha = alpha
            k += 1

            c_history.append(probs.array.copy())
            if trace:
                r_history.append(r.array.copy())
                e_history.append(e.array.copy())
            content_alive = np.where(content_mask, e.array, 0.0)
            now_halted = ~(content_alive >= c.halt_threshold).any(axis=1)
            halt_iteration[now_halted & ~halted] = k
            halted |= now_halted

        encoding = gather_rows(r, end_positions)
        penalty = self.halt_penalty(e, penalty_mask, end_positions)
        return EncodeResult(
            encoding=encoding,
            e_final=e,
            penalty=penalty,
            iterations=k,
            halt_iteration=halt_iteration,
            c_history=c_history,
            r_history=r_history,
            e_history=e_history,
            end_positions=end_positions,
        )

    def _encode_sequential(self, ids, lengths, training, rng) -> EncodeResult:
        """Fold content left-to-right with the composition cell only."""
        c = self.config
        b, content = ids.shape
        x, content_mask, _end_onehot, _valid = self._embed(ids, lengths)
        x = dropout(x, c.input_dropout, rng, training)
        r = self.leaf_transform(x)

        state = r[:, 0]
        for t in range(1, content + 1):
            step = Tensor(content_mask[:, t:t + 1].astype(float))
            state = step * self.compose(state, r[:, t], training, rng) + (1.0 - step) * state

        e_final = Tensor(np.zeros((b, content + 2)))
        return EncodeResult(
            encoding=state,
            e_final=e_final,
            penalty=Tensor(np.zeros(b)),
            iterations=int(lengths.max()),
            halt_iteration=lengths.astype(int).copy(),
            end_positions=(lengths + 1).astype(int),
        )
