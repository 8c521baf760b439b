"""Synthetic benchmark generators and dataset file I/O.

Two tasks:

* list operations — prefix expressions over MAX / MIN / MED / SM (sum mod
  10) with digit arguments, label = evaluated result (0-9).
* logical inference — pairs of propositional formulas over six variables
  with `not`, `and`, `or`; label = one of seven entailment-style relations
  computed exactly from truth tables over the 64 assignments.

File format: one sample per line, tab separated — ``sequence<TAB>label``
or ``premise<TAB>hypothesis<TAB>label``.  The reader also accepts the
published label-first layouts for both tasks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD = "<pad>"

# ------------------------------------------------------------------ vocab


class Vocab:
    """Fixed token <-> id mapping; id 0 is padding."""

    def __init__(self, tokens):
        self.tokens = [PAD] + list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.index[t] for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]


LISTOPS_OPERATORS = ("[MAX", "[MIN", "[MED", "[SM")
LISTOPS_CLOSE = "]"
LOGIC_VARIABLES = tuple("abcdef")
LOGIC_RELATIONS = ("=", "<", ">", "^", "|", "v", "#")


def listops_vocab() -> Vocab:
    return Vocab(list(LISTOPS_OPERATORS) + [LISTOPS_CLOSE] + [str(d) for d in range(10)])


def logic_vocab() -> Vocab:
    return Vocab(["(", ")", "not", "and", "or"] + list(LOGIC_VARIABLES))


@dataclass
class Sample:
    tokens: list
    label: int


@dataclass
class PairSample:
    premise: list
    hypothesis: list
    label: int


# -------------------------------------------------------------- list ops


def evaluate_listops(tokens) -> int:
    """Evaluate a prefix list-operations expression.

    MED of an even argument count takes the lower median.
    """
    pos = 0

    def parse():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok not in LISTOPS_OPERATORS:
            return int(tok)
        args = []
        while tokens[pos] != LISTOPS_CLOSE:
            args.append(parse())
        pos += 1
        if tok == "[MAX":
            return max(args)
        if tok == "[MIN":
            return min(args)
        if tok == "[MED":
            return sorted(args)[(len(args) - 1) // 2]
        return sum(args) % 10

    value = parse()
    if pos != len(tokens):
        raise ValueError("trailing tokens after expression")
    return value


def _listops_tree(rng: np.random.Generator, depth_left: int, max_args: int,
                  nest_probability: float):
    if depth_left <= 0 or rng.random() >= nest_probability:
        return int(rng.integers(0, 10))
    op = LISTOPS_OPERATORS[rng.integers(0, len(LISTOPS_OPERATORS))]
    n_args = int(rng.integers(2, max_args + 1))
    return (op, [_listops_tree(rng, depth_left - 1, max_args, nest_probability)
                 for _ in range(n_args)])


def _render_listops(tree) -> list:
    if isinstance(tree, int):
        return [str(tree)]
    op, children = tree
    out = [op]
    for ch in children:
        out.extend(_render_listops(ch))
    out.append(LISTOPS_CLOSE)
    return out


def generate_listops(count: int, rng: np.random.Generator, *, max_depth: int = 4,
                     max_args: int = 5, min_length: int = 1, max_length: int = 50,
                     nest_probability: float = 0.4, seen: set | None = None) -> list:
    """Rejection-sample `count` expressions within the length window."""
    samples = []
    while len(samples) < count:
        op = LISTOPS_OPERATORS[rng.integers(0, len(LISTOPS_OPERATORS))]
        n_args = int(rng.integers(2, max_args + 1))
        tree = (op, [_listops_tree(rng, max_depth - 1, max_args, nest_probability)
                     for _ in range(n_args)])
        tokens = _render_listops(tree)
        if not min_length <= len(tokens) <= max_length:
            continue
        if seen is not None:
            key = tuple(tokens)
            if key in seen:
                continue
            seen.add(key)
        samples.append(Sample(tokens, evaluate_listops(tokens)))
    return samples


# ------------------------------------------------------------- logic task

_N_ASSIGNMENTS = 1 << len(LOGIC_VARIABLES)
_FULL_MASK = (1 << _N_ASSIGNMENTS) - 1
_VAR_MASKS = []
for _v in range(len(LOGIC_VARIABLES)):
    _m = 0
    for _a in range(_N_ASSIGNMENTS):
        if (_a >> _v) & 1:
            _m |= 1 << _a
    _VAR_MASKS.append(_m)


def formula_mask(tree) -> int:
    """Bitmask of satisfying assignments over the 64 variable settings."""
    kind = tree[0]
    if kind == "var":
        return _VAR_MASKS[tree[1]]
    if kind == "not":
        return ~formula_mask(tree[1]) & _FULL_MASK
    lm, rm = formula_mask(tree[1]), formula_mask(tree[2])
    return (lm & rm) if kind == "and" else (lm | rm)


def relation(premise, hypothesis) -> str:
    """Seven-way natural-logic relation between two formulas."""
    a, b = formula_mask(premise), formula_mask(hypothesis)
    if a == b:
        return "="
    if a & ~b == 0:
        return "<"
    if b & ~a == 0:
        return ">"
    if a & b == 0:
        return "^" if (a | b) == _FULL_MASK else "|"
    if (a | b) == _FULL_MASK:
        return "v"
    return "#"


def sample_formula(rng: np.random.Generator, n_ops: int):
    if n_ops == 0:
        return ("var", int(rng.integers(0, len(LOGIC_VARIABLES))))
    if rng.random() < 0.25:
        return ("not", sample_formula(rng, n_ops - 1))
    left_ops = int(rng.integers(0, n_ops))
    op = "and" if rng.random() < 0.5 else "or"
    return (op, sample_formula(rng, left_ops), sample_formula(rng, n_ops - 1 - left_ops))


def render_formula(tree) -> list:
    kind = tree[0]
    if kind == "var":
        return [LOGIC_VARIABLES[tree[1]]]
    if kind == "not":
        return ["(", "not", *render_formula(tree[1]), ")"]
    return ["(", *render_formula(tree[1]), "(", kind, *render_formula(tree[2]), ")", ")"]


def parse_formula(tokens):
    """Inverse of render_formula."""
    pos = 0

    def parse():
        nonlocal pos
        tok = tokens[pos]
        if tok != "(":
            pos += 1
            return ("var", LOGIC_VARIABLES.index(tok))
        pos += 1
        if tokens[pos] == "not":
            pos += 1
            inner = parse()
            pos += 1  # ')'
            return ("not", inner)
        left = parse()
        pos += 1  # '('
        op = tokens[pos]
        pos += 1
        right = parse()
        pos += 2  # ') )'
        return (op, left, right)

    tree = parse()
    if pos != len(tokens):
        raise ValueError("trailing tokens after formula")
    return tree


def count_ops(tokens) -> int:
    return sum(1 for t in tokens if t in ("not", "and", "or"))


def pair_ops(sample: PairSample) -> int:
    """Operation count of a pair = max over its two sides."""
    return max(count_ops(sample.premise), count_ops(sample.hypothesis))


def generate_logic_pairs(count: int, rng: np.random.Generator, *, max_ops: int = 6,
                         min_ops: int = 0, exact_ops: int | None = None,
                         balance: bool = True, seen: set | None = None) -> list:
    """Sample labeled formula pairs.

    With `balance`, per-relation quotas reject over-represented labels
    (random pairs are dominated by independence) until attempts run out;
    the remainder is filled unconditionally.  `exact_ops` pins the pair's
    op count (max over sides) for building per-complexity test buckets.
    """
    quota = -(-count // len(LOGIC_RELATIONS))  # ceil
    counts = {r: 0 for r in LOGIC_RELATIONS}
    samples = []
    attempts = 0
    max_attempts = 200 * count

    def draw_sides():
        if exact_ops is not None:
            a, b = exact_ops, int(rng.integers(min_ops, exact_ops + 1))
            return (a, b) if rng.random() < 0.5 else (b, a)
        return (int(rng.integers(min_ops, max_ops + 1)),
                int(rng.integers(min_ops, max_ops + 1)))

    while len(samples) < count and attempts < max_attempts:
        attempts += 1
        ops_p, ops_h = draw_sides()
        prem = sample_formula(rng, ops_p)
        hyp = sample_formula(rng, ops_h)
        rel = relation(prem, hyp)
        if balance and counts[rel] >= quota:
            continue
        ptoks, htoks = render_formula(prem), render_formula(hyp)
        if seen is not None:
            key = (tuple(ptoks), tuple(htoks))
            if key in seen:
                continue
            seen.add(key)
        counts[rel] += 1
        samples.append(PairSample(ptoks, htoks, LOGIC_RELATIONS.index(rel)))

    while len(samples) < count:  # quotas unfillable; top up unconditionally
        ops_p, ops_h = draw_sides()
        prem = sample_formula(rng, ops_p)
        hyp = sample_formula(rng, ops_h)
        samples.append(PairSample(render_formula(prem), render_formula(hyp),
                                  LOGIC_RELATIONS.index(relation(prem, hyp))))
    return samples


# --------------------------------------------------- systematicity splits

SPLIT_PATTERNS = ("A", "B", "C")


def _matches_split(tree, pattern: str) -> bool:
    kind = tree[0]
    if kind == "var":
        return False
    if kind == "not":
        return _matches_split(tree[1], pattern)
    ops = ("and",) if pattern in ("A", "B") else ("and", "or")
    right = tree[2]
    if kind in ops and right[0] == "not":
        if pattern == "A":
            if right[1] == ("var", 0):
                return True
        else:
            return True
    return _matches_split(tree[1], pattern) or _matches_split(tree[2], pattern)


def matches_split(sample: PairSample, pattern: str) -> bool:
    """True when either side contains the held-out construction.

    A: a conjunction whose right operand is (not a);
    B: a conjunction whose right operand is any negation;
    C: a conjunction or disjunction whose right operand is any negation.
    """
    if pattern not in SPLIT_PATTERNS:
        raise ValueError(f"pattern must be one of {SPLIT_PATTERNS}")
    return (_matches_split(parse_formula(sample.premise), pattern)
            or _matches_split(parse_formula(sample.hypothesis), pattern))


def split_systematicity(pairs, pattern: str):
    """Partition pairs into (train_pool, test_pool) by pattern match."""
    train, test = [], []
    for s in pairs:
        (test if matches_split(s, pattern) else train).append(s)
    return train, test


# ----------------------------------------------------------------- buckets


def assign_buckets(values, edges) -> dict:
    """Group indices by half-open windows [edges[k], edges[k+1]).

    Values outside every window are dropped.  Returns an ordered mapping
    of "lo-hi" labels to index lists.
    """
    edges = list(edges)
    buckets = {f"{edges[k]}-{edges[k + 1]}": [] for k in range(len(edges) - 1)}
    for i, v in enumerate(values):
        for k in range(len(edges) - 1):
            if edges[k] <= v < edges[k + 1]:
                buckets[f"{edges[k]}-{edges[k + 1]}"].append(i)
                break
    return buckets


# ------------------------------------------------------------------- files


def write_samples(path, samples):
    with open(path, "w") as fh:
        for s in samples:
            if isinstance(s, PairSample):
                fh.write(f"{' '.join(s.premise)}\t{' '.join(s.hypothesis)}\t"
                         f"{LOGIC_RELATIONS[s.label]}\n")
            else:
                fh.write(f"{' '.join(s.tokens)}\t{s.label}\n")


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def read_samples(path, task: str) -> list:
    """Read a dataset file; accepts native and published column orders."""
    samples = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if task == "listops":
                if len(cols) != 2:
                    raise ValueError(f"{path}:{line_no}: expected 2 columns")
                if _is_int(cols[1]):
                    seq, label = cols[0], int(cols[1])
                elif _is_int(cols[0]):
                    seq, label = cols[1], int(cols[0])
                else:
                    raise ValueError(f"{path}:{line_no}: no label column")
                # published layout wraps expressions in ( ) — drop them
                toks = [t for t in seq.split() if t not in ("(", ")")]
                samples.append(Sample(toks, label))
            elif task == "logic":
                if len(cols) != 3:
                    raise ValueError(f"{path}:{line_no}: expected 3 columns")
                if cols[2] in LOGIC_RELATIONS:
                    prem, hyp, rel = cols[0], cols[1], cols[2]
                elif cols[0] in LOGIC_RELATIONS:
                    rel, prem, hyp = cols[0], cols[1], cols[2]
                else:
                    raise ValueError(f"{path}:{line_no}: no relation column")
                samples.append(PairSample(prem.split(), hyp.split(),
                                          LOGIC_RELATIONS.index(rel)))
            else:
                raise ValueError(f"unknown task {task!r}")
    return samples
