"""Synthetic task generators: labels, balance, splits, file round trips."""
import itertools

import numpy as np
import pytest

from crvnn.data import (
    LOGIC_RELATIONS,
    LOGIC_VARIABLES,
    PairSample,
    Sample,
    assign_buckets,
    count_ops,
    evaluate_listops,
    formula_mask,
    generate_listops,
    generate_logic_pairs,
    listops_vocab,
    logic_vocab,
    matches_split,
    pair_ops,
    parse_formula,
    read_samples,
    relation,
    render_formula,
    sample_formula,
    split_systematicity,
    write_samples,
)


def eval_listops_stack(tokens):
    """Independent stack-based evaluator for cross-checking labels."""
    stack = []
    for tok in tokens:
        if tok == "]":
            args = []
            while not isinstance(stack[-1], str):
                args.append(stack.pop())
            op = stack.pop()
            args.reverse()
            value = {"[MAX": max, "[MIN": min,
                     "[MED": lambda a: sorted(a)[(len(a) - 1) // 2],
                     "[SM": lambda a: sum(a) % 10}[op](args)
            stack.append(int(value))
        elif tok.startswith("["):
            stack.append(tok)
        else:
            stack.append(int(tok))
    assert len(stack) == 1
    return stack[0]


def eval_formula(tree, assignment):
    """Independent recursive evaluator for cross-checking relations."""
    kind = tree[0]
    if kind == "var":
        return assignment[tree[1]]
    if kind == "not":
        return not eval_formula(tree[1], assignment)
    left, right = eval_formula(tree[1], assignment), eval_formula(tree[2], assignment)
    return (left and right) if kind == "and" else (left or right)


def relation_brute_force(prem, hyp):
    p_true, h_true = set(), set()
    for bits in itertools.product([False, True], repeat=len(LOGIC_VARIABLES)):
        if eval_formula(prem, bits):
            p_true.add(bits)
        if eval_formula(hyp, bits):
            h_true.add(bits)
    total = 2 ** len(LOGIC_VARIABLES)
    if p_true == h_true:
        return "="
    if p_true <= h_true:
        return "<"
    if h_true <= p_true:
        return ">"
    if not (p_true & h_true):
        return "^" if len(p_true | h_true) == total else "|"
    return "v" if len(p_true | h_true) == total else "#"


# -------------------------------------------------------------- list ops


def test_listops_hand_values():
    assert evaluate_listops("[MAX 2 9 ]".split()) == 9
    assert evaluate_listops("[SM 5 6 7 ]".split()) == 8
    assert evaluate_listops("[MED 1 2 3 4 ]".split()) == 2  # lower median
    assert evaluate_listops("[MIN [MAX 2 9 ] 4 ]".split()) == 4
    assert evaluate_listops("[MAX 2 9 [MIN 4 7 ] 0 ]".split()) == 9
    assert evaluate_listops(["7"]) == 7


def test_listops_rejects_trailing_tokens():
    with pytest.raises(ValueError):
        evaluate_listops("[MAX 2 9 ] 5".split())


def test_listops_generator_labels_and_window(rng):
    samples = generate_listops(300, rng, max_depth=4, max_args=5,
                               min_length=5, max_length=40)
    assert len(samples) == 300
    for s in samples:
        assert 5 <= len(s.tokens) <= 40
        assert s.label == eval_listops_stack(s.tokens)
        assert s.label == evaluate_listops(s.tokens)


def test_listops_generator_deterministic():
    a = generate_listops(50, np.random.default_rng(9))
    b = generate_listops(50, np.random.default_rng(9))
    assert [(s.tokens, s.label) for s in a] == [(s.tokens, s.label) for s in b]


def test_listops_generator_dedups_across_calls(rng):
    seen = set()
    a = generate_listops(200, rng, max_length=20, seen=seen)
    b = generate_listops(200, rng, max_length=20, seen=seen)
    keys = {tuple(s.tokens) for s in a} | {tuple(s.tokens) for s in b}
    assert len(keys) == 400


def test_listops_depth_budget(rng):
    def depth(tokens):
        level = worst = 0
        for t in tokens:
            if t.startswith("["):
                level += 1
                worst = max(worst, level)
            elif t == "]":
                level -= 1
        return worst

    for s in generate_listops(200, rng, max_depth=3, max_length=60):
        assert 1 <= depth(s.tokens) <= 3


# ------------------------------------------------------------------ logic


def test_relation_hand_cases():
    a = ("var", 0)
    b = ("var", 1)
    assert relation(a, a) == "="
    assert relation(a, ("or", a, b)) == "<"
    assert relation(("or", a, b), a) == ">"
    assert relation(a, ("not", a)) == "^"
    assert relation(("and", a, b), ("not", a)) == "|"
    assert relation(("or", a, b), ("not", a)) == "v"
    assert relation(a, b) == "#"


def test_relation_matches_brute_force(rng):
    for _ in range(100):
        prem = sample_formula(rng, int(rng.integers(0, 5)))
        hyp = sample_formula(rng, int(rng.integers(0, 5)))
        assert relation(prem, hyp) == relation_brute_force(prem, hyp)


def test_formula_mask_var_counts():
    # each variable is true in exactly half the assignments
    for v in range(len(LOGIC_VARIABLES)):
        assert bin(formula_mask(("var", v))).count("1") == 32


def test_formula_render_parse_round_trip(rng):
    for _ in range(200):
        tree = sample_formula(rng, int(rng.integers(0, 7)))
        tokens = render_formula(tree)
        assert parse_formula(tokens) == tree
        assert count_ops(tokens) == sum(t in ("not", "and", "or") for t in tokens)


def test_sample_formula_hits_requested_op_count(rng):
    for n in range(7):
        for _ in range(20):
            assert count_ops(render_formula(sample_formula(rng, n))) == n


def test_logic_generator_balances_relations(rng):
    samples = generate_logic_pairs(350, rng, max_ops=6)
    counts = {r: 0 for r in LOGIC_RELATIONS}
    for s in samples:
        counts[LOGIC_RELATIONS[s.label]] += 1
    assert set(counts.values()) == {50}


def test_logic_generator_labels_verified(rng):
    for s in generate_logic_pairs(60, rng, max_ops=4):
        prem, hyp = parse_formula(s.premise), parse_formula(s.hypothesis)
        assert LOGIC_RELATIONS[s.label] == relation(prem, hyp)


def test_logic_generator_exact_ops(rng):
    for n in (7, 9, 12):
        samples = generate_logic_pairs(40, rng, exact_ops=n)
        assert all(pair_ops(s) == n for s in samples)


def test_logic_generator_deterministic():
    a = generate_logic_pairs(40, np.random.default_rng(3))
    b = generate_logic_pairs(40, np.random.default_rng(3))
    assert [(s.premise, s.hypothesis, s.label) for s in a] == \
           [(s.premise, s.hypothesis, s.label) for s in b]


# ------------------------------------------------------------------ splits


def held_out_pair(tree):
    toks = render_formula(tree)
    return PairSample(toks, [LOGIC_VARIABLES[2]], 0)


def test_split_pattern_definitions():
    not_a = ("not", ("var", 0))
    not_b = ("not", ("var", 1))
    x = ("var", 2)

    and_not_a = held_out_pair(("and", x, not_a))
    and_not_b = held_out_pair(("and", x, not_b))
    or_not_a = held_out_pair(("or", x, not_a))
    not_on_left = held_out_pair(("and", not_a, x))

    assert [matches_split(and_not_a, p) for p in "ABC"] == [True, True, True]
    assert [matches_split(and_not_b, p) for p in "ABC"] == [False, True, True]
    assert [matches_split(or_not_a, p) for p in "ABC"] == [False, False, True]
    assert [matches_split(not_on_left, p) for p in "ABC"] == [False, False, False]


def test_split_checks_both_sides_and_nesting():
    buried = ("or", ("var", 2), ("not", ("and", ("var", 1), ("not", ("var", 0)))))
    s = PairSample([LOGIC_VARIABLES[0]], render_formula(buried), 0)
    assert matches_split(s, "A")


def test_split_rejects_unknown_pattern():
    with pytest.raises(ValueError):
        matches_split(PairSample(["a"], ["b"], 0), "D")


def test_split_systematicity_partitions_without_leaks(rng):
    pairs = generate_logic_pairs(150, rng, max_ops=5, balance=False)
    for pattern in "ABC":
        train, test = split_systematicity(pairs, pattern)
        assert len(train) + len(test) == len(pairs)
        assert all(not matches_split(s, pattern) for s in train)
        assert all(matches_split(s, pattern) for s in test)


# ----------------------------------------------------------------- buckets


def test_assign_buckets_half_open_windows():
    got = assign_buckets([5, 10, 15, 99, 100, 3], [0, 10, 100])
    assert got == {"0-10": [0, 5], "10-100": [1, 2, 3]}


def test_assign_buckets_preserves_edge_order():
    got = assign_buckets([250, 150], [101, 201, 501])
    assert list(got) == ["101-201", "201-501"]
    assert got["101-201"] == [1] and got["201-501"] == [0]


# ------------------------------------------------------------------- files


def test_listops_file_round_trip(tmp_path, rng):
    samples = generate_listops(30, rng)
    path = tmp_path / "x.tsv"
    write_samples(path, samples)
    back = read_samples(path, "listops")
    assert [(s.tokens, s.label) for s in back] == \
           [(s.tokens, s.label) for s in samples]


def test_logic_file_round_trip(tmp_path, rng):
    samples = generate_logic_pairs(30, rng)
    path = tmp_path / "x.tsv"
    write_samples(path, samples)
    back = read_samples(path, "logic")
    assert [(s.premise, s.hypothesis, s.label) for s in back] == \
           [(s.premise, s.hypothesis, s.label) for s in samples]


def test_reader_accepts_label_first_listops(tmp_path):
    path = tmp_path / "pub.tsv"
    path.write_text("9\t( [MAX 2 9 ( [MIN 4 7 ) ] 0 ] )\n")
    (s,) = read_samples(path, "listops")
    assert s.label == 9
    assert "(" not in s.tokens and ")" not in s.tokens
    assert evaluate_listops(s.tokens) == 9


def test_reader_accepts_relation_first_logic(tmp_path):
    path = tmp_path / "pub.tsv"
    path.write_text("<\ta\t( a ( or b ) )\n")
    (s,) = read_samples(path, "logic")
    assert LOGIC_RELATIONS[s.label] == "<"
    assert s.premise == ["a"]
    assert s.hypothesis == "( a ( or b ) )".split()


def test_reader_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("just one column\n")
    with pytest.raises(ValueError):
        read_samples(bad, "listops")
    bad.write_text("x\ty\n")
    with pytest.raises(ValueError):
        read_samples(bad, "listops")
    with pytest.raises(ValueError):
        read_samples(bad, "logic")


def test_vocabs():
    lv = listops_vocab()
    assert lv.tokens[0] == "<pad>"
    assert lv.size == len(lv) == 16  # pad + 4 operators + ] + 10 digits
    ids = lv.encode("[MAX 2 9 ]".split())
    assert (ids > 0).all()
    assert lv.decode(ids) == "[MAX 2 9 ]".split()

    gv = logic_vocab()
    assert gv.size == 12  # pad + ( ) not and or + 6 variables
    for tok in ("(", ")", "not", "and", "or", *LOGIC_VARIABLES):
        assert tok in gv.index
