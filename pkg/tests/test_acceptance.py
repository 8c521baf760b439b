"""End-to-end acceptance checks, one verdict line per criterion.

Training-backed checks run through the command line driver and cache
their artifacts under ``.cache/acceptance`` (override with the
``CRVNN_TEST_CACHE`` environment variable); a cold run regenerates
everything from seeds, a warm run only re-verifies the numbers.
"""
import itertools
import json
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

import crvnn.training as TR
from crvnn.cli import main
from crvnn.data import read_samples
from crvnn.discrete import run_discrete, tree_to_schedule
from crvnn.model import CRvNN, ModelConfig, retrieval_right, schedule_to_forced
from crvnn.parsing import history_for_row, parse_tree, to_bracketed
from crvnn.tensor import Tensor, precision
from crvnn.verify import forced_agreement, model_gradient_check

from helpers_grad import run_op_checks
from test_model_core import nearest_right_indicator

REPO = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("CRVNN_TEST_CACHE", REPO / ".cache" / "acceptance"))
CONFIGS = REPO / "configs"


def ensure_artifact(name: str, argv: list) -> Path:
    """Run a CLI command into the cache unless an identical run is present."""
    out = CACHE / name
    marker = out / "DONE"
    stamp = " ".join(argv)
    if marker.exists() and marker.read_text().split("\n")[0] == stamp:
        return out
    if out.exists():
        shutil.rmtree(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    code = main(argv + ["--out", str(out), "--force"])
    assert code == 0, f"{name}: command exited {code}"
    marker.write_text(f"{stamp}\n{time.time() - t0:.1f}s\n")
    return out


def artifact_seconds(path: Path) -> str:
    lines = (path / "DONE").read_text().splitlines()
    return lines[1] if len(lines) > 1 else "?"


# ---------------------------------------------------- artifact builders
# Plain functions (idempotent through the DONE markers) so the cache can
# also be warmed outside pytest; the fixtures below just call them.


def dataset_listops() -> Path:
    return ensure_artifact("listops_data",
                           ["gen-data", "--config", str(CONFIGS / "listops_desk.txt")])


def dataset_listops_long() -> Path:
    return ensure_artifact("listops_long", [
        "gen-data", "--set", "gen.max_args=8",
        "--set", "gen.min_length=100", "--set", "gen.max_length=300",
        "--set", "gen.train=1", "--set", "gen.valid=1", "--set", "gen.test=1000",
        "--seed", "11"])


def dataset_logic() -> Path:
    return ensure_artifact("logic_data",
                           ["gen-data", "--config", str(CONFIGS / "logic_desk.txt")])


def dataset_logic_ops(ops: int) -> Path:
    return ensure_artifact(f"logic_ops{ops}", [
        "gen-data", "--set", "task=logic", "--set", f"gen.exact_ops={ops}",
        "--set", "gen.train=1", "--set", "gen.valid=1", "--set", "gen.test=700",
        "--seed", str(100 + ops)])


def train_run(name: str, config: str, data_dir: Path, *overrides) -> Path:
    argv = ["train", "--config", str(CONFIGS / config),
            "--set", f"data.dir={data_dir}"]
    for item in overrides:
        argv += ["--set", item]
    return ensure_artifact(name, argv)


def run_full_path() -> Path:
    return train_run("run_full", "listops_desk.txt", dataset_listops())


def run_no_structure_path() -> Path:
    return train_run("run_no_structure", "listops_desk.txt", dataset_listops(),
                     "model.structure=sequential", "train.epochs=10")


def run_alt_cell_path() -> Path:
    return train_run("run_alt_cell", "listops_desk.txt", dataset_listops(),
                     "model.composer=memory", "train.epochs=10")


def run_no_halt_penalty_path() -> Path:
    return train_run("run_no_halt_penalty", "listops_desk.txt", dataset_listops(),
                     "train.gamma=0")


def run_logic_path() -> Path:
    return train_run("run_logic", "logic_desk.txt", dataset_logic())


@pytest.fixture(scope="module")
def listops_data():
    return dataset_listops()


@pytest.fixture(scope="module")
def listops_long_data():
    return dataset_listops_long()


@pytest.fixture(scope="module")
def logic_depth_sets():
    return {ops: dataset_logic_ops(ops) for ops in range(7, 13)}


@pytest.fixture(scope="module")
def run_full():
    return run_full_path()


@pytest.fixture(scope="module")
def run_no_structure():
    return run_no_structure_path()


@pytest.fixture(scope="module")
def run_alt_cell():
    return run_alt_cell_path()


@pytest.fixture(scope="module")
def run_no_halt_penalty():
    return run_no_halt_penalty_path()


@pytest.fixture(scope="module")
def run_logic():
    return run_logic_path()


def measured_accuracy(run_dir: Path, data_dir: Path, split: str = "test.tsv", *,
                      task: str = "listops", max_iterations: int = -1) -> float:
    model, head, meta = TR.load_trained(run_dir / "checkpoint.bin")
    if max_iterations >= 0:
        model.config.max_iterations = max_iterations
    samples = read_samples(data_dir / split, task)
    out = TR.evaluate(model, head, samples, TR.vocab_for_task(task), batch_size=64)
    return out["accuracy"]


# -------------------------------------------------------------- criteria


def test_discrete_trace_equivalence(acceptance):
    t0 = time.time()
    rng = np.random.default_rng(0)
    model = CRvNN(ModelConfig(vocab_size=12, d_embed=8, d_hidden=8,
                              d_transition=4, window=2), rng)
    schedule = [[1, 4], [0, 3], [2]]
    ids = rng.integers(1, 12, size=(1, 6))
    res = forced_agreement(model, ids, np.array([6]), schedule)

    tokens = [f"x{i}" for i in range(1, 7)]
    forced = schedule_to_forced(schedule, 6, 8)
    enc = model.encode(ids, np.array([6]), forced=forced)
    tree = parse_tree(history_for_row(enc, 0, 6))
    bracketed = to_bracketed(tree, tokens)

    root, _ = run_discrete(tokens, schedule, lambda a, b: f"({a} {b})")
    elapsed = time.time() - t0
    ok = (res["e"] and res["r"] and res["root"] and res["all"]
          and bracketed == "((x1 (x2 x3)) (x4 (x5 x6)))"
          and root == bracketed and elapsed < 60)
    acceptance("soft encoder reproduces the forced discrete trace exactly",
               ok, f"e/r/root exact={res['all']}, tree={bracketed}, {elapsed:.1f}s")


def test_gradient_suite(acceptance):
    t0 = time.time()
    op_worst = run_op_checks(instances=20, tolerance=1e-4)
    model_errs = [model_gradient_check(seed=s) for s in range(20)]
    elapsed = time.time() - t0
    worst_op = max(op_worst.values())
    worst_model = max(model_errs)
    ok = worst_op < 1e-4 and worst_model < 1e-4 and elapsed < 300
    acceptance("numeric gradients match the tape for every op and the full loss",
               ok, f"worst op {worst_op:.2e}, worst full-loss {worst_model:.2e} "
                   f"over 20 instances each, {elapsed:.0f}s")


def test_retriever_properties(acceptance):
    t0 = time.time()
    exact = indicator = True
    for n in range(1, 9):
        rows = np.array(list(itertools.product([0.0, 1.0], repeat=n)))
        a = retrieval_right(Tensor(rows), "cumulative").array
        b = retrieval_right(Tensor(rows), "logspace").array
        exact &= bool(np.array_equal(a, b))
        indicator &= all(np.array_equal(w, nearest_right_indicator(e))
                         for e, w in zip(rows, a))
    rng = np.random.default_rng(0)
    sub = True
    for mode in ("cumulative", "logspace"):
        for _ in range(100):
            w = retrieval_right(Tensor(rng.uniform(0, 1, (4, 9))), mode).array
            sub &= w.min() >= -1e-6 and w.sum(2).max() <= 1 + 1e-6
    elapsed = time.time() - t0
    ok = exact and indicator and sub and elapsed < 60
    acceptance("both retrievers agree exactly on binary existence and stay substochastic",
               ok, f"exhaustive n<=8 agree={exact}, indicators={indicator}, "
                   f"substochastic={sub}, {elapsed:.1f}s")


def test_halting_tracks_tree_depth(acceptance, tmp_path):
    t0 = time.time()
    code = main(["bench", "--set", "bench.depths=1,2,3,4,5,6,7,8",
                 "--set", "bench.d_hidden=16", "--out", str(tmp_path), "--force"])
    rows = []
    if code == 0:
        lines = (tmp_path / "bench_halting.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        rows = [dict(zip(header, ln.split("\t"))) for ln in lines[1:]]
    depth_exact = all(int(r["iterations"]) == int(r["depth"]) for r in rows)
    per_leaf = [float(r["iterations_per_leaf"]) for r in rows]
    sublinear = (all(b <= a for a, b in zip(per_leaf, per_leaf[1:]))
                 and per_leaf[-1] < per_leaf[0])
    elapsed = time.time() - t0
    ok = code == 0 and len(rows) == 8 and depth_exact and sublinear and elapsed < 60
    acceptance("balanced reductions halt in exactly tree-depth iterations",
               ok, f"iterations==depth for 2..256 leaves={depth_exact}, "
                   f"iterations/leaf falling={sublinear}, {elapsed:.1f}s")


def test_desk_listops_accuracy(acceptance, run_full, listops_data):
    metrics = (run_full / "metrics.tsv").read_text().splitlines()
    epochs = max(int(r.split("\t")[0]) for r in metrics[1:])
    acc = measured_accuracy(run_full, listops_data)
    ok = acc >= 0.95 and epochs <= 30
    acceptance("list-operations test accuracy reaches 0.95",
               ok, f"test acc {acc:.4f} after {epochs} epochs "
                   f"(train {artifact_seconds(run_full)})")


def test_length_extrapolation(acceptance, run_full, listops_long_data):
    acc = measured_accuracy(run_full, listops_long_data, max_iterations=32)
    ok = acc >= 0.85
    acceptance("accuracy holds at 0.85 on sequences 2-6x the training length",
               ok, f"length 100-300 acc {acc:.4f}")


def test_logic_generalization(acceptance, run_logic, logic_depth_sets):
    accs = {ops: measured_accuracy(run_logic, path, task="logic",
                                   max_iterations=24)
            for ops, path in logic_depth_sets.items()}
    monotone = all(accs[k + 1] >= accs[k] - 0.03 for k in range(7, 12))
    ok = accs[7] >= 0.85 and monotone
    trend = ", ".join(f"{k}:{accs[k]:.3f}" for k in sorted(accs))
    acceptance("logical inference generalizes to deeper unseen formulas",
               ok, f"{trend} (7-op >= 0.85, drops <= 3 pts)")


def test_ablation_directions(acceptance, run_full, run_no_structure,
                             run_alt_cell, run_no_halt_penalty, listops_data):
    full = measured_accuracy(run_full, listops_data)
    seq = measured_accuracy(run_no_structure, listops_data)
    alt = measured_accuracy(run_alt_cell, listops_data)
    nop = measured_accuracy(run_no_halt_penalty, listops_data)
    ok = (seq <= full - 0.05 and alt <= full - 0.05 and abs(full - nop) <= 0.02)
    acceptance("structure and cell ablations hurt; dropping the halt penalty does not",
               ok, f"full {full:.3f}, sequential {seq:.3f}, alt-cell {alt:.3f}, "
                   f"no-penalty {nop:.3f}")


def test_loss_composition(acceptance):
    with precision("wide"):
        model = CRvNN(ModelConfig(vocab_size=4, d_embed=4, d_hidden=4,
                                  d_transition=4), np.random.default_rng(0))
        e_final = Tensor(np.array([[1.0, 1.0]]))
        penalty = model.halt_penalty(e_final, np.ones((1, 2)), np.array([1]))
        logits = Tensor(np.zeros((1, 2)))
        loss = TR.total_loss(logits, np.array([0]), penalty, 0.01)
    expected = np.log(2.0) + 0.01 * np.log(2.0)
    ok = abs(float(loss.array) - expected) < 1e-12
    acceptance("loss equals cross entropy plus 0.01 halt penalty",
               ok, f"{float(loss.array):.12f} vs ln2 + 0.01 ln2 = {expected:.12f}")
