"""Batch command line: data generation, training, evaluation, checks.

Configuration is a flat file of dotted ``key = value`` lines; ``--set``
overrides win over the file, which wins over defaults.  Unknown keys are
rejected.  Every command that writes into an output directory echoes the
effective configuration there so runs can be reproduced exactly.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 check failure, 1 unexpected error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import data as D
from .model import CRvNN, ModelConfig
from .parsing import history_for_row, parse_tree, to_bracketed
from . import training as TR
from .discrete import tree_to_schedule
from .verify import forced_agreement, model_gradient_check

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3, 4

DATA_DIR_ENV = "CRVNN_DATA_DIR"

DEFAULTS: dict = {
    "task": "listops",                 # listops | logic
    "seed": 0,
    "data.dir": "",                    # empty: $CRVNN_DATA_DIR, then ./data
    "data.train": "train.tsv",
    "data.valid": "valid.tsv",
    "data.test": "test.tsv",
    # generation
    "gen.train": 10000,
    "gen.valid": 1000,
    "gen.test": 1000,
    "gen.max_depth": 4,                # listops nesting
    "gen.max_args": 5,
    "gen.min_length": 1,
    "gen.max_length": 50,
    "gen.max_ops": 6,                  # logic operator budget
    "gen.exact_ops": -1,               # logic: pin total ops of every pair (-1 off)
    "gen.split": "none",               # logic systematicity: none | A | B | C
    # model
    "model.d_embed": 128,
    "model.d_hidden": 128,
    "model.d_cell": 0,
    "model.d_transition": 64,
    "model.window": 2,
    "model.retriever": "cumulative",
    "model.gate": "modulated",
    "model.composer": "gated",
    "model.structure": "induced",
    "model.transition_features": True,
    "model.cell_activation": "gelu",
    "model.halt_threshold": 0.01,
    "model.max_iterations": 0,
    "model.input_dropout": 0.0,
    "model.hidden_dropout": 0.0,
    "head.layers": 0,                  # 0: task default (listops 1, logic 2)
    "head.output_dropout": 0.0,
    # training
    "train.epochs": 10,
    "train.batch_size": 128,
    "train.lr": 1e-3,
    "train.weight_decay": 1e-2,
    "train.optimizer": "radam-lookahead",
    "train.lookahead_k": 5,
    "train.lookahead_alpha": 0.8,
    "train.clip_norm": 5.0,
    "train.patience": 3,
    "train.lr_factor": 0.5,
    "train.gamma": 0.01,
    "train.sort_by_length": True,
    "train.stop_accuracy": 0.0,
    # evaluation
    "eval.split": "test",
    "eval.batch_size": 128,
    "eval.length_buckets": "",         # comma-separated edges, e.g. 0,100,200,300
    "eval.ops_buckets": False,         # logic: bucket by total operator count
    "eval.max_iterations": -1,         # -1: keep the checkpoint's setting
    # parsing
    "parse.dump_history": False,
    # bench
    "bench.mode": "halting",           # halting | timing
    "bench.samples": 50,
    "bench.lengths": "81-100,101-200,201-500,501-700,701-1000",
    "bench.depths": "1,2,3,4,5,6,7,8",
    "bench.d_hidden": 64,
    # checks
    "check.max_leaves": 5,
    "check.d_hidden": 8,
    "check.instances": 3,
    "check.tolerance": 1e-4,
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class CheckFailure(Exception):
    pass


# ------------------------------------------------------------------ config


def _parse_value(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def read_config_file(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key = value")
                key, text = (part.strip() for part in line.split("=", 1))
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                out[key] = _parse_value(key, text)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return out


def build_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, text = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key!r}")
        cfg[key] = _parse_value(key, text)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg["task"] not in ("listops", "logic"):
        raise ConfigError(f"task must be listops or logic, got {cfg['task']!r}")
    return cfg


def config_text(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(cfg.items()))


def data_dir(cfg: dict) -> str:
    return cfg["data.dir"] or os.environ.get(DATA_DIR_ENV, "") or "data"


def prepare_out(path, force: bool, expected: list):
    """Create the output directory; refuse to clobber without --force."""
    if path is None:
        raise ConfigError("this command requires --out")
    os.makedirs(path, exist_ok=True)
    if not force:
        clashes = [n for n in expected if os.path.exists(os.path.join(path, n))]
        if clashes:
            raise ConfigError(
                f"refusing to overwrite {', '.join(clashes)} in {path} (use --force)")
    return path


def echo_config(out_dir, cfg: dict):
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(config_text(cfg))


# ---------------------------------------------------------------- datasets


def _load_split(cfg, name) -> list:
    path = os.path.join(data_dir(cfg), cfg[f"data.{name}"])
    try:
        return D.read_samples(path, cfg["task"])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _label_histogram(samples) -> dict:
    hist: dict = {}
    for s in samples:
        hist[s.label] = hist.get(s.label, 0) + 1
    return {str(k): hist[k] for k in sorted(hist)}


def cmd_gen_data(cfg, out_dir, force) -> int:
    files = [cfg["data.train"], cfg["data.valid"], cfg["data.test"], "manifest.json"]
    out_dir = prepare_out(out_dir or data_dir(cfg), force, files)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    counts = {"train": cfg["gen.train"], "valid": cfg["gen.valid"], "test": cfg["gen.test"]}
    seen: set = set()
    splits: dict = {}

    if cfg["task"] == "listops":
        for name, count in counts.items():
            splits[name] = D.generate_listops(
                count, rng, max_depth=cfg["gen.max_depth"], max_args=cfg["gen.max_args"],
                min_length=cfg["gen.min_length"], max_length=cfg["gen.max_length"],
                seen=seen)
    else:
        pattern = cfg["gen.split"]
        if pattern not in ("none",) + D.SPLIT_PATTERNS:
            raise ConfigError(f"gen.split must be none or one of {D.SPLIT_PATTERNS}")
        exact = cfg["gen.exact_ops"] if cfg["gen.exact_ops"] >= 0 else None
        total = sum(counts.values())
        factor = 2 if pattern != "none" else 1
        pool = D.generate_logic_pairs(total * factor, rng, max_ops=cfg["gen.max_ops"],
                                      exact_ops=exact, seen=seen)
        if pattern != "none":
            keep, held_out = D.split_systematicity(pool, pattern)
            if len(keep) < counts["train"] + counts["valid"] or len(held_out) < counts["test"]:
                raise DataError("not enough samples on one side of the split; "
                                "raise gen.train/valid/test or regenerate")
            splits["train"] = keep[:counts["train"]]
            splits["valid"] = keep[counts["train"]:counts["train"] + counts["valid"]]
            splits["test"] = held_out[:counts["test"]]
        else:
            splits["train"] = pool[:counts["train"]]
            splits["valid"] = pool[counts["train"]:counts["train"] + counts["valid"]]
            splits["test"] = pool[counts["train"] + counts["valid"]:total]

    manifest = {"task": cfg["task"], "seed": cfg["seed"],
                "config": {k: cfg[k] for k in sorted(cfg) if k.startswith("gen.")},
                "splits": {}}
    for name, samples in splits.items():
        D.write_samples(os.path.join(out_dir, cfg[f"data.{name}"]), samples)
        info = {"count": len(samples), "labels": _label_histogram(samples)}
        if cfg["task"] == "logic":
            ops = [D.pair_ops(s) for s in samples]
            info["max_ops"] = max(ops) if ops else 0
            if cfg["gen.split"] != "none":
                info["pattern_matches"] = sum(
                    D.matches_split(s, cfg["gen.split"]) for s in samples)
        else:
            lens = [len(s.tokens) for s in samples]
            info["max_length"] = max(lens) if lens else 0
        manifest["splits"][name] = info
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    echo_config(out_dir, cfg)
    print(f"wrote {', '.join(sorted(manifest['splits']))} to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- training


def _model_config(cfg, vocab_size: int) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=vocab_size,
            d_embed=cfg["model.d_embed"], d_hidden=cfg["model.d_hidden"],
            d_cell=cfg["model.d_cell"], d_transition=cfg["model.d_transition"],
            window=cfg["model.window"], retriever=cfg["model.retriever"],
            gate=cfg["model.gate"], composer=cfg["model.composer"],
            structure=cfg["model.structure"],
            transition_features=cfg["model.transition_features"],
            cell_activation=cfg["model.cell_activation"],
            halt_threshold=cfg["model.halt_threshold"],
            max_iterations=cfg["model.max_iterations"],
            input_dropout=cfg["model.input_dropout"],
            hidden_dropout=cfg["model.hidden_dropout"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _head_layers(cfg) -> int:
    if cfg["head.layers"]:
        return cfg["head.layers"]
    return 1 if cfg["task"] == "listops" else 2


def _train_config(cfg) -> TR.TrainConfig:
    return TR.TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"], weight_decay=cfg["train.weight_decay"],
        optimizer=cfg["train.optimizer"], lookahead_k=cfg["train.lookahead_k"],
        lookahead_alpha=cfg["train.lookahead_alpha"], clip_norm=cfg["train.clip_norm"],
        patience=cfg["train.patience"], lr_factor=cfg["train.lr_factor"],
        gamma=cfg["train.gamma"], seed=cfg["seed"],
        sort_by_length=cfg["train.sort_by_length"],
        stop_accuracy=cfg["train.stop_accuracy"])


def cmd_train(cfg, out_dir, force) -> int:
    out_dir = prepare_out(out_dir, force,
                          ["checkpoint.bin", "metrics.tsv", "report.txt", "config.txt"])
    task = cfg["task"]
    vocab = TR.vocab_for_task(task)
    train_samples = _load_split(cfg, "train")
    valid_samples = _load_split(cfg, "valid")
    model_cfg = _model_config(cfg, vocab.size)
    layers = _head_layers(cfg)
    model, head = TR.build_model_and_head(task, model_cfg, layers,
                                          cfg["head.output_dropout"], cfg["seed"])
    tcfg = _train_config(cfg)
    echo_config(out_dir, cfg)
    def log(msg):
        print(msg, flush=True)  # progress must survive redirection buffering

    result = TR.train(model, head, train_samples, valid_samples, vocab, tcfg, log=log)
    TR.save_trained(os.path.join(out_dir, "checkpoint.bin"), task, model, head,
                    layers, cfg["head.output_dropout"],
                    extra={"seed": cfg["seed"], "best_epoch": result.best_epoch})
    TR.write_metrics(os.path.join(out_dir, "metrics.tsv"), result.history)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(TR.format_report(result.history))
    print(f"best validation accuracy {result.best_accuracy:.4f} "
          f"(epoch {result.best_epoch}); checkpoint in {out_dir}")
    return EXIT_OK


# -------------------------------------------------------------- evaluation


def _load_checkpoint(path):
    if not path:
        raise ConfigError("this command requires --checkpoint")
    try:
        return TR.load_trained(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad checkpoint: {exc}") from None


def eval_rows(model, head, samples, vocab, cfg, split_name: str) -> list:
    gamma = cfg["train.gamma"]
    bs = cfg["eval.batch_size"]
    rows = []
    overall = TR.evaluate(model, head, samples, vocab, batch_size=bs, gamma=gamma)
    rows.append({"epoch": 0, "split": split_name, "bucket": "all", **_metrics(overall)})

    if cfg["eval.length_buckets"]:
        edges = [int(x) for x in cfg["eval.length_buckets"].split(",") if x.strip()]
        lengths = np.array([_eval_length(s) for s in samples])
        for label, idx in D.assign_buckets(lengths, edges).items():
            sub = [samples[i] for i in idx]
            if not sub:
                continue
            res = TR.evaluate(model, head, sub, vocab, batch_size=bs, gamma=gamma)
            rows.append({"epoch": 0, "split": split_name, "bucket": label, **_metrics(res)})
    if cfg["eval.ops_buckets"]:
        groups: dict = {}
        for s in samples:
            groups.setdefault(D.pair_ops(s), []).append(s)
        for ops in sorted(groups):
            res = TR.evaluate(model, head, groups[ops], vocab, batch_size=bs, gamma=gamma)
            rows.append({"epoch": 0, "split": split_name, "bucket": str(ops), **_metrics(res)})
    return rows


def _eval_length(sample) -> int:
    if isinstance(sample, D.PairSample):
        return max(len(sample.premise), len(sample.hypothesis))
    return len(sample.tokens)


def _metrics(res: dict) -> dict:
    return {"accuracy": res["accuracy"], "loss": res["loss"],
            "mean_iterations": res["mean_iterations"]}


def cmd_eval(cfg, out_dir, force, checkpoint) -> int:
    model, head, meta = _load_checkpoint(checkpoint)
    task = meta["task"]
    vocab = TR.vocab_for_task(task)
    if meta["model"]["vocab_size"] != vocab.size:
        raise ConfigError("checkpoint vocabulary does not match its task")
    cfg = dict(cfg)
    cfg["task"] = task
    if cfg["eval.max_iterations"] >= 0:
        # longer inputs may need more reduction steps than training allowed
        model.config.max_iterations = cfg["eval.max_iterations"]
    split = cfg["eval.split"]
    name = split if split in ("train", "valid", "test") else "test"
    if split in ("train", "valid", "test"):
        samples = _load_split(cfg, split)
    else:  # a file name inside the data directory
        path = os.path.join(data_dir(cfg), split)
        try:
            samples = D.read_samples(path, task)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None

    rows = eval_rows(model, head, samples, vocab, cfg, name)
    report = TR.format_report(rows)
    print(report, end="")
    if out_dir is not None:
        out_dir = prepare_out(out_dir, force, ["metrics.tsv", "report.txt", "config.txt"])
        TR.write_metrics(os.path.join(out_dir, "metrics.tsv"), rows)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(report)
        echo_config(out_dir, cfg)
    return EXIT_OK


# ----------------------------------------------------------------- parsing


def _read_parse_input(path, task):
    """Dataset rows or plain token lines; returns list of token sequences."""
    try:
        samples = D.read_samples(path, task)
    except (ValueError, OSError):
        samples = None
    if samples is not None:
        out = []
        for s in samples:
            if isinstance(s, D.PairSample):
                out.append(s.premise)
                out.append(s.hypothesis)
            else:
                out.append(s.tokens)
        return out
    try:
        with open(path) as fh:
            return [line.split() for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def cmd_parse(cfg, out_dir, force, checkpoint, input_path) -> int:
    model, head, meta = _load_checkpoint(checkpoint)
    vocab = TR.vocab_for_task(meta["task"])
    if not input_path:
        raise ConfigError("parse requires --input FILE")
    sequences = _read_parse_input(input_path, meta["task"])
    unknown = {t for toks in sequences for t in toks} - set(vocab.tokens)
    if unknown:
        raise DataError(f"tokens outside the model vocabulary: {sorted(unknown)[:5]}")

    lines, dumps = [], []
    from .tensor import no_grad
    for toks in sequences:
        ids = vocab.encode(toks)[None, :]
        lengths = np.array([len(toks)])
        with no_grad():
            result = model.encode(ids, lengths)
        history = history_for_row(result, 0, len(toks))
        tree = parse_tree(history)
        lines.append(to_bracketed(tree, toks))
        if cfg["parse.dump_history"]:
            dumps.append(_history_grid(toks, history))

    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        out_dir = prepare_out(out_dir, force, ["trees.txt", "history.txt", "config.txt"])
        with open(os.path.join(out_dir, "trees.txt"), "w") as fh:
            fh.write(text)
        if dumps:
            with open(os.path.join(out_dir, "history.txt"), "w") as fh:
                fh.write("\n".join(dumps))
        echo_config(out_dir, cfg)
        print(f"wrote {len(lines)} trees to {out_dir}")
    else:
        print(text, end="")
        if dumps:
            print("\n".join(dumps))
    return EXIT_OK


def _history_grid(tokens, history) -> str:
    width = max(len(t) for t in tokens)
    head = " ".join(t.rjust(max(width, 5)) for t in tokens)
    rows = [head]
    for k, row in enumerate(history):
        cells = " ".join(f"{v:.3f}".rjust(max(width, 5)) for v in row)
        rows.append(f"{cells}   # iteration {k + 1}")
    return "\n".join(rows) + "\n"


# ------------------------------------------------------------------- bench


def _balanced_tree(lo: int, hi: int):
    if hi - lo == 1:
        return lo
    mid = (lo + hi) // 2
    return (_balanced_tree(lo, mid), _balanced_tree(mid, hi))


def bench_halting(cfg) -> list:
    """Forced balanced reductions over 2^d leaves; iterations should be d."""
    rng = np.random.default_rng(cfg["seed"])
    vocab = TR.vocab_for_task("listops")
    model_cfg = ModelConfig(vocab_size=vocab.size, d_embed=16,
                            d_hidden=cfg["bench.d_hidden"], d_transition=16)
    model = CRvNN(model_cfg, rng)
    rows = []
    for d in _int_list(cfg["bench.depths"]):
        leaves = 2 ** d
        length = leaves - 1          # content leaves; the end marker is the last leaf
        ids = rng.integers(1, vocab.size, size=(1, length))
        schedule = tree_to_schedule(_balanced_tree(0, leaves))
        t0 = time.time()
        out = forced_agreement(model, ids, np.array([length]), schedule,
                               leaves_include_end=True)
        rows.append({"leaves": leaves, "length": length, "depth": d,
                     "iterations": out["halt_iteration"],
                     "iterations_per_leaf": round(out["halt_iteration"] / leaves, 4),
                     "seconds": round(time.time() - t0, 3)})
    return rows


def bench_timing(cfg) -> list:
    """Tiny-epoch wall-clock per length window: 1 epoch, batch size 1."""
    rng = np.random.default_rng(cfg["seed"])
    vocab = TR.vocab_for_task("listops")
    model_cfg = _model_config(cfg, vocab.size)
    rows = []
    for window in cfg["bench.lengths"].split(","):
        lo, hi = (int(x) for x in window.strip().split("-"))
        samples = D.generate_listops(cfg["bench.samples"], rng, max_depth=8,
                                     max_args=5, min_length=lo, max_length=hi)
        model, head = TR.build_model_and_head("listops", model_cfg, 1, 0.0, cfg["seed"])
        tcfg = _train_config(cfg)
        tcfg.epochs = 1
        tcfg.batch_size = 1
        tcfg.stop_accuracy = 0.0
        t0 = time.time()
        result = TR.train(model, head, samples, samples[:8], vocab, tcfg)
        seconds = time.time() - t0
        iters = [r["mean_iterations"] for r in result.history if r["split"] == "train"]
        rows.append({"lengths": f"{lo}-{hi}", "samples": len(samples),
                     "seconds": round(seconds, 2),
                     "seconds_per_sample": round(seconds / len(samples), 3),
                     "mean_iterations": round(iters[0], 2) if iters else float("nan")})
    return rows


def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _write_table(rows, out_dir, force, cfg, stem: str):
    cols = list(rows[0].keys())
    tsv = "\t".join(cols) + "\n" + "\n".join(
        "\t".join(str(r[c]) for c in cols) for r in rows) + "\n"
    text = "".join(c.ljust(20) for c in cols) + "\n" + "\n".join(
        "".join(str(r[c]).ljust(20) for c in cols) for r in rows) + "\n"
    print(text, end="")
    if out_dir is not None:
        out_dir = prepare_out(out_dir, force, [f"{stem}.tsv", f"{stem}.txt", "config.txt"])
        with open(os.path.join(out_dir, f"{stem}.tsv"), "w") as fh:
            fh.write(tsv)
        with open(os.path.join(out_dir, f"{stem}.txt"), "w") as fh:
            fh.write(text)
        echo_config(out_dir, cfg)


def cmd_bench(cfg, out_dir, force) -> int:
    mode = cfg["bench.mode"]
    if mode == "halting":
        rows = bench_halting(cfg)
    elif mode == "timing":
        rows = bench_timing(cfg)
    else:
        raise ConfigError("bench.mode must be halting or timing")
    _write_table(rows, out_dir, force, cfg, f"bench_{mode}")
    return EXIT_OK


# ------------------------------------------------------------------ checks


def cmd_gradcheck(cfg, out_dir, force) -> int:
    tol = cfg["check.tolerance"]
    rows = []
    failed = False
    for i in range(cfg["check.instances"]):
        err = model_gradient_check(seed=cfg["seed"] + i)
        ok = err < tol
        failed |= not ok
        rows.append({"check": f"model-loss-gradient[seed={cfg['seed'] + i}]",
                     "status": "PASS" if ok else "FAIL",
                     "value": f"{err:.3e}", "threshold": f"< {tol:g}"})
        print(f"{rows[-1]['status']}  {rows[-1]['check']}  rel_err={err:.3e}")
    if out_dir is not None:
        _write_table(rows, out_dir, force, cfg, "gradcheck")
    if failed:
        raise CheckFailure("gradient check failed")
    return EXIT_OK


def cmd_oracle_check(cfg, out_dir, force) -> int:
    from .discrete import valid_schedules

    rng = np.random.default_rng(cfg["seed"])
    vocab = TR.vocab_for_task("listops")
    model = CRvNN(ModelConfig(vocab_size=vocab.size, d_embed=8,
                              d_hidden=cfg["check.d_hidden"], d_transition=8),
                  rng)
    rows = []
    failed = False

    # canonical walk-through: six leaves, three parallel iterations
    ids = rng.integers(1, vocab.size, size=(1, 6))
    out = forced_agreement(model, ids, np.array([6]), [[1, 4], [0, 3], [2]])
    ok = out["all"] and out["iterations"] == 3
    failed |= not ok
    rows.append({"check": "six-leaf walkthrough", "status": "PASS" if ok else "FAIL",
                 "value": f"e={out['e']} r={out['r']} root={out['root']}",
                 "threshold": "exact"})

    for n in range(2, cfg["check.max_leaves"] + 1):
        ids = rng.integers(1, vocab.size, size=(1, n))
        total = checked = 0
        for schedule in valid_schedules(n):
            res = forced_agreement(model, ids, np.array([n]), schedule)
            checked += res["all"]
            total += 1
        ok = checked == total
        failed |= not ok
        rows.append({"check": f"exhaustive schedules n={n}",
                     "status": "PASS" if ok else "FAIL",
                     "value": f"{checked}/{total} exact", "threshold": "all"})

    for r in rows:
        print(f"{r['status']}  {r['check']}  {r['value']}")
    if out_dir is not None:
        _write_table(rows, out_dir, force, cfg, "oracle_check")
    if failed:
        raise CheckFailure("oracle agreement failed")
    return EXIT_OK


# -------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crvnn",
        description="continuous recursive network: data, training, checks")
    parser.add_argument("command",
                        choices=["gen-data", "train", "eval", "parse",
                                 "bench", "gradcheck", "oracle-check"])
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
    parser.add_argument("--checkpoint", default=None, help="trained model file")
    parser.add_argument("--input", default=None, help="input file for parse")
    args = parser.parse_args(argv)

    try:
        cfg = build_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.force)
        if args.command == "eval":
            return cmd_eval(cfg, args.out, args.force, args.checkpoint)
        if args.command == "parse":
            return cmd_parse(cfg, args.out, args.force, args.checkpoint, args.input)
        if args.command == "bench":
            return cmd_bench(cfg, args.out, args.force)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.out, args.force)
        return cmd_oracle_check(cfg, args.out, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except Exception as exc:  # pragma: no cover - safety net
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
