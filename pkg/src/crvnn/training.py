"""Training harness: optimizers, LR schedule, heads, loops, checkpoints.

The default optimizer is rectified Adam wrapped in lookahead averaging
with decoupled weight decay; plain Adam is the fallback.  Validation loss
drives a halve-on-plateau schedule.  Checkpoints are a single binary file:
a JSON header (format version, config echo, tensor manifest) followed by
raw little-endian tensor data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import PairSample, logic_vocab, listops_vocab
from .model import CRvNN, ModelConfig
from .tensor import Tensor, absolute, concat, dropout, gelu, no_grad, softmax_cross_entropy

# ------------------------------------------------------------- optimizers


class AdamLike:
    """Adam with decoupled weight decay; optionally variance-rectified.

    Rectified mode falls back to an SGD-with-momentum step while the
    variance estimate is unreliable (rectification term rho <= 4).
    Steps with any non-finite gradient are skipped and counted.
    """

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, rectified: bool = False):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.rectified = rectified
        self.t = 0
        self.skipped = 0
        self._m = {k: np.zeros_like(p.array) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.array) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self) -> bool:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if any(not np.isfinite(g).all() for g in grads.values()):
            self.skipped += 1
            return False
        self.t += 1
        b1, b2, t = self.beta1, self.beta2, self.t
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho = rho_inf - 2.0 * t * (b2 ** t) / bias2
        if self.rectified and rho > 4.0:
            rect = np.sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf)
                           / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
        else:
            rect = None
        for k, g in grads.items():
            p = self.params[k]
            m = self._m[k] = b1 * self._m[k] + (1.0 - b1) * g
            v = self._v[k] = b2 * self._v[k] + (1.0 - b2) * g * g
            m_hat = m / bias1
            if not self.rectified:
                update = self.lr * m_hat / (np.sqrt(v / bias2) + self.eps)
            elif rect is not None:
                update = self.lr * rect * m_hat / (np.sqrt(v / bias2) + self.eps)
            else:
                update = self.lr * m_hat
            p.array = p.array - update.astype(p.array.dtype) \
                - (self.lr * self.weight_decay) * p.array
        return True


class Lookahead:
    """Slow/fast weight averaging around an inner optimizer."""

    def __init__(self, inner: AdamLike, k: int = 5, alpha: float = 0.8):
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self._count = 0
        self._slow = {name: p.array.copy() for name, p in inner.params.items()}

    @property
    def params(self):
        return self.inner.params

    @property
    def skipped(self):
        return self.inner.skipped

    @property
    def lr(self):
        return self.inner.lr

    @lr.setter
    def lr(self, value):
        self.inner.lr = value

    def zero_grad(self):
        self.inner.zero_grad()

    def step(self) -> bool:
        if not self.inner.step():
            return False
        self._count += 1
        if self._count % self.k == 0:
            for name, p in self.inner.params.items():
                slow = self._slow[name]
                slow += self.alpha * (p.array - slow)
                p.array = slow.copy()
        return True


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params.values() if p.grad is not None]
    for g in grads:
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class PlateauSchedule:
    """Halve the learning rate after `patience` epochs without improvement."""

    def __init__(self, optimizer, patience: int = 3, factor: float = 0.5):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.streak = 0

    def observe(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.streak = 0
            return False
        self.streak += 1
        if self.streak >= self.patience:
            self.optimizer.lr *= self.factor
            self.streak = 0
            return True
        return False


# ------------------------------------------------------------------ heads


class ClassifierHead:
    """One- or two-layer classifier; dropout before each affine."""

    def __init__(self, d_in: int, n_classes: int, rng: np.random.Generator, *,
                 layers: int = 1, d_hidden: int = 0, output_dropout: float = 0.0):
        if layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        self.layers = layers
        self.output_dropout = output_dropout
        d_hidden = d_hidden or d_in
        bound_in = 1.0 / np.sqrt(d_in)
        self.params: dict[str, Tensor] = {}
        if layers == 1:
            self.params["head.weight"] = Tensor(rng.uniform(-bound_in, bound_in, (d_in, n_classes)),
                                                requires_grad=True)
            self.params["head.bias"] = Tensor(np.zeros(n_classes), requires_grad=True)
        else:
            bound_h = 1.0 / np.sqrt(d_hidden)
            self.params["head.in_weight"] = Tensor(rng.uniform(-bound_in, bound_in, (d_in, d_hidden)),
                                                   requires_grad=True)
            self.params["head.in_bias"] = Tensor(np.zeros(d_hidden), requires_grad=True)
            self.params["head.out_weight"] = Tensor(rng.uniform(-bound_h, bound_h, (d_hidden, n_classes)),
                                                    requires_grad=True)
            self.params["head.out_bias"] = Tensor(np.zeros(n_classes), requires_grad=True)

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        p = self.params
        x = dropout(x, self.output_dropout, rng, training)
        if self.layers == 1:
            return x @ p["head.weight"] + p["head.bias"]
        h = gelu(x @ p["head.in_weight"] + p["head.in_bias"])
        h = dropout(h, self.output_dropout, rng, training)
        return h @ p["head.out_weight"] + p["head.out_bias"]


def siamese_features(a: Tensor, b: Tensor) -> Tensor:
    """[a; b; |a-b|; a*b] — pair features for relation classification."""
    return concat([a, b, absolute(a - b), a * b], -1)


def total_loss(logits: Tensor, labels: np.ndarray, penalty: Tensor, gamma: float) -> Tensor:
    """Cross entropy plus gamma times the mean halt penalty (0 disables)."""
    ce = softmax_cross_entropy(logits, labels)
    if gamma == 0.0:
        return ce
    return ce + gamma * penalty.mean()


# --------------------------------------------------------------- batching


@dataclass
class Batch:
    ids: np.ndarray       # (B, L) int64, 0-padded
    lengths: np.ndarray   # (B,)
    labels: np.ndarray    # (B,)


@dataclass
class PairBatch:
    premise: Batch
    hypothesis: Batch
    labels: np.ndarray


def _pad(token_lists, vocab) -> tuple:
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    width = int(lengths.max())
    ids = np.zeros((len(token_lists), width), dtype=np.int64)
    for i, toks in enumerate(token_lists):
        ids[i, :len(toks)] = vocab.encode(toks)
    return ids, lengths


def make_batch(samples, vocab) -> Batch | PairBatch:
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if isinstance(samples[0], PairSample):
        pids, plen = _pad([s.premise for s in samples], vocab)
        hids, hlen = _pad([s.hypothesis for s in samples], vocab)
        return PairBatch(Batch(pids, plen, labels), Batch(hids, hlen, labels), labels)
    ids, lengths = _pad([s.tokens for s in samples], vocab)
    return Batch(ids, lengths, labels)


def _sample_length(s) -> int:
    if isinstance(s, PairSample):
        return max(len(s.premise), len(s.hypothesis))
    return len(s.tokens)


def iterate_batches(samples, vocab, batch_size: int,
                    rng: np.random.Generator | None = None,
                    sort_by_length: bool = False):
    """Yield batches; shuffles when given an rng, optionally length-sorted.

    Length sorting happens after the shuffle (stable), then the batch order
    is shuffled again, so epochs differ while padding stays tight.
    """
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    if sort_by_length:
        keys = np.array([_sample_length(samples[i]) for i in order])
        order = order[np.argsort(keys, kind="stable")]
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None and sort_by_length:
        rng.shuffle(chunks)
    for chunk in chunks:
        yield make_batch([samples[i] for i in chunk], vocab)


# ---------------------------------------------------------------- forward


def forward_batch(model: CRvNN, head: ClassifierHead, batch, *,
                  training: bool = False, rng=None):
    """Returns (logits, penalty, mean_halt_iterations) for either task."""
    if isinstance(batch, PairBatch):
        rp = model.encode(batch.premise.ids, batch.premise.lengths,
                          training=training, rng=rng)
        rh = model.encode(batch.hypothesis.ids, batch.hypothesis.lengths,
                          training=training, rng=rng)
        feats = siamese_features(rp.encoding, rh.encoding)
        logits = head(feats, training, rng)
        penalty = 0.5 * (rp.penalty + rh.penalty)
        iters = 0.5 * (rp.halt_iteration.mean() + rh.halt_iteration.mean())
        return logits, penalty, float(iters)
    res = model.encode(batch.ids, batch.lengths, training=training, rng=rng)
    logits = head(res.encoding, training, rng)
    return logits, res.penalty, float(res.halt_iteration.mean())


# ------------------------------------------------------------- train/eval


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-2
    optimizer: str = "radam-lookahead"   # or "adam"
    lookahead_k: int = 5
    lookahead_alpha: float = 0.8
    clip_norm: float = 5.0               # 0 disables
    patience: int = 3
    lr_factor: float = 0.5
    gamma: float = 0.01                  # halt penalty weight; 0 disables
    seed: int = 0
    sort_by_length: bool = True
    stop_accuracy: float = 0.0           # stop once validation reaches this


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # metric row dicts
    best_epoch: int = 0
    best_accuracy: float = 0.0
    epochs_run: int = 0
    skipped_steps: int = 0


def build_optimizer(params: dict, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return AdamLike(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "radam-lookahead":
        inner = AdamLike(params, lr=cfg.lr, weight_decay=cfg.weight_decay, rectified=True)
        return Lookahead(inner, k=cfg.lookahead_k, alpha=cfg.lookahead_alpha)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def evaluate(model: CRvNN, head: ClassifierHead, samples, vocab, *,
             batch_size: int = 128, gamma: float = 0.01) -> dict:
    """Deterministic full pass; returns accuracy / loss / mean iterations."""
    total, correct, loss_sum, iter_sum = 0, 0, 0.0, 0.0
    with no_grad():
        for batch in iterate_batches(samples, vocab, batch_size, sort_by_length=True):
            logits, penalty, iters = forward_batch(model, head, batch)
            loss = total_loss(logits, batch.labels, penalty, gamma)
            n = len(batch.labels)
            pred = logits.array.argmax(-1)
            correct += int((pred == batch.labels).sum())
            loss_sum += float(loss.array) * n
            iter_sum += iters * n
            total += n
    return {
        "accuracy": correct / max(total, 1),
        "loss": loss_sum / max(total, 1),
        "mean_iterations": iter_sum / max(total, 1),
        "count": total,
    }


def train(model: CRvNN, head: ClassifierHead, train_samples, valid_samples,
          vocab, cfg: TrainConfig, log=None) -> TrainResult:
    """Train to the epoch budget; restores the best-validation weights."""
    params = dict(model.params)
    params.update(head.params)
    opt = build_optimizer(params, cfg)
    sched = PlateauSchedule(opt, cfg.patience, cfg.lr_factor)
    streams = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(streams[0])
    dropout_rng = np.random.default_rng(streams[1])

    result = TrainResult()
    best = (-1.0, np.inf)
    best_snapshot = None

    for epoch in range(1, cfg.epochs + 1):
        loss_sum, n_seen, iter_sum = 0.0, 0, 0.0
        for batch in iterate_batches(train_samples, vocab, cfg.batch_size,
                                     rng=shuffle_rng, sort_by_length=cfg.sort_by_length):
            opt.zero_grad()
            logits, penalty, iters = forward_batch(model, head, batch,
                                                   training=True, rng=dropout_rng)
            loss = total_loss(logits, batch.labels, penalty, cfg.gamma)
            loss.backward()
            clip_gradients(params, cfg.clip_norm)
            opt.step()
            n = len(batch.labels)
            loss_sum += float(loss.array) * n
            iter_sum += iters * n
            n_seen += n

        val = evaluate(model, head, valid_samples, vocab,
                       batch_size=cfg.batch_size, gamma=cfg.gamma)
        result.history.append({"epoch": epoch, "split": "train", "bucket": "all",
                               "accuracy": float("nan"), "loss": loss_sum / n_seen,
                               "mean_iterations": iter_sum / n_seen, "lr": opt.lr})
        result.history.append({"epoch": epoch, "split": "valid", "bucket": "all",
                               "accuracy": val["accuracy"], "loss": val["loss"],
                               "mean_iterations": val["mean_iterations"], "lr": opt.lr})
        if log:
            log(f"epoch {epoch}: train loss {loss_sum / n_seen:.4f}, "
                f"valid acc {val['accuracy']:.4f}, valid loss {val['loss']:.4f}, "
                f"iters {val['mean_iterations']:.1f}, lr {opt.lr:.2e}")

        score = (val["accuracy"], -val["loss"])
        if score > best:
            best = score
            best_snapshot = {k: p.array.copy() for k, p in params.items()}
            result.best_epoch = epoch
            result.best_accuracy = val["accuracy"]
        sched.observe(val["loss"])
        result.epochs_run = epoch
        if cfg.stop_accuracy and val["accuracy"] >= cfg.stop_accuracy:
            break

    if best_snapshot is not None:
        for k, p in params.items():
            p.array = best_snapshot[k]
    result.skipped_steps = opt.skipped
    return result


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"CRVNN1\n"


def save_checkpoint(path, config: dict, params: dict):
    """Single file: magic, u64 header length, JSON header, raw LE tensors."""
    manifest = []
    blobs = []
    for name in sorted(params):
        arr = params[name].array if isinstance(params[name], Tensor) else np.asarray(params[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"format_version": 1, "config": config,
                         "tensors": manifest}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (config dict, {name: array})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode())
        tensors = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            n_bytes = dtype.itemsize * int(np.prod(entry["shape"], dtype=np.int64)) \
                if entry["shape"] else dtype.itemsize
            raw = fh.read(n_bytes)
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header["config"], tensors


def vocab_for_task(task: str):
    if task == "listops":
        return listops_vocab()
    if task == "logic":
        return logic_vocab()
    raise ValueError(f"unknown task {task!r}")


def n_classes_for_task(task: str) -> int:
    return 10 if task == "listops" else 7


def head_input_dim(task: str, d_hidden: int) -> int:
    return d_hidden if task == "listops" else 4 * d_hidden


def build_model_and_head(task: str, model_cfg: ModelConfig, head_layers: int,
                         output_dropout: float, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    model = CRvNN(model_cfg, rng)
    head = ClassifierHead(head_input_dim(task, model_cfg.d_hidden),
                          n_classes_for_task(task), rng,
                          layers=head_layers, output_dropout=output_dropout)
    return model, head


def save_trained(path, task: str, model: CRvNN, head: ClassifierHead,
                 head_layers: int, output_dropout: float, extra: dict | None = None):
    from dataclasses import asdict

    config = {"task": task, "model": asdict(model.config),
              "head": {"layers": head_layers, "output_dropout": output_dropout}}
    if extra:
        config.update(extra)
    params = dict(model.params)
    params.update(head.params)
    save_checkpoint(path, config, params)


def load_trained(path):
    """Rebuild (model, head, config) from a checkpoint file."""
    config, tensors = load_checkpoint(path)
    model_cfg = ModelConfig(**config["model"])
    task = config["task"]
    model, head = build_model_and_head(task, model_cfg, config["head"]["layers"],
                                       config["head"]["output_dropout"], seed=0)
    for name, p in model.params.items():
        p.array = tensors[name].astype(p.array.dtype)
    for name, p in head.params.items():
        p.array = tensors[name].astype(p.array.dtype)
    return model, head, config


# ----------------------------------------------------------------- reports

METRIC_COLUMNS = ("epoch", "split", "bucket", "accuracy", "loss", "mean_iterations")


def write_metrics(path, rows):
    """Line-delimited TSV with a header row; one record per line."""
    with open(path, "w") as fh:
        fh.write("\t".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c)) for c in METRIC_COLUMNS) + "\n")


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return "n/a" if np.isnan(value) else f"{value:.6g}"
    return str(value)


def format_report(rows) -> str:
    """Human-readable fixed-width table of the same records."""
    widths = [8, 8, 12, 10, 10, 16]
    out = ["".join(str(c).ljust(w) for c, w in zip(METRIC_COLUMNS, widths))]
    for row in rows:
        out.append("".join(_fmt(row.get(c)).ljust(w) for c, w in zip(METRIC_COLUMNS, widths)))
    return "\n".join(out) + "\n"
