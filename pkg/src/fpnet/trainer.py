"""SGD-with-momentum training, evaluation, metrics CSV and checkpoints.

Checkpoint container (all integers little-endian)::

    b"FPNETCK\\0"        8-byte magic
    uint32               format version
    uint64               manifest length L
    L bytes              UTF-8 JSON manifest: metadata + per-tensor name/shape/dtype/offset/nbytes
    payload              raw little-endian IEEE-754 tensor bytes, concatenated
    uint32               CRC-32 over manifest and payload

The CRC is verified before anything is decoded, so a corrupted file never
yields a partially loaded model.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import time
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .layers import Module
from .ops import accuracy, softmax_cross_entropy
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

MAGIC = b"FPNETCK\0"
FORMAT_VERSION = 1
METRICS_HEADER = ("epoch", "train_loss", "train_acc", "test_error", "lr", "wall_seconds")


class CheckpointError(IOError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.1
    milestones: tuple = (100, 150)
    gamma: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    weight_decay: float = 1e-4
    seed: int = 0
    precision: str = "float32"
    augment: bool = True
    eval_batch_size: int = 500

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if self.lr <= 0 or self.gamma <= 0:
            raise ValueError("learning rates must stay positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Piecewise-constant rate for 0-indexed ``epoch``: multiplied by gamma at each milestone."""
    drops = sum(1 for m in config.milestones if epoch >= m)
    # 12 significant digits drops float noise such as 0.010000000000000002
    return float(f"{config.lr * config.gamma ** drops:.12g}")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_error: float
    lr: float
    wall_seconds: float

    def row(self) -> list[str]:
        return [str(self.epoch), repr(self.train_loss), repr(self.train_acc),
                repr(self.test_error), repr(self.lr), f"{self.wall_seconds:.3f}"]


def write_metrics_csv(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return [MetricsRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                          float(r["test_error"]), float(r["lr"]), float(r["wall_seconds"]))
            for r in rows]


def sgd_step(params, grads, momentum_state, lr: float, momentum: float, weight_decay: float,
             decay_mask=None) -> None:
    """In-place heavy-ball update: ``v = momentum*v + (g + wd*p)``; ``p -= lr*v``.

    ``momentum_state`` is a list of buffers (or None entries, created on first use)
    aligned with ``params``. ``decay_mask`` limits weight decay to selected params.
    """
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            name = getattr(p, "name", None) or f"param[{i}]"
            raise FloatingPointError(f"non-finite gradient in {name} (shape {p.shape})")
        d = g
        if weight_decay and (decay_mask is None or decay_mask[i]):
            d = g + weight_decay * p.data
        v = momentum_state[i]
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + d
        momentum_state[i] = v.astype(p.dtype, copy=False)
        p.data = (p.data - lr * momentum_state[i]).astype(p.dtype, copy=False)


class SGD:
    def __init__(self, named_params, lr=0.1, momentum=0.9, weight_decay=0.0):
        self.named = list(named_params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.buffers: list[np.ndarray | None] = [None] * len(self.named)
        for name, p in self.named:
            p.name = name

    @property
    def params(self):
        return [p for _, p in self.named]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        params = self.params
        sgd_step(params, [p.grad for p in params], self.buffers, self.lr, self.momentum,
                 self.weight_decay, [p.decay for p in params])

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"optim.{n}", b) for (n, _), b in zip(self.named, self.buffers) if b is not None)

    def load_state(self, arrays) -> None:
        for i, (n, p) in enumerate(self.named):
            b = arrays.get(f"optim.{n}")
            self.buffers[i] = None if b is None else np.array(b, dtype=p.dtype)


@dataclass
class Checkpoint:
    model: dict
    epoch: int
    tensors: "OrderedDict[str, np.ndarray]"
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"model": ckpt.model, "epoch": ckpt.epoch, "meta": ckpt.meta,
                           "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    body = manifest + b"".join(chunks)
    header = MAGIC + struct.pack("<IQ", ckpt.version, len(manifest))
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header + body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    head = len(MAGIC) + 12
    if len(blob) < head + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an fpnet checkpoint")
    version, mlen = struct.unpack("<IQ", blob[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body = blob[head:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    if mlen > len(body):
        raise CheckpointError(f"{path}: manifest length exceeds file size")
    manifest = json.loads(body[:mlen].decode())
    payload = body[mlen:]
    tensors = OrderedDict()
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return Checkpoint(manifest["model"], manifest["epoch"], tensors, manifest["meta"], version)


def model_identity(model) -> dict:
    spec = model.model_spec
    return {"base": spec.base, "config": spec.config, "q": spec.q, "ablation": spec.ablation,
            "num_classes": spec.num_classes, "seed": getattr(model, "seed", None)}


def make_checkpoint(model, optimizer: SGD, epoch: int, config: TrainConfig, history) -> Checkpoint:
    tensors = OrderedDict((n, p.data) for n, p in model.state_dict().items())
    tensors.update(optimizer.state())
    meta = {"train_config": asdict(config), "history": [asdict(r) for r in history]}
    return Checkpoint(model_identity(model), epoch, tensors, meta)


def restore(model, optimizer: SGD, ckpt: Checkpoint) -> list[MetricsRecord]:
    model_arrays = {k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")}
    model.load_state_dict(model_arrays)
    optimizer.load_state({k: v for k, v in ckpt.tensors.items() if k.startswith("optim.")})
    return [MetricsRecord(**r) for r in ckpt.meta.get("history", [])]


def evaluate(model: Module, dataset, batch_size: int = 500, policy=None) -> float:
    """Top-1 error over the whole split with eval-mode batch norm."""
    policy = policy or data_mod.AugmentPolicy()
    dtype = model.parameters()[0].dtype
    was_training = model.training
    model.eval()
    wrong = 0
    with no_grad():
        for idx in data_mod.batches(len(dataset), batch_size):
            x = data_mod.prepare_eval(dataset.raw[idx], policy).astype(dtype, copy=False)
            pred = model(Tensor(x)).data.argmax(axis=1)
            wrong += int((pred != dataset.labels[idx]).sum())
    model.train(was_training)
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return wrong / len(dataset)


@dataclass
class TrainResult:
    metrics: list
    min_test_error: float
    final_test_error: float
    checkpoint_path: Path | None = None


def train(model, train_set, test_set, config: TrainConfig, out_dir=None, resume: Checkpoint | None = None,
          progress=None) -> TrainResult:
    """Run the schedule, evaluating on ``test_set`` after every epoch.

    With ``out_dir`` the metrics CSV and ``last.ckpt`` are rewritten each epoch.
    Given (seed, config) the metrics stream is reproducible, including when
    resuming from a checkpoint.
    """
    dtype = np.dtype(config.precision)
    if model.parameters()[0].dtype != dtype:
        raise ValueError(f"model built in {model.parameters()[0].dtype}, config asks for {dtype}")
    policy = data_mod.AugmentPolicy(seed=config.seed)
    opt = SGD(model.named_parameters(), config.lr, config.momentum, config.weight_decay)
    history: list[MetricsRecord] = []
    start = 0
    if resume is not None:
        history = restore(model, opt, resume)
        start = resume.epoch + 1
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "last.ckpt"

    model.train()
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        opt.lr = lr_at(config, epoch)
        total_loss, correct, seen = 0.0, 0, 0
        for bi, idx in enumerate(data_mod.batches(len(train_set), config.batch_size, config.seed, epoch)):
            if len(idx) < 2:
                log.warning("epoch %d: skipping trailing batch of one sample (batch norm)", epoch)
                continue
            raw = train_set.raw[idx]
            if config.augment:
                x = data_mod.augment_batch(raw, policy, epoch, bi)
            else:
                x = data_mod.prepare_eval(raw, policy)
            labels = train_set.labels[idx]
            logits = model(Tensor(x.astype(dtype, copy=False)))
            loss = softmax_cross_entropy(logits, labels)
            opt.zero_grad()
            backward(loss)
            opt.step()
            total_loss += float(loss.item()) * len(idx)
            correct += int(round(accuracy(logits, labels) * len(idx)))
            seen += len(idx)
        test_error = evaluate(model, test_set, config.eval_batch_size, policy)
        rec = MetricsRecord(epoch, total_loss / seen, correct / seen, test_error, opt.lr,
                            time.perf_counter() - t0)
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.info("epoch %d loss %.4f acc %.4f test_err %.4f lr %g", epoch, rec.train_loss,
                 rec.train_acc, rec.test_error, rec.lr)
        if out_dir is not None:
            write_metrics_csv(out_dir / "metrics.csv", history)
            save_checkpoint(ckpt_path, make_checkpoint(model, opt, epoch, config, history))
        if not math.isfinite(rec.train_loss):
            raise TrainingDiverged(f"epoch {epoch}: training loss is not finite", ckpt_path)
        first = history[0].train_loss
        recent = history[-3:]
        if len(recent) == 3 and all(r.train_loss > 10 * first for r in recent):
            raise TrainingDiverged(f"epoch {epoch}: loss above 10x the first-epoch loss for 3 epochs",
                                   ckpt_path)

    errors = [r.test_error for r in history]
    return TrainResult(history, min(errors), errors[-1], ckpt_path)


def metrics_without_wall(path) -> str:
    """Metrics CSV text with the wall_seconds column dropped (for determinism checks)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            w.writerow(row[:-1])
    return out.getvalue()
