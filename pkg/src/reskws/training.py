"""Training loop, learning-rate plateau schedule, checkpoints and the five-seed protocol.

Determinism: every random draw comes from generators seeded by the run seed.
The main generator (shuffling, cache eviction) is saved in checkpoints; the
augmentation of sample ``k`` on its ``g``-th (re)computation uses its own
generator seeded by ``(seed, k, g)``, so cached features can be rebuilt
exactly on resume from the generation counters alone. BLAS runs single
threaded here, so a fixed seed gives bit-identical runs.
"""

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, nn
from .dataset import (
    SILENCE_INDEX,
    AugmentationConfig,
    DatasetError,
    EpochCache,
    LabeledSample,
    augment,
    load_audio,
    make_silence,
    scan_dataset,
    split_items,
)
from .evaluation import accuracy_from_scores, confidence_interval
from .frontend import extract_mfcc
from .models import build, get_spec

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RKWSCKPT"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 26
    plateau_patience: int = 3
    min_improvement: float = 0.001  # validation accuracy, as a fraction (0.1 points)
    lr_floor: float = 1e-5
    seed: int = 1

    def __post_init__(self):
        for name in ("lr0", "lr_decay", "batch_size", "epochs", "plateau_patience", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def lr_schedule(history, lr, patience=3, decay=0.1, min_improvement=0.001, floor=1e-5):
    """Learning rate for the next epoch given validation accuracies so far.

    An epoch improves if it beats the best earlier accuracy by at least
    ``min_improvement``. After every ``patience`` consecutive non-improving
    epochs the rate is multiplied by ``decay``, never going below ``floor``.
    """
    if not history:
        raise ValueError("history must be non-empty")
    best, stale = history[0], 0
    for acc in history[1:]:
        if acc >= best + min_improvement:
            best, stale = acc, 0
        else:
            best = max(best, acc)
            stale += 1
    if stale > 0 and stale % patience == 0:
        return max(lr * decay, floor)
    return lr


# -- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    arch: str
    tensors: dict  # name -> float32 array: parameters, bn buffers, "velocity/<name>"
    meta: dict = field(default_factory=dict)  # epoch, lr, val_accuracy, rng state, ...

    @property
    def epoch(self):
        return self.meta.get("epoch", 0)

    @property
    def val_accuracy(self):
        return self.meta.get("val_accuracy")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Little-endian binary.

    magic "RKWSCKPT" | u32 version | u32 header length | UTF-8 JSON header
    | u32 tensor count | per tensor: u16 name length, name, u8 ndim,
    u32 dims..., float32 data (row-major).
    """
    header = json.dumps({"arch": ckpt.arch, "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    version, header_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    try:
        header = json.loads(take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return Checkpoint(header["arch"], tensors, header.get("meta", {}))


def model_tensors(model) -> dict:
    return {name: t.data.copy() for name, t in model.state_tensors().items()}


def load_into(model, ckpt: Checkpoint, optimizer=None) -> None:
    """Copy checkpoint tensors into ``model`` (and optimizer velocity), checking names and shapes."""
    state = model.state_tensors()
    wanted = set(state)
    have = {k for k in ckpt.tensors if not k.startswith("velocity/")}
    problems = []
    if wanted - have:
        problems.append(f"missing {sorted(wanted - have)}")
    if have - wanted:
        problems.append(f"unexpected {sorted(have - wanted)}")
    for name in sorted(wanted & have):
        if ckpt.tensors[name].shape != state[name].data.shape:
            problems.append(f"{name}: checkpoint {ckpt.tensors[name].shape} vs model {state[name].data.shape}")
    if problems:
        raise CheckpointMismatchError(
            f"checkpoint for {ckpt.arch!r} does not fit model {model.name!r}: " + "; ".join(problems)
        )
    for name, t in state.items():
        t.data[...] = ckpt.tensors[name]
    if optimizer is not None:
        for p, v in zip(optimizer.params, optimizer.velocity):
            key = f"velocity/{p.name}"
            if key in ckpt.tensors:
                v[...] = ckpt.tensors[key]


def model_from_checkpoint(ckpt: Checkpoint):
    model = build(get_spec(ckpt.arch))
    load_into(model, ckpt)
    return model


# -- data pipeline -----------------------------------------------------------


class KWSData:
    """Scanned corpus plus the per-split example lists a run trains and evaluates on.

    Split composition (which unknown clips, how many silence entries) depends
    only on ``data_seed``, so every trial of the five-seed protocol sees the
    same validation and test sets.
    """

    def __init__(self, root, samples, noise, aug: AugmentationConfig = AugmentationConfig(), data_seed=0):
        self.root = Path(root)
        self.samples = list(samples)
        self.noise = noise
        self.aug = aug
        self.data_seed = data_seed
        self.items = {}
        for i, split in enumerate(("train", "validation", "test")):
            self.items[split] = split_items(self.samples, split, aug, np.random.default_rng([data_seed, i]))
        if any(s.label == SILENCE_INDEX for items in self.items.values() for s in items) and not len(noise):
            raise DatasetError("silence examples requested but no background noise clips were found")
        self._eval_cache = {}

    @classmethod
    def from_root(cls, root, aug: AugmentationConfig = AugmentationConfig(), limit=None, data_seed=0):
        samples, noise = scan_dataset(root)
        if limit is not None and limit < len(samples):
            pick = np.random.default_rng([data_seed, 99]).choice(len(samples), size=limit, replace=False)
            samples = [samples[i] for i in sorted(pick)]
        return cls(root, samples, noise, aug, data_seed)

    def audio(self, sample: LabeledSample, rng) -> np.ndarray:
        if sample.path is None:
            return make_silence(self.noise, rng)
        return load_audio(self.root, sample)

    def train_features(self, index, generation, seed):
        rng = np.random.default_rng([seed, index, generation])
        sample = self.items["train"][index]
        return extract_mfcc(augment(self.audio(sample, rng), self.noise, self.aug, rng))

    def eval_arrays(self, split):
        """Un-augmented features and labels of a split, computed once."""
        if split not in self._eval_cache:
            items = self.items[split]
            feats = [
                extract_mfcc(self.audio(s, np.random.default_rng([self.data_seed, 1000 + i, 7])))
                for i, s in enumerate(items)
            ]
            x = np.stack(feats) if feats else np.zeros((0, 98, 40), np.float32)
            self._eval_cache[split] = (x, np.array([s.label for s in items], dtype=np.int64))
        return self._eval_cache[split]


def steps_per_epoch(n_examples, batch_size=64):
    return -(-n_examples // batch_size)


def train_step(model, optimizer, x, y):
    """One forward/backward/update. Returns ``(loss, probabilities)``."""
    model.zero_grad()
    logits = model.forward(x, train=True)
    loss, probs, grad = nn.softmax_cross_entropy(logits.astype(np.float64), y)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss} at lr={optimizer.lr}")
    model.backward(grad.astype(logits.dtype))
    optimizer.step()
    return loss, probs


def fit_arrays(model, x, y, cfg: TrainConfig = TrainConfig(), max_steps=1000, target_accuracy=None, eval_every=10):
    """Train on in-memory arrays without augmentation; stops at ``target_accuracy``.

    Returns a dict with per-step losses and (step, eval-mode training accuracy) pairs;
    ``eval_every=None`` skips the accuracy passes.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = nn.SGD(model.parameters(), cfg.lr0, cfg.momentum, cfg.weight_decay)
    losses, accs, step = [], [], 0
    while step < max_steps:
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, _ = train_step(model, opt, x[idx], y[idx])
            losses.append(loss)
            step += 1
            if eval_every and (step % eval_every == 0 or step == max_steps):
                acc = accuracy_from_scores(model.predict_proba(x), y)
                accs.append((step, acc))
                if target_accuracy is not None and acc >= target_accuracy:
                    return {"losses": losses, "accuracy": accs, "steps": step}
            if step >= max_steps:
                break
    return {"losses": losses, "accuracy": accs, "steps": step}


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def train(spec, data: KWSData, cfg: TrainConfig = TrainConfig(), out_dir=None, resume_from=None, max_epochs=None):
    """Train with augmentation, per-epoch cache eviction and plateau LR decay.

    Keeps the checkpoint with the best validation accuracy. With ``out_dir``,
    writes ``best.ckpt``, ``last.ckpt`` and ``metrics.json`` after every epoch.
    ``resume_from`` continues a run from a ``last.ckpt``; ``max_epochs`` stops
    early (after that many epochs in total) without changing the schedule.
    """
    spec = get_spec(spec)
    if not data.items["train"]:
        raise DatasetError("training split is empty")
    x_val, y_val = data.eval_arrays("validation")
    if len(y_val) == 0:
        raise DatasetError("validation split is empty")

    model = build(spec, np.random.default_rng([cfg.seed, 0]))
    opt = nn.SGD(model.parameters(), cfg.lr0, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    cache = EpochCache()
    generations = {}
    history, start_epoch, lr = [], 0, cfg.lr0
    best = None

    if resume_from is not None:
        if resume_from.arch != spec.name:
            raise CheckpointMismatchError(f"resume checkpoint is {resume_from.arch!r}, requested {spec.name!r}")
        load_into(model, resume_from, opt)
        meta = resume_from.meta
        start_epoch, lr, history = meta["epoch"], meta["lr"], list(meta["history"])
        rng.bit_generator.state = meta["rng_state"]
        generations = {int(k): v for k, v in meta["generations"].items()}
        for key in meta["cached"]:
            cache.put(key, data.train_features(key, generations[key] - 1, cfg.seed))
        if out_dir is not None and (Path(out_dir) / "best.ckpt").exists():
            best = load_checkpoint(Path(out_dir) / "best.ckpt")

    def features(key):
        def compute():
            gen = generations.get(key, 0)
            generations[key] = gen + 1
            return data.train_features(key, gen, cfg.seed)

        return cache.get(key, compute)

    n_train = len(data.items["train"])
    labels = np.array([s.label for s in data.items["train"]], dtype=np.int64)
    last_epoch = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    last = None
    for epoch in range(start_epoch, last_epoch):
        opt.lr = lr
        order = rng.permutation(n_train)
        total_loss, correct, steps = 0.0, 0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = np.stack([features(int(k)) for k in idx])
            try:
                loss, probs = train_step(model, opt, x, labels[idx])
            except FloatingPointError as exc:
                raise NonFiniteLossError(f"{exc} (epoch {epoch + 1}, batch {steps}, lr {lr})") from exc
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == labels[idx]))
            steps += 1
        cache.evict(data.aug.cache_eviction_frac, rng)
        val_acc = accuracy_from_scores(model.predict_proba(x_val), y_val)
        history.append(
            {
                "epoch": epoch + 1,
                "lr": lr,
                "steps": steps,
                "train_loss": total_loss / n_train,
                "train_accuracy": correct / n_train,
                "val_accuracy": val_acc,
            }
        )
        log.info("epoch %d lr %.3g loss %.4f train %.4f val %.4f", epoch + 1, lr, total_loss / n_train, correct / n_train, val_acc)
        lr = lr_schedule(
            [h["val_accuracy"] for h in history], lr, cfg.plateau_patience, cfg.lr_decay, cfg.min_improvement, cfg.lr_floor
        )
        tensors = model_tensors(model)
        tensors.update({f"velocity/{p.name}": v.copy() for p, v in zip(opt.params, opt.velocity)})
        meta = {
            "epoch": epoch + 1,
            "lr": lr,
            "val_accuracy": val_acc,
            "history": history,
            "rng_state": rng.bit_generator.state,
            "generations": {str(k): v for k, v in sorted(generations.items())},
            "cached": sorted(cache.keys()),
            "seed": cfg.seed,
            "config": asdict(cfg),
        }
        last = Checkpoint(spec.name, tensors, json.loads(json.dumps(meta)))
        if best is None or val_acc > best.val_accuracy:
            best = last
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(last, out / "last.ckpt")
            if best is last:
                save_checkpoint(best, out / "best.ckpt")
            _write_json(out / "metrics.json", {"arch": spec.name, "seed": cfg.seed, "epochs": history})
    if last is None:
        raise ValueError("no epochs to run")
    return TrainResult(best, last, history)


def run_metadata(cfg: TrainConfig, aug: AugmentationConfig, **extra):
    return {
        "version": __version__,
        "train_config": asdict(cfg),
        "augmentation": asdict(aug),
        "seed": cfg.seed,
        "workers": 1,
        "bit_deterministic": True,
        "created_unix": time.time(),
        **extra,
    }


def run_trials(spec, data: KWSData, cfg: TrainConfig = TrainConfig(), seeds=(1, 2, 3, 4, 5), out_dir=None):
    """Train once per seed, score the best checkpoint on the test split, and
    return ``(accuracies, (mean, half_width))`` with a 95% Student-t interval."""
    x_test, y_test = data.eval_arrays("test")
    accs = []
    for seed in seeds:
        sub = None if out_dir is None else Path(out_dir) / f"seed{seed}"
        result = train(spec, data, replace(cfg, seed=seed), out_dir=sub)
        model = model_from_checkpoint(result.best)
        accs.append(accuracy_from_scores(model.predict_proba(x_test), y_test))
    return accs, confidence_interval(accs)
