"""Supervised fine-tuning loop: masked-loss tokenization, AdamW, and a
warmup + cosine learning-rate schedule.

Each example becomes [BOS] prompt response [EOS]; the loss mask covers the
response tokens and the closing EOS, never the prompt, so the model learns
to answer queries rather than to write them. Batches are padded to their
longest member; trailing PAD positions carry zero mask and, because
attention is causal, contribute exactly zero gradient.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import model as lm
from .datagen import DatasetSplit, TrainingExample
from .hashing import hash64
from .tokenizer import BOS, EOS, PAD, Vocab, encode


class InvalidHyperparameters(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 3e-4
    batch_size: int = 16
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    warmup_frac: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0:
            raise InvalidHyperparameters("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidHyperparameters("batch_size and epochs must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidHyperparameters("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise InvalidHyperparameters("eps must be positive")
        if self.weight_decay < 0:
            raise InvalidHyperparameters("weight_decay must be >= 0")
        if not (0 <= self.warmup_frac < 1):
            raise InvalidHyperparameters("warmup_frac must lie in [0, 1)")


@dataclass(frozen=True)
class TrainRecord:
    step: int
    split: str  # "train" or "val"
    loss: float
    lr: float
    wall_ms: float


@dataclass(frozen=True)
class TrainLog:
    records: tuple[TrainRecord, ...]

    def validate(self) -> None:
        steps = [r.step for r in self.records]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("record steps must be strictly increasing")
        if any(not math.isfinite(r.loss) for r in self.records):
            raise ValueError("non-finite loss recorded")

    def losses(self, split: str) -> list[float]:
        return [r.loss for r in self.records if r.split == split]


def encode_example(vocab: Vocab, example: TrainingExample,
                   context_len: int):
    """(inputs, targets, mask) int/float lists for one example. When the
    full sequence overflows the context, tokens are dropped from the left
    of the prompt only; a response that cannot fit at all is an error."""
    prompt_ids = encode(vocab, example.prompt)
    response_ids = encode(vocab, example.response)
    budget = context_len + 1  # inputs are seq[:-1]
    overflow = 1 + len(prompt_ids) + len(response_ids) + 1 - budget
    if overflow > 0:
        if overflow > len(prompt_ids):
            raise lm.SequenceTooLong(
                "response alone exceeds the model context")
        prompt_ids = prompt_ids[overflow:]
    seq = [BOS] + prompt_ids + response_ids + [EOS]
    start = 1 + len(prompt_ids)  # index of the first response token in seq
    inputs = seq[:-1]
    targets = seq[1:]
    mask = [1.0 if j >= start - 1 else 0.0 for j in range(len(targets))]
    return inputs, targets, mask


def _pad_batch(encoded):
    width = max(len(t) for t, _, _ in encoded)
    b = len(encoded)
    tokens = np.full((b, width), PAD, dtype=np.int64)
    targets = np.full((b, width), PAD, dtype=np.int64)
    mask = np.zeros((b, width), dtype=np.float64)
    for i, (t, y, m) in enumerate(encoded):
        tokens[i, :len(t)] = t
        targets[i, :len(y)] = y
        mask[i, :len(m)] = m
    return tokens, targets, mask


def schedule_lr(step: int, total_steps: int, hp: Hyperparams) -> float:
    """Learning rate for a 1-based optimizer step: linear warmup over the
    first warmup_frac of steps, then cosine decay to zero."""
    warmup = int(round(hp.warmup_frac * total_steps))
    if warmup > 0 and step <= warmup:
        return hp.lr * step / warmup
    if total_steps <= warmup:
        return hp.lr
    progress = (step - warmup) / (total_steps - warmup)
    return hp.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class _AdamW:
    """AdamW with decoupled weight decay applied to matrices only (tensors
    of rank >= 2); norms and biases are never decayed."""

    def __init__(self, params: lm.Parameters, hp: Hyperparams):
        self.hp = hp
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: lm.Parameters, grads, lr: float) -> None:
        hp = self.hp
        self.t += 1
        bc1 = 1.0 - hp.beta1 ** self.t
        bc2 = 1.0 - hp.beta2 ** self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= hp.beta1
            m += (1.0 - hp.beta1) * g
            v *= hp.beta2
            v += (1.0 - hp.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + hp.eps)
            if p.ndim >= 2:
                update = update + hp.weight_decay * p
            p -= lr * update


def _epoch_batches(encoded, order, batch_size):
    for lo in range(0, len(order), batch_size):
        yield [encoded[i] for i in order[lo:lo + batch_size]]


def _eval_loss(params, config, encoded, batch_size):
    total, n = 0.0, 0
    for lo in range(0, len(encoded), batch_size):
        chunk = encoded[lo:lo + batch_size]
        tokens, targets, mask = _pad_batch(chunk)
        logits, _ = lm._forward_batch(params, config, tokens, need_cache=False)
        loss, _ = lm._masked_ce(logits, targets, mask)
        total += loss * len(chunk)
        n += len(chunk)
    return total / n


def train_sft(params: lm.Parameters, config: lm.ModelConfig,
              dataset: DatasetSplit, vocab: Vocab,
              hp: Hyperparams) -> tuple[lm.Parameters, TrainLog]:
    """Fine-tune on dataset.train with per-epoch validation loss records.
    Deterministic: (params, dataset, hp.seed) fixes the result bit-exactly.
    Returns fresh Parameters; the input object is left untouched."""
    hp.validate()
    if not dataset.train:
        raise InvalidHyperparameters("training split is empty")
    train_enc = [encode_example(vocab, ex, config.context_len)
                 for ex in dataset.train]
    val_enc = [encode_example(vocab, ex, config.context_len)
               for ex in dataset.val]
    work = params.copy()
    opt = _AdamW(work, hp)
    steps_per_epoch = -(-len(train_enc) // hp.batch_size)
    total_steps = steps_per_epoch * hp.epochs
    records = []
    record_no = 0
    step = 0
    for epoch in range(hp.epochs):
        rng = np.random.Generator(np.random.PCG64(
            hash64(hp.seed, "epoch", epoch)))
        order = rng.permutation(len(train_enc))
        for batch in _epoch_batches(train_enc, order, hp.batch_size):
            t0 = time.perf_counter()
            tokens, targets, mask = _pad_batch(batch)
            loss, grads = lm.loss_and_grads(work, config, tokens, targets,
                                            mask)
            step += 1
            lr = schedule_lr(step, total_steps, hp)
            opt.step(work, grads, lr)
            record_no += 1
            records.append(TrainRecord(
                step=record_no, split="train", loss=loss, lr=lr,
                wall_ms=(time.perf_counter() - t0) * 1000.0))
        if val_enc:
            t0 = time.perf_counter()
            vloss = _eval_loss(work, config, val_enc, hp.batch_size)
            record_no += 1
            records.append(TrainRecord(
                step=record_no, split="val", loss=vloss, lr=lr,
                wall_ms=(time.perf_counter() - t0) * 1000.0))
    log = TrainLog(tuple(records))
    log.validate()
    return work, log
