"""Two-phase training protocol: source-domain training on bug fixes, then
target-domain tuning at one tenth of the learning rate, with early stopping
on validation sequence accuracy. Also hosts dataset splitting."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import micronet
from .encoding import Sample, Vocabulary
from .inference import batched_greedy_decode, neural_beam_for_sample
from .micronet import AdamState, ModelConfig, ModelState, NonFiniteLossError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    batch_size: int = 32
    eval_interval: int = 500
    patience: int = 2
    max_steps: int = 10000
    seed: int = 0
    target_lr_factor: float = 0.1
    eval_beam: int = 1
    max_decode_len: int = 100
    decay_factor: float = 0.9
    decay_start: int = 50000
    decay_interval: int = 10000

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if min(self.base_lr, self.batch_size, self.eval_interval) <= 0:
            raise ValueError("base_lr, batch_size and eval_interval must be positive")


@dataclass
class SplitSpec:
    strategy: str = "random"  # "random" or "time"
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20
    seed: int = 0
    val_start: str | None = None  # ISO dates for the time strategy
    test_start: str | None = None

    def __post_init__(self):
        if self.strategy == "random":
            if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
                raise ValueError("split fractions must sum to 1")
        elif self.strategy == "time":
            if not self.val_start or not self.test_start:
                raise ValueError("time strategy needs val_start and test_start")
            if self.val_start >= self.test_start:
                raise ValueError("date thresholds must be ordered")
        else:
            raise ValueError(f"unknown split strategy: {self.strategy}")


def _sample_key(sample):
    if isinstance(sample, Sample):
        return (sample.input, sample.target)
    return repr(sample)


def split(dataset, spec: SplitSpec, key=_sample_key):
    """Disjoint (train, val, test) partition.

    random: seeded shuffle then fraction cuts. time: items dated before
    val_start train, before test_start val, rest test. Samples identical
    under `key` never span splits: collisions drop from train first, then
    from val, never from test.
    """
    items = list(dataset)
    if spec.strategy == "random":
        order = np.random.default_rng(spec.seed).permutation(len(items))
        shuffled = [items[i] for i in order]
        n_train = int(len(items) * spec.train_frac)
        n_val = int(len(items) * spec.val_frac)
        train = shuffled[:n_train]
        val = shuffled[n_train : n_train + n_val]
        test = shuffled[n_train + n_val :]
    else:
        train, val, test = [], [], []
        for item in items:
            date = item.meta.get("date") if hasattr(item, "meta") else None
            if not date:
                raise ValueError("time split needs a date on every sample")
            if date < spec.val_start:
                train.append(item)
            elif date < spec.test_start:
                val.append(item)
            else:
                test.append(item)
    test_keys = {key(s) for s in test}
    val = [s for s in val if key(s) not in test_keys]
    val_keys = {key(s) for s in val}
    train = [s for s in train if key(s) not in test_keys and key(s) not in val_keys]
    return train, val, test


class EarlyStopper:
    """Stop after `patience` consecutive evaluations without improvement.

    Improvement is a strictly greater metric; the checkpoint from the best
    evaluation wins.
    """

    def __init__(self, patience: int = 2):
        self.patience = patience
        self.best_metric = None
        self.best_index = None
        self.fails = 0
        self.count = 0

    def update(self, metric: float) -> bool:
        """Record one evaluation; True means stop now."""
        if self.best_metric is None or metric > self.best_metric:
            self.best_metric = metric
            self.best_index = self.count
            self.fails = 0
        else:
            self.fails += 1
        self.count += 1
        return self.fails >= self.patience


@dataclass
class TrainResult:
    state: ModelState
    best_metric: float | None
    steps_run: int
    history: list = field(default_factory=list)


def evaluate_sequence_accuracy(state: ModelState, samples, config: TrainConfig) -> float:
    """Fraction of samples whose decoded diff exactly equals the gold one."""
    if not samples:
        return 0.0
    golds = [list(s.target) for s in samples]
    if config.eval_beam == 1:
        preds = batched_greedy_decode(state, samples, max_len=config.max_decode_len)
        hits = sum(p == g for p, g in zip(preds, golds))
    else:
        hits = 0
        for sample, gold in zip(samples, golds):
            hyps = neural_beam_for_sample(
                state, sample, width=config.eval_beam, max_len=config.max_decode_len
            )
            hits += any(list(h.tokens) == gold for h in hyps)
    return hits / len(samples)


def _minibatches(samples, batch_size, rng):
    order = rng.permutation(len(samples))
    for lo in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[lo : lo + batch_size]]
        if chunk:
            yield chunk


def run_training(
    state: ModelState,
    train_samples,
    val_samples,
    config: TrainConfig,
    lr_scale: float = 1.0,
    log_path=None,
) -> TrainResult:
    """Shared loop for source training, target tuning and denoising runs.

    Evaluates every eval_interval steps, early-stops after `patience`
    consecutive non-improving evaluations, and returns the checkpoint with
    the best validation metric. Divergence aborts with the best (or last
    finite) checkpoint so far.
    """
    if not train_samples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng(config.seed + 1)
    opt = AdamState.for_params(state.params)
    stopper = EarlyStopper(config.patience)
    best = state.copy()
    best_metric = None
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        while step < config.max_steps:
            for batch_samples in _minibatches(train_samples, config.batch_size, rng):
                if step >= config.max_steps:
                    break
                batch = micronet.make_batch(batch_samples, state.vocab)
                lr = lr_scale * micronet.lr_at(
                    step,
                    config.base_lr,
                    config.decay_factor,
                    config.decay_start,
                    config.decay_interval,
                )
                try:
                    train_loss, grads = micronet.loss_and_grads(state, batch, train_rng=dropout_rng)
                except NonFiniteLossError:
                    log.warning("non-finite loss at step %d; aborting run", step)
                    return TrainResult(best, best_metric, step, history)
                micronet.adam_step(state, opt, grads, lr)
                step += 1
                if step % config.eval_interval == 0:
                    metric = evaluate_sequence_accuracy(state, val_samples, config)
                    entry = {"step": step, "train_loss": train_loss, "val_metric": metric, "lr": lr}
                    history.append(entry)
                    if log_fh:
                        log_fh.write(json.dumps(entry) + "\n")
                        log_fh.flush()
                    if stopper.best_metric is None or metric > stopper.best_metric:
                        best = state.copy()
                        best_metric = metric
                    if stopper.update(metric):
                        return TrainResult(best, best_metric, step, history)
    finally:
        if log_fh:
            log_fh.close()
    if best_metric is None:  # no evaluation ever ran: latest weights win
        best = state.copy()
    return TrainResult(best, best_metric, step, history)


def train_source(
    config: TrainConfig,
    model_config: ModelConfig,
    train_samples,
    val_samples,
    vocab: Vocabulary,
    log_path=None,
) -> TrainResult:
    """Phase one: train from scratch on the generic bug-fix corpus."""
    state = ModelState.initialize(model_config, vocab, seed=config.seed)
    return run_training(state, train_samples, val_samples, config, log_path=log_path)


def tune_target(
    source_state: ModelState,
    config: TrainConfig,
    train_samples,
    val_samples,
    vocab: Vocabulary | None = None,
    log_path=None,
) -> TrainResult:
    """Phase two: continue from a source checkpoint at a reduced LR.

    The checkpoint's vocabulary stays authoritative; passing a different
    one is an error (weight shapes would no longer match the data).
    """
    if vocab is not None and vocab != source_state.vocab:
        raise ValueError("vocabulary mismatch between checkpoint and samples")
    state = source_state.copy()
    return run_training(
        state, train_samples, val_samples, config, lr_scale=config.target_lr_factor, log_path=log_path
    )


def pretrain_denoise(
    config: TrainConfig,
    model_config: ModelConfig,
    noised_samples,
    val_samples,
    vocab: Vocabulary,
    log_path=None,
) -> TrainResult:
    """Denoising substitute for source-domain training (same loop)."""
    return train_source(config, model_config, noised_samples, val_samples, vocab, log_path=log_path)
