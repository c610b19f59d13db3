"""
Training with Adam, one bag per step, and early stopping on validation loss.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import logging
from typing import List

import numpy as np

from .errors import ConfigError, InputError, NumericError
from .metrics import balanced_accuracy
from .model import decide
from .params import adam_step
from .tensor import cross_entropy_logits, no_grad
from .util import atomic_write


logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_bacc")


@dataclass(frozen=True)
class TrainConfig:

    lr: float = 1e-4
    weight_decay: float = 1e-5
    max_epochs: int = 100
    patience: int = 15
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size != 1:
            raise ConfigError(f"Only a batch size of 1 is supported, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError(f"patience must be between 1 and max_epochs ({self.max_epochs}), "
                              f"got {self.patience}")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError(f"Bad learning rate {self.lr} or weight decay {self.weight_decay}")


class EarlyStopping:

    """
    Tracks the best (lowest) validation loss. `step` returns True when the
    loss improved; `should_stop` is set once `patience` epochs in a row
    went by without improvement.
    """

    def __init__(self, patience=15, delta=0.0):
        self.patience = patience
        self.delta = delta
        self.counter = 0
        self.best_loss = None
        self.best_epoch = None
        self.should_stop = False

    def step(self, val_loss, epoch):
        if self.best_loss is None or val_loss < self.best_loss - self.delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.should_stop = True
        return False


@dataclass
class Prediction:

    id: str
    label: int
    predicted: int
    probabilities: np.ndarray
    loss: float
    n_tokens: int


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_bacc: float


def _predict_bag(model, bag):
    trace = model.forward(bag.features)
    loss = cross_entropy_logits(trace.logits, bag.label)
    predicted, probabilities = decide(trace.logits.data)
    return Prediction(id=bag.id, label=bag.label, predicted=predicted,
                      probabilities=probabilities, loss=float(loss.item()),
                      n_tokens=bag.n_tokens)


def evaluate(model, bags, workers=None) -> List[Prediction]:
    """
    Predictions for all bags, in the order given. The parameters are only
    read, so with `workers` the bags are spread over a thread pool.
    """
    with no_grad():
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                return list(executor.map(lambda bag: _predict_bag(model, bag), bags))
        return [_predict_bag(model, bag) for bag in bags]


def _train_step(model, bag, cfg, epoch):
    model.store.zero_grad()
    try:
        loss, _ = model.loss(bag.features, bag.label)
        loss.backward()
        adam_step(model.store, lr=cfg.lr, wd=cfg.weight_decay)
    except NumericError as e:
        raise NumericError(f"Training diverged: {e}", {"epoch": epoch, "bag": bag.id}) from e
    return float(loss.item())


def train(model, train_bags, val_bags, cfg: TrainConfig):
    """
    Train in place and return the model (with the parameters of the best
    validation epoch restored) and the per-epoch history.
    """
    if not train_bags:
        raise InputError("The training split is empty")
    if not val_bags:
        raise InputError("The validation split is empty")
    num_classes = model.config.num_classes
    for bag in list(train_bags) + list(val_bags):
        if not 0 <= bag.label < num_classes:
            raise InputError(f"Bag {bag.id}: label {bag.label} out of range for "
                             f"{num_classes} classes")
    missing = set(range(num_classes)) - {bag.label for bag in val_bags}
    if missing:
        raise InputError(f"The validation split has no bags of class(es) {sorted(missing)}")

    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    best = model.store.snapshot()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_bags))
        train_loss = float(np.mean([_train_step(model, train_bags[i], cfg, epoch) for i in order]))

        predictions = evaluate(model, val_bags)
        val_loss = float(np.mean([p.loss for p in predictions]))
        if not np.isfinite(val_loss):
            raise NumericError("Validation loss is not finite", {"epoch": epoch})
        val_bacc = balanced_accuracy([p.label for p in predictions],
                                     [p.predicted for p in predictions], num_classes)
        history.append(EpochRecord(epoch, train_loss, val_loss, val_bacc))
        logger.info("Epoch %d: train loss %.5f, val loss %.5f, val B-Acc %.4f",
                    epoch, train_loss, val_loss, val_bacc)

        if stopper.step(val_loss, epoch):
            best = model.store.snapshot()
        elif stopper.should_stop:
            logger.info("No improvement for %d epochs, stopping after epoch %d (best was %d)",
                        cfg.patience, epoch, stopper.best_epoch)
            break

    model.store.restore(best)
    return model, history


def write_history_csv(path, history):
    with atomic_write(path, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for record in history:
            writer.writerow([record.epoch, repr(record.train_loss),
                             repr(record.val_loss), repr(record.val_bacc)])
