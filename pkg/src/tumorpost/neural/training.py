"""Two-phase training: Adam warmup, then SGD with momentum fine-tuning.

The checkpoint with the lowest validation loss is returned; early stopping
uses a patience counter on validation loss that resets when the schedule
switches phase.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from .losses import bce_loss
from .model import Cnn3dConfig, Cnn3dModel


@dataclass
class TrainSchedule:
    phase1_epochs: int = 30
    adam_lr: float = 1e-3
    sgd_lr: float = 1e-4
    sgd_momentum: float = 0.9
    patience: int = 10
    max_epochs: int = 40

    def __post_init__(self):
        if self.max_epochs <= 0 or self.phase1_epochs <= 0:
            raise ValueError("epoch counts must be positive")

    @staticmethod
    def batch_size(patch_size):
        return 32 if patch_size <= 15 else 16


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for _, p in params]
        self.v = [np.zeros_like(p) for _, p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for i, ((_, p), (_, g)) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1 ** self.t)
            vh = self.v[i] / (1 - self.b2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


class SgdMomentum:
    def __init__(self, params, lr=1e-4, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p) for _, p in params]

    def step(self, params, grads):
        for i, ((_, p), (_, g)) in enumerate(zip(params, grads)):
            self.vel[i] = self.momentum * self.vel[i] - self.lr * g
            p += self.vel[i]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    val_accuracy: float


def evaluate(model, x, y, batch=256):
    losses = []
    correct = 0
    n = x.shape[0]
    for lo in range(0, n, batch):
        p = model.forward(x[lo:lo + batch])
        loss, _ = bce_loss(p, y[lo:lo + batch])
        losses.append(loss * (min(lo + batch, n) - lo))
        correct += int(((p >= 0.5) == (y[lo:lo + batch] >= 0.5)).sum())
    return float(np.sum(losses) / n), correct / n


def train_patch_cnn(train_x, train_y, val_x, val_y,
                    schedule: TrainSchedule = None,
                    config: Cnn3dConfig = None, seed: int = 0):
    """Train the patch classifier; returns (model_at_best_val_loss, history).

    Patches are (N, s, s, s) float arrays in [0, 1]; labels are {0, 1}.
    """
    schedule = schedule or TrainSchedule()
    config = config or Cnn3dConfig()
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.float64)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("train and validation splits must be non-empty")
    if np.unique(train_y).size < 2:
        raise ValueError("training labels must contain both classes")
    if config.patch_size >= 23:
        warnings.warn(
            f"patch size {config.patch_size} is known not to converge reliably",
            stacklevel=2,
        )
    model = Cnn3dModel(config, seed=seed)
    batch = TrainSchedule.batch_size(config.patch_size)
    optimizer = Adam(model.parameters(), lr=schedule.adam_lr)
    phase = "adam"
    best_val = np.inf
    best_weights = model.get_weights()
    since_improve = 0
    history = []
    n = train_x.shape[0]
    for epoch in range(1, schedule.max_epochs + 1):
        if phase == "adam" and epoch > schedule.phase1_epochs:
            phase = "sgd"
            optimizer = SgdMomentum(
                model.parameters(), lr=schedule.sgd_lr, momentum=schedule.sgd_momentum
            )
            since_improve = 0  # patience counter resets at phase change
        order = rngmod.stream(seed, "shuffle", epoch).permutation(n)
        epoch_losses = []
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            p = model.forward(train_x[idx], train=True)
            loss, dp = bce_loss(p, train_y[idx])
            model.backward(dp)
            optimizer.step(model.parameters(), model.gradients())
            epoch_losses.append(loss * idx.size)
        train_loss = float(np.sum(epoch_losses) / n)
        val_loss, val_acc = evaluate(model, val_x, val_y)
        history.append(EpochRecord(epoch, phase, train_loss, val_loss, val_acc))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_weights = model.get_weights()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= schedule.patience:
                break
    model.set_weights(best_weights)
    return model, history


def save_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "phase", "train_loss", "val_loss", "val_accuracy"])
        for rec in history:
            writer.writerow([
                rec.epoch, rec.phase, repr(rec.train_loss), repr(rec.val_loss),
                repr(rec.val_accuracy),
            ])
