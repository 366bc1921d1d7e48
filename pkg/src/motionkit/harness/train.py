"""Supervised training, prediction and evaluation of the motion classifier."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import EmptyDataset, MixedRates
from ..ingest import CLASS_NAMES
from ..nn import Adam, MotionNet, build_motion_net, cross_entropy, make_generator
from ..nn.checkpoint import load_meta, load_state, save_state
from .dataset import SpecDataset
from .metrics import TARGET_CLASSES, confusion_matrix, macro_f1

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-5
    batch_size: int = 32
    seed: int = 0
    widths: tuple[int, ...] = (32, 64)
    hidden: tuple[int, int] = (512, 512)
    p_drop: float = 0.5
    include_other_in_macro: bool = False

    @property
    def macro_classes(self):
        return None if self.include_other_in_macro else TARGET_CLASSES


@dataclass
class MotionModel:
    net: MotionNet
    rate_hz: int
    class_names: tuple[str, ...] = CLASS_NAMES
    seed: int = 0
    history: list = field(default_factory=list)  # (epoch, train loss, val f1, val loss)
    best_epoch: int = -1


def _check(train: SpecDataset, val: SpecDataset) -> None:
    if len(train) == 0 or len(val) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if train.rate_hz != val.rate_hz or train.shape != val.shape:
        raise MixedRates(f"train at {train.rate_hz} Hz, val at {val.rate_hz} Hz")


def _tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).unsqueeze(1)


@torch.no_grad()
def logits(net: MotionNet, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    was_training = net.training
    net.eval()
    out = [net(_tensor(images[i:i + batch_size])).numpy()
           for i in range(0, len(images), batch_size)]
    net.train(was_training)
    if not out:
        return np.zeros((0, net.n_classes), np.float32)
    return np.concatenate(out)


def predict(model: MotionModel | MotionNet, images: np.ndarray) -> np.ndarray:
    net = model.net if isinstance(model, MotionModel) else model
    return logits(net, np.asarray(images)).argmax(axis=1)


def evaluate(model: MotionModel | MotionNet, data: SpecDataset,
             classes=TARGET_CLASSES) -> tuple[float, np.ndarray]:
    """Frame-level macro F1 in percent plus the full confusion matrix."""
    net = model.net if isinstance(model, MotionModel) else model
    cm = confusion_matrix(data.labels, predict(net, data.images), net.n_classes)
    return 100.0 * macro_f1(cm, classes), cm


def train_motion_model(train: SpecDataset, val: SpecDataset, cfg: TrainConfig) -> MotionModel:
    """Per-frame supervised training; each location's image is an independent
    sample. Returns the best-validation epoch, fused for inference."""
    _check(train, val)
    n_classes = max(len(CLASS_NAMES), int(train.labels.max()) + 1)
    net = build_motion_net(cfg.seed, input_shape=train.shape, widths=cfg.widths,
                           n_classes=n_classes, hidden=cfg.hidden, p_drop=cfg.p_drop)
    opt = Adam(net.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    drop_gen = make_generator(cfg.seed + 1)
    labels = torch.from_numpy(train.labels)
    history = []
    best_key, best_state, best_epoch = None, copy.deepcopy(net.state_dict()), -1
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            opt.zero_grad()
            loss = cross_entropy(net(_tensor(train.images[idx]), gen=drop_gen), labels[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        z = logits(net, val.images)
        val_loss = float(cross_entropy(torch.from_numpy(z), torch.from_numpy(val.labels)))
        cm = confusion_matrix(val.labels, z.argmax(axis=1), n_classes)
        val_f1 = 100.0 * macro_f1(cm, cfg.macro_classes)
        history.append((epoch, total / len(train), val_f1, val_loss))
        log.debug("epoch %d loss %.4f val f1 %.2f val loss %.4f", epoch, total / len(train),
                  val_f1, val_loss)
        key = (val_f1, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_state, best_epoch = key, copy.deepcopy(net.state_dict()), epoch
    net.load_state_dict(best_state)
    net.fuse()
    return MotionModel(net, train.rate_hz, CLASS_NAMES[:n_classes], cfg.seed, history, best_epoch)


def save_model(model: MotionModel, directory) -> Path:
    net = model.net
    meta = {
        "architecture": net.arch,
        "rate_hz": model.rate_hz,
        "class_names": list(model.class_names),
        "fused": net.is_fused,
        "seed": model.seed,
        "input_shape": list(net.input_shape),
        "widths": list(net.widths),
        "hidden": [net.classifier.fc1.out_features, net.classifier.fc2.out_features],
        "n_classes": net.n_classes,
        "p_drop": net.classifier.p_drop,
        "best_epoch": model.best_epoch,
    }
    return save_state(net, directory, meta)


def load_model(directory) -> MotionModel:
    meta = load_meta(directory)
    net = MotionNet(tuple(meta["input_shape"]), tuple(meta["widths"]), meta["n_classes"],
                    tuple(meta["hidden"]), meta["p_drop"])
    if meta["fused"]:
        net.fuse()
    load_state(net, directory)
    net.eval()
    return MotionModel(net, meta["rate_hz"], tuple(meta["class_names"]), meta["seed"],
                       best_epoch=meta.get("best_epoch", -1))
