"""Re-target a trained motion model to new activities by fine-tuning its MLP head."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import torch

from ..errors import EmptyDataset, MixedRates
from ..nn import Adam, cross_entropy, make_generator
from .bench import EXTRA_ACTIVITIES, BenchSpec, render_user
from .dataset import SpecDataset, featurize_session
from .metrics import confusion_matrix, macro_f1
from .train import MotionModel, _tensor


@dataclass
class FinetuneConfig:
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0


@torch.no_grad()
def embed(model: MotionModel, images: np.ndarray, batch_size: int = 256) -> torch.Tensor:
    """Frozen first-stage features for a stack of images."""
    net = model.net
    net.eval()
    parts = [net.features(_tensor(images[i:i + batch_size]))
             for i in range(0, len(images), batch_size)]
    return torch.cat(parts) if parts else torch.zeros(0, net.flat_dim)


def finetune_embeddings(model: MotionModel, train: SpecDataset, val: SpecDataset,
                        n_classes: int, cfg: FinetuneConfig | None = None,
                        class_names=None) -> MotionModel:
    """Swap the final layer for an ``n_classes`` head and train the 3-layer MLP
    on frozen features. The input model is left untouched; the returned model
    keeps the best validation epoch (macro F1 over all new classes)."""
    cfg = cfg or FinetuneConfig()
    if len(train) == 0 or len(val) == 0:
        raise EmptyDataset("fine-tuning needs non-empty train and validation sets")
    if train.rate_hz != model.rate_hz or val.rate_hz != model.rate_hz:
        raise MixedRates(f"model at {model.rate_hz} Hz, data at {train.rate_hz}/{val.rate_hz} Hz")
    net = copy.deepcopy(model.net)
    head = net.classifier
    head.replace_head(n_classes, make_generator(cfg.seed))
    for p in net.stages.parameters():
        p.requires_grad_(False)

    f_train = embed(MotionModel(net, model.rate_hz), train.images)
    f_val = embed(MotionModel(net, model.rate_hz), val.images)
    y_train = torch.from_numpy(train.labels)
    opt = Adam(head.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    drop_gen = make_generator(cfg.seed + 1)
    history = []
    best_key, best_state, best_epoch = None, copy.deepcopy(head.state_dict()), -1
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size])
            opt.zero_grad()
            loss = cross_entropy(head(f_train[idx], train=True, gen=drop_gen), y_train[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        with torch.no_grad():
            z = head(f_val)
        val_loss = float(cross_entropy(z, torch.from_numpy(val.labels)))
        cm = confusion_matrix(val.labels, z.argmax(dim=1).numpy(), n_classes)
        val_f1 = 100.0 * macro_f1(cm, None)
        history.append((epoch, total / len(train), val_f1, val_loss))
        key = (val_f1, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_state, best_epoch = key, copy.deepcopy(head.state_dict()), epoch
    head.load_state_dict(best_state)
    net.eval()
    names = tuple(class_names) if class_names else tuple(f"class{i}" for i in range(n_classes))
    return MotionModel(net, model.rate_hz, names, cfg.seed, history, best_epoch)


def pseudo_activity_dataset(spec: BenchSpec, users, rate_hz: int = 100,
                            activities=tuple(EXTRA_ACTIVITIES), locations=None,
                            frame_stride: int = 1) -> SpecDataset:
    """Benchmark users performing only the held-out pseudo-activities, labeled
    ``0..len(activities)-1`` in the given order. Rendered in memory."""
    activities = list(activities)
    parts = []
    for u in users:
        idx = int(str(u).lstrip("u"))
        recs, segs = render_user(spec, idx, activities=activities)
        labels = [SimpleNamespace(activity=activities.index(a), start_unix_s=s, stop_unix_s=e)
                  for a, s, e in segs]
        parts.append(featurize_session(recs, labels, rate_hz, locations, frame_stride, idx))
    return SpecDataset.concat(parts)
