"""Seeded reference training of the CNN with ordinary float arithmetic.

Needs the optional ``torch`` dependency.  The trained weights are exported
as a :class:`~approxfp.cnn.NetworkDef`; inference never touches torch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cnn import CONV1_SHAPE, CONV2_SHAPE, FC_IN, N_CLASSES, Dataset, NetworkDef, to_float


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 25
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 5.0  # gradient-norm clip; <= 0 disables
    seed: int = 0


@dataclass
class TrainResult:
    net: NetworkDef
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def _model(torch):
    nn = torch.nn
    return nn.Sequential(
        nn.Conv2d(CONV1_SHAPE[1], CONV1_SHAPE[0], 3, bias=False),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(CONV2_SHAPE[1], CONV2_SHAPE[0], 3, bias=False),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),  # (C, H, W) order, same as cnn.features
        nn.Linear(FC_IN, N_CLASSES),
    )


def train_reference(data: Dataset, params: TrainParams = TrainParams()) -> TrainResult:
    """Minibatch SGD with momentum and cosine decay; deterministic for a fixed seed."""
    import torch

    if len(data) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(params.seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    model = _model(torch)
    x = torch.from_numpy(to_float(data.images))
    y = torch.from_numpy(data.labels.astype(np.int64))
    loss_fn = torch.nn.CrossEntropyLoss()
    opt = torch.optim.SGD(model.parameters(), lr=params.lr, momentum=params.momentum, weight_decay=params.weight_decay)
    gen = torch.Generator().manual_seed(params.seed)

    with torch.no_grad():
        initial = float(loss_fn(model(x), y))
    losses = []
    for epoch in range(params.epochs):
        # cosine decay, evaluated per epoch
        for group in opt.param_groups:
            group["lr"] = params.lr * 0.5 * (1 + math.cos(math.pi * epoch / params.epochs))
        order = torch.randperm(len(data), generator=gen)
        total = 0.0
        for lo in range(0, len(data), params.batch_size):
            idx = order[lo : lo + params.batch_size]
            opt.zero_grad()
            loss = loss_fn(model(x[idx]), y[idx])
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            loss.backward()
            if params.clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), params.clip_norm)
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / len(data))

    conv1, conv2, fc = model[0], model[3], model[7]
    net = NetworkDef(
        conv1=conv1.weight.detach().numpy().copy(),
        conv2=conv2.weight.detach().numpy().copy(),
        fc_w=fc.weight.detach().numpy().copy(),
        fc_b=fc.bias.detach().numpy().copy(),
    )
    return TrainResult(net, initial, losses)
