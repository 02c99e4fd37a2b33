"""Training and evaluation loops shared by the CLI and the tests."""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from . import compute as C
from .compute.rng import STREAM_DROPOUT, STREAM_SHUFFLE, make_rng
from .config import RunConfig
from .data import Batch, PoseSample, default_rest_pose, make_batch
from .errors import DataError
from .network import PoseGraphNet
from .objectives import LossValue, combined_loss, evaluate_metrics


class Trainer:
    def __init__(self, model: PoseGraphNet, lr: float = 1e-4, seed: Optional[int] = None):
        self.model = model
        seed = model.config.seed if seed is None else seed
        self.optimizer = C.Adam(model.trainable(), lr=lr)
        self.dropout_rng = make_rng(seed, STREAM_DROPOUT)
        rest = default_rest_pose(model.graph.topo)
        self.rest_vectors = rest.directions
        self.child_joint = model.graph.mats.edge_child_joint

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.optimizer.lr = value

    def loss(self, batch: Batch, mode: str = "train") -> LossValue:
        if batch.pos3d_mm is None or batch.rotations is None:
            raise DataError("training batch has no 3D targets")
        cfg = self.model.config
        pos, rot6d = self.model(batch.pose2d, batch.edge_feat, mode=mode,
                                rng=self.dropout_rng if mode == "train" else None)
        return combined_loss(pos, rot6d, batch.pos3d_mm / cfg.position_scale, batch.rotations, cfg,
                             self.child_joint, self.rest_vectors)

    def step(self, batch: Batch) -> LossValue:
        value = self.loss(batch, "train")
        if not np.isfinite(value.total.item()):
            raise FloatingPointError(f"non-finite loss {value.total.item()}")
        self.optimizer.zero_grad()
        value.total.backward()
        self.optimizer.step()
        return value


def evaluate(model: PoseGraphNet, batch: Batch, scale: bool = True) -> dict:
    if batch.pos3d_mm is None or batch.rotations is None:
        raise DataError("evaluation batch has no 3D targets")
    pos_mm, R = model.predict(batch.pose2d, batch.edge_feat)
    return evaluate_metrics(pos_mm, batch.pos3d_mm, R, batch.rotations, scale=scale)


def fit(model: PoseGraphNet, run: RunConfig, train_samples: Sequence[PoseSample],
        val_samples: Optional[Sequence[PoseSample]] = None,
        on_epoch: Optional[Callable[[int, dict], None]] = None) -> List[dict]:
    """Epoch loop with seeded shuffling and step learning-rate decay.

    Returns one log record per epoch; ``on_epoch`` is called after each.
    """
    trainer = Trainer(model, lr=run.lr, seed=run.seed)
    shuffle_rng = make_rng(run.seed, STREAM_SHUFFLE)
    topo = model.graph.topo
    full_train = make_batch(train_samples, topo)
    full_val = make_batch(val_samples, topo) if val_samples else None
    history = []
    n = len(train_samples)
    for epoch in range(run.epochs):
        trainer.lr = run.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, run.batch_size):
            idx = order[start:start + run.batch_size]
            batch = make_batch([train_samples[i] for i in idx], topo)
            losses.append(trainer.step(batch).total.item())
        rec = {"epoch": epoch, "lr": trainer.lr, "train_loss": float(np.mean(losses))}
        m = evaluate(model, full_train)
        rec["train_mpjpe_p1_mm"] = m["mpjpe_p1_mm"]
        rec["train_mpjae_rad"] = m["mpjae_rad"]
        if full_val is not None:
            m = evaluate(model, full_val)
            rec["val_mpjpe_p1_mm"] = m["mpjpe_p1_mm"]
            rec["val_mpjae_rad"] = m["mpjae_rad"]
        history.append(rec)
        if on_epoch is not None:
            on_epoch(epoch, rec)
    return history
