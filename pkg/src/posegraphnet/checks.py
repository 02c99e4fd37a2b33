"""Finite-difference gradient suite over every differentiable op and the full loss."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from . import compute as C
from .compute.rng import STREAM_SYNTH
from .config import ModelConfig
from .data import make_batch, synth_generate
from .network import PoseGraphNet, se_block
from .objectives import combined_loss, idev_loss, mpjpe_loss, ploss
from .rotation import cross_tensor, from_6d_tensor, random_rotations

ELEMENTWISE_TOL = 1e-6
DEFAULT_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {"op": self.op, "max_rel_error": float(self.max_rel_error), "tolerance": self.tolerance,
                "ok": bool(self.ok)}


def _signed(rng, shape):
    # magnitudes in [0.1, 1] keep relu/abs kinks well clear of the FD step
    return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _leaf(x):
    return C.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def _weighted(fn: Callable, w: np.ndarray) -> Callable:
    return lambda *xs: C.tsum(fn(*xs) * w)


def _op_cases(rng) -> List[tuple]:
    a, b = _signed(rng, (3, 4)), _signed(rng, (3, 4))
    w34 = rng.normal(size=(3, 4))
    elementwise = [
        ("add", C.add, [a, b]), ("sub", C.sub, [a, b]), ("mul", C.mul, [a, b]),
        ("div", C.div, [a, b]), ("scale", lambda x: C.scale(x, -1.7), [a]),
        ("square", C.square, [a]), ("sqrt", C.sqrt, [np.abs(a)]), ("abs", C.absolute, [a]),
        ("relu", C.relu, [a]), ("sigmoid", C.sigmoid, [a]),
    ]
    cases = [(name, _weighted(fn, w34), xs, ELEMENTWISE_TOL) for name, fn, xs in elementwise]

    m1, m2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    x = rng.normal(size=(2, 3, 4))
    cases += [
        ("matmul", _weighted(C.matmul, rng.normal(size=(2, 3, 5))), [m1, m2], DEFAULT_TOL),
        ("transpose", _weighted(C.transpose, rng.normal(size=(2, 4, 3))), [x], DEFAULT_TOL),
        ("reshape", _weighted(lambda t: C.reshape(t, (6, 4)), rng.normal(size=(6, 4))), [x], DEFAULT_TOL),
        ("getitem", _weighted(lambda t: t[:, [0, 2, 2], 1:], rng.normal(size=(2, 3, 3))), [x], DEFAULT_TOL),
        ("concat", _weighted(lambda s, t: C.concat([s, t], axis=1), rng.normal(size=(2, 6, 4))),
         [x, rng.normal(size=(2, 3, 4))], DEFAULT_TOL),
        ("stack", _weighted(lambda s, t: C.stack([s, t], axis=0), rng.normal(size=(2, 2, 3, 4))),
         [x, rng.normal(size=(2, 3, 4))], DEFAULT_TOL),
        ("sum", _weighted(lambda t: C.tsum(t, axis=1), rng.normal(size=(2, 4))), [x], DEFAULT_TOL),
        ("mean", _weighted(lambda t: C.mean(t, axis=-1, keepdims=True), rng.normal(size=(2, 3, 1))),
         [x], DEFAULT_TOL),
    ]

    wb = rng.normal(size=(4, 5, 3))

    def bn(t, g, b_):
        return C.batchnorm(t, g, b_, C.BatchNormState.fresh(3), "train")

    cases.append(("batchnorm", _weighted(bn, wb),
                  [rng.normal(size=(4, 5, 3)), rng.uniform(0.5, 1.5, 3), rng.normal(size=3)], DEFAULT_TOL))

    def drop(t):
        # same mask on every call
        return C.dropout(t, 0.3, "train", np.random.default_rng(7))

    cases.append(("dropout", _weighted(drop, wb), [rng.normal(size=(4, 5, 3))], DEFAULT_TOL))
    cases.append(("cross", _weighted(cross_tensor, rng.normal(size=(5, 3))),
                  [rng.normal(size=(5, 3)), rng.normal(size=(5, 3))], DEFAULT_TOL))
    cases.append(("from_6d", _weighted(from_6d_tensor, rng.normal(size=(4, 3, 3))),
                  [rng.normal(size=(4, 6))], DEFAULT_TOL))
    cases.append(("se_block", _weighted(lambda t, s, e: se_block(t, s, e, 4), rng.normal(size=(2, 5, 8))),
                  [rng.normal(size=(2, 5, 8)), rng.normal(size=(8, 2)), rng.normal(size=(2, 8))], DEFAULT_TOL))

    Rg = random_rotations(6, rng).reshape(2, 3, 3, 3)
    Jg = rng.normal(size=(2, 4, 3))
    Xg = rng.normal(size=(2, 3, 3))
    cases += [
        ("mpjpe_loss", lambda p: mpjpe_loss(p, Jg), [rng.normal(size=(2, 4, 3))], DEFAULT_TOL),
        ("idev_loss", lambda r: idev_loss(r, Rg), [rng.normal(size=(2, 3, 6))], DEFAULT_TOL),
        ("ploss", lambda r, xp: ploss(r, Rg, xp, Xg),
         [rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 3, 3))], DEFAULT_TOL),
    ]
    return cases


def _model_cases(config: ModelConfig, seed: int) -> List[tuple]:
    """Full combined loss, eval mode, for each loss flavour that trains angles."""
    cases = []
    samples = synth_generate(4, C.make_rng(seed, STREAM_SYNTH))
    batch = make_batch(samples)
    probe = ("input.node.P", "input.edge.Wg2", "block0.ne0.node.A1", "block0.ne1.edge.Wg0",
             "pos_head.se.W_ex", "pos_head.fc.W", "rot_head.fc1.W", "rot_head.fc2.W")
    for loss in ("idev", "ploss"):
        cfg = replace(config, loss=loss)
        model = PoseGraphNet(cfg)
        target = batch.pos3d_mm / cfg.position_scale
        child = model.graph.mats.edge_child_joint

        def f(*_, model=model, cfg=cfg, target=target, child=child):
            pos, rot = model(batch.pose2d, batch.edge_feat, mode="eval")
            return combined_loss(pos, rot, target, batch.rotations, cfg, child).total

        names = [n for n in probe if n in model.params]
        cases.append((f"combined_loss[{loss}]", f, [model.params[n] for n in names], DEFAULT_TOL))
    return cases


def run_gradient_suite(config: Optional[ModelConfig] = None, seed: int = 0,
                       max_entries: int = 8) -> List[CheckResult]:
    """Grad-check every op; returns the worst relative error per op.

    ``config`` shapes the model used for the full-loss check; a small
    4-channel, single-block network by default.
    """
    rng = np.random.default_rng(seed)
    results = []
    for name, f, xs, tol in _op_cases(rng):
        err = C.grad_check(f, [_leaf(x) for x in xs])
        results.append(CheckResult(name, err, tol))
    config = config or ModelConfig(channels=4, blocks=1, squeeze_ratio=2, dropout=0.0, seed=seed)
    for name, f, params, tol in _model_cases(config, seed):
        err = C.grad_check(f, params, max_entries=max_entries, rng=np.random.default_rng(seed))
        results.append(CheckResult(name, err, tol))
    return results
