"""Command-line entry point: synth, train, eval, predict, gradcheck.

Machine-readable output (JSON lines) goes to stdout, human summaries to
stderr. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import List, Optional

from . import compute as C
from .checks import run_gradient_suite
from .compute.rng import STREAM_SYNTH, make_rng
from .config import ModelConfig, RunConfig
from .data import PoseSample, make_batch, read_jsonl, synth_generate, write_jsonl
from .errors import (AlignmentError, ConfigError, DataError, DegenerateRotationError,
                     ShapeError)
from .network import PoseGraphNet, count_parameters
from .train import evaluate, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def manifest_path(checkpoint: str) -> str:
    return checkpoint + ".manifest.json"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def _emit(rec: dict) -> None:
    print(json.dumps(rec), flush=True)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_samples(path: str, require_3d: bool = True) -> List[PoseSample]:
    try:
        samples = read_jsonl(path, require_3d=require_3d)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def load_model(checkpoint: str) -> PoseGraphNet:
    """Rebuild a model from a checkpoint and its manifest sidecar."""
    try:
        with open(manifest_path(checkpoint)) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint manifest for {checkpoint}: {exc}") from None
    try:
        raw = manifest["run_config"]["model"]
    except (KeyError, TypeError):
        raise DataError(f"checkpoint manifest for {checkpoint} has no model config") from None
    config = ModelConfig.from_dict(raw)
    model = PoseGraphNet(config)
    try:
        state = C.load_checkpoint(checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read {checkpoint}: {exc.strerror}") from None
    model.load_state_dict(state)
    return model


# ---- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n <= 0:
        raise ConfigError("--n must be positive")
    generator = {"generator": "fk_synth", "version": 1, "n": args.n, "seed": args.seed,
                 "stream": STREAM_SYNTH, "angle_limits": "default", "rest_pose": "default",
                 "camera": {"focal": [1000.0, 1000.0], "center": [500.0, 500.0],
                            "size": [1000, 1000], "distance_mm": 5000.0}}
    samples = synth_generate(args.n, make_rng(args.seed, STREAM_SYNTH))
    write_jsonl(args.out, samples)
    manifest = dict(generator, config_hash=_hash(generator), data_file=os.path.basename(args.out))
    with open(args.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    _note(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    if not run.train_path:
        raise ConfigError("train_path is required")
    if not run.checkpoint_out:
        raise ConfigError("checkpoint_out is required")
    train = _read_samples(run.train_path)
    val = _read_samples(run.val_path) if run.val_path else None

    model = PoseGraphNet(run.model)
    manifest = {"run_config": run.to_dict(), "config_hash": _hash(run.to_dict()),
                "lambda_angle": run.model.lambda_angle, "squeeze_ratio": run.model.squeeze_ratio,
                "parameter_count": count_parameters(model.params),
                "history": []}

    def on_epoch(epoch: int, rec: dict) -> None:
        _write_atomic(run.checkpoint_out, C.encode_checkpoint(model.state_dict()))
        manifest["history"].append(rec)
        _write_atomic(manifest_path(run.checkpoint_out), json.dumps(manifest, indent=2).encode())
        _emit(rec)
        _note(f"epoch {epoch}: loss {rec['train_loss']:.6g}, train P1 {rec['train_mpjpe_p1_mm']:.2f} mm")

    fit(model, run, train, val, on_epoch)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    batch = make_batch(_read_samples(args.data), model.graph.topo)
    metrics = evaluate(model, batch, scale=not args.no_scale)
    _emit(metrics)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    samples = _read_samples(args.inp, require_3d=False)
    batch = make_batch(samples, model.graph.topo)
    pos_mm, R = model.predict(batch.pose2d, batch.edge_feat)
    with open(args.out, "w") as fh:
        for i, sid in enumerate(batch.ids):
            fh.write(json.dumps({"id": sid, "pos3d": pos_mm[i].tolist(), "rotations": R[i].tolist()}) + "\n")
    _note(f"wrote {len(samples)} predictions to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = RunConfig.load(args.config).model if args.config else None
    results = run_gradient_suite(config, seed=args.seed)
    for r in results:
        _emit(r.to_dict())
    bad = [r.op for r in results if not r.ok]
    if bad:
        _note("gradient check failed for: " + ", ".join(bad))
        return EXIT_NUMERIC
    _note(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posegraphnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic FK dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a run config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--no-scale", action="store_true", help="rigid instead of similarity alignment for P2")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="3D poses and bone rotations from 2D input")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _note(f"config error: {exc}")
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        _note(f"data error: {exc}")
        return EXIT_DATA
    except (FloatingPointError, DegenerateRotationError, AlignmentError) as exc:
        _note(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
