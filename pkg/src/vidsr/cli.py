"""Command-line front end: ``vidsr <command> [--config FILE] [flags]``.

Every command reads an optional JSON config file holding the same keys as its
flags (underscored). Flags given on the command line win over the file.
Exit codes: 0 success, 1 computation failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import cost, metrics
from .checkpoint import CheckpointError, load_checkpoint
from .data import (PATCH_SIZE, SAMPLES_PER_CLIP, VALIDATION_FRACTION, Patch, SampleSet, extract_samples)
from .frames import FrameReadError, read_clip, write_clip, write_flow, write_frame
from .motion import MCNetwork, compensate_block, flow_to_pixels
from .networks import KINDS, SRNetwork, build_network, forward_sr, stream_super_resolve
from .trainer import REGIMES, TrainConfig, Trainer

log = logging.getLogger("vidsr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"
STORE = "patches.npz"


class UsageError(Exception):
    """Bad invocation: missing inputs, inconsistent options, incompatible files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: Optional[Path] = None
    verbose: bool = False


class PrepareConfig(_Strict):
    clips: list[Path] = Field(min_length=1)
    out: Path
    d0: int = Field(3, ge=1)
    r: int = Field(3, ge=1)
    samples_per_clip: int = Field(SAMPLES_PER_CLIP, ge=1)
    patch_size: int = Field(PATCH_SIZE, ge=1)
    validation_fraction: float = Field(VALIDATION_FRACTION, ge=0.0, lt=1.0)
    sigma: Optional[float] = Field(None, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _odd(self):
        if self.d0 % 2 == 0:
            raise ValueError(f"d0 must be odd, got {self.d0}")
        return self


class TrainRunConfig(_Strict):
    data: Path
    out: Path
    regime: Literal["sr", "mc-pretrain", "joint"] = "sr"
    kind: Literal["SF", "early", "slow", "slow-shared"] = "early"
    layers: int = Field(5, ge=1)
    schedule: Optional[list[int]] = None
    base_features: int = Field(24, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    beta: Optional[float] = Field(None, ge=0.0)
    lam: Optional[float] = Field(None, ge=0.0)
    epochs: int = Field(10, ge=0)
    seed: int = 0
    checkpoint_every: int = Field(1, ge=0)
    batch_start: int = Field(1, ge=1)
    batch_every: int = Field(10, ge=1)
    batch_cap: int = Field(128, ge=1)
    grad_clip: Optional[float] = Field(None, gt=0.0)
    sr_checkpoint: Optional[Path] = None
    mc_checkpoint: Optional[Path] = None
    resume: Optional[Path] = None


class SuperResolveConfig(_Strict):
    checkpoint: Path
    input: Path
    output: Path
    mc_checkpoint: Optional[Path] = None
    no_mc: bool = False
    flow_dir: Optional[Path] = None
    streaming: bool = False
    bits: Literal[8, 16] = 8


class EvaluateConfig(_Strict):
    reference: Path
    test: Path
    border_crop: int = Field(8, ge=0)
    skip_frames: int = Field(0, ge=0)
    peak: float = Field(1.0, gt=0.0)
    out: Optional[Path] = None
    profile_row: Optional[int] = Field(None, ge=0)
    profile_dir: Optional[Path] = None


class CostConfig(_Strict):
    format: Literal["text", "json"] = "text"
    height: int = Field(1080, ge=1)
    width: int = Field(1920, ge=1)
    out: Optional[Path] = None


# ---------------------------------------------------------------------------
# prepare-data

def _sample_arrays(patches: list[Patch], prefix: str) -> dict[str, np.ndarray]:
    if not patches:
        return {f"{prefix}_lr": np.zeros((0,), np.float32), f"{prefix}_hr": np.zeros((0,), np.float32),
                f"{prefix}_meta": np.zeros((0, 4), np.int64)}
    return {
        f"{prefix}_lr": np.stack([p.lr for p in patches]).astype(np.float32),
        f"{prefix}_hr": np.stack([p.hr for p in patches]).astype(np.float32),
        f"{prefix}_meta": np.array([(p.clip, p.t, *p.origin) for p in patches], dtype=np.int64),
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_prepare_data(cfg: PrepareConfig) -> int:
    clips, errors = [], []
    for folder in cfg.clips:
        if not folder.is_dir():
            raise UsageError(f"clip directory {folder} does not exist")
        try:
            clips.append(read_clip(folder))
        except FrameReadError as exc:
            errors.append(f"{folder}: {exc}")
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE

    samples = extract_samples(clips, cfg.d0, cfg.r, cfg.samples_per_clip, cfg.seed, cfg.patch_size,
                              cfg.validation_fraction, cfg.sigma)
    if not samples.train:
        raise UsageError("no training patches: every clip is smaller than one LR patch")
    cfg.out.mkdir(parents=True, exist_ok=True)
    store = cfg.out / STORE
    with open(store, "wb") as fh:
        np.savez(fh, **_sample_arrays(samples.train, "train"), **_sample_arrays(samples.validation, "validation"))
    manifest = {
        "clips": [{"path": str(Path(f).resolve()), "frames": len(c), "height": c.shape[0], "width": c.shape[1]}
                  for f, c in zip(cfg.clips, clips)],
        "d0": cfg.d0, "r": cfg.r, "seed": cfg.seed, "patch_size": cfg.patch_size,
        "samples_per_clip": cfg.samples_per_clip, "validation_fraction": cfg.validation_fraction,
        "sigma": cfg.sigma,
        "blocks": [{k: (list(map(list, v)) if k == "origins" else v) for k, v in rec.items()}
                   for rec in samples.samples],
        "patches": {"train": len(samples.train), "validation": len(samples.validation)},
        "store": STORE,
        "store_sha256": _sha256(store),
    }
    text = json.dumps(manifest, sort_keys=True, indent=1)
    (cfg.out / MANIFEST).write_text(text + "\n")
    print(f"{len(samples.samples)} blocks, {len(samples.train)} train / {len(samples.validation)} validation "
          f"patches; manifest sha256 {hashlib.sha256(text.encode()).hexdigest()[:16]}")
    return EXIT_OK


def load_samples(folder: Path) -> tuple[dict, SampleSet]:
    """Read a ``prepare-data`` output directory back into patches."""
    path = folder / MANIFEST
    if not path.exists():
        raise UsageError(f"{folder} has no {MANIFEST}; run prepare-data first")
    manifest = json.loads(path.read_text())
    store = folder / manifest["store"]
    if not store.exists() or _sha256(store) != manifest["store_sha256"]:
        raise UsageError(f"{store} is missing or does not match the manifest checksum")
    out = SampleSet(samples=manifest["blocks"], d0=manifest["d0"], r=manifest["r"], seed=manifest["seed"],
                    patch_size=manifest["patch_size"])
    with np.load(store) as z:
        for split in ("train", "validation"):
            lr, hr, meta = z[f"{split}_lr"], z[f"{split}_hr"], z[f"{split}_meta"]
            getattr(out, split).extend(
                Patch(lr=lr[i], hr=hr[i], clip=int(m[0]), t=int(m[1]), origin=(int(m[2]), int(m[3])))
                for i, m in enumerate(meta))
    return manifest, out


# ---------------------------------------------------------------------------
# train

def _load_net(path: Path, which: str):
    if not path.exists():
        raise UsageError(f"checkpoint {path} does not exist")
    net = getattr(load_checkpoint(path), which)
    if net is None:
        raise UsageError(f"{path} holds no {'SR' if which == 'sr' else 'motion-compensation'} network")
    return net


def cmd_train(cfg: TrainRunConfig) -> int:
    manifest, samples = load_samples(cfg.data)
    cfg.out.mkdir(parents=True, exist_ok=True)
    log_path = cfg.out / "run.jsonl"

    if cfg.resume is not None:
        if not cfg.resume.exists():
            raise UsageError(f"resume checkpoint {cfg.resume} does not exist")
        try:
            trainer = Trainer.resume(cfg.resume, samples.train, samples.validation, log_path=log_path,
                                     checkpoint_dir=cfg.out)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        tc = TrainConfig(regime=cfg.regime, lr=cfg.lr, beta=cfg.beta, lam=cfg.lam, epochs=cfg.epochs, seed=cfg.seed,
                         checkpoint_every=cfg.checkpoint_every, batch_start=cfg.batch_start,
                         batch_every=cfg.batch_every, batch_cap=cfg.batch_cap, grad_clip=cfg.grad_clip)
        sr_net = mc_net = None
        if cfg.regime == "joint" and (cfg.sr_checkpoint is None or cfg.mc_checkpoint is None):
            raise UsageError("regime 'joint' needs both --sr-checkpoint and --mc-checkpoint (pretrained networks)")
        if cfg.regime in ("sr", "joint"):
            if cfg.sr_checkpoint is not None:
                sr_net = _load_net(cfg.sr_checkpoint, "sr")
            else:
                try:
                    spec = build_network(cfg.kind, cfg.layers, manifest["d0"], manifest["r"], cfg.schedule,
                                         base=cfg.base_features)
                except ValueError as exc:
                    raise UsageError(f"architecture: {exc}") from exc
                sr_net = SRNetwork(spec, seed=cfg.seed)
            if sr_net.spec.d0 != manifest["d0"] or sr_net.spec.r != manifest["r"]:
                raise UsageError(f"network expects D0={sr_net.spec.d0}, r={sr_net.spec.r}; "
                                 f"data has D0={manifest['d0']}, r={manifest['r']}")
        if cfg.regime in ("mc-pretrain", "joint"):
            mc_net = _load_net(cfg.mc_checkpoint, "mc") if cfg.mc_checkpoint else MCNetwork(seed=cfg.seed)
            if manifest["d0"] != 3:
                raise UsageError(f"regime {cfg.regime!r} needs D0 = 3 data, got D0 = {manifest['d0']}")
            if manifest["patch_size"] % 4:
                raise UsageError(f"motion compensation needs LR patches divisible by 4, "
                                 f"got {manifest['patch_size']}; rerun prepare-data with e.g. --patch-size 32")
        try:
            trainer = Trainer(tc, samples.train, samples.validation, sr_net=sr_net, mc_net=mc_net,
                              log_path=log_path, checkpoint_dir=cfg.out)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if log_path.exists():
            log_path.unlink()

    trainer.run()
    trainer.save(cfg.out / "last.ckpt")
    best = trainer.save_best(cfg.out / "best.ckpt")
    last = trainer.history[-1] if trainer.history else {}
    print(f"trained {trainer.epoch} epochs ({trainer.config.regime}); "
          f"final train loss {last.get('train_total', float('nan')):.6g}; best checkpoint {best}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# super-resolve

def super_resolve_clip(net: SRNetwork, frames: list[np.ndarray], mc_net: MCNetwork | None = None,
                       streaming: bool = False) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """One SR frame per input frame; edge blocks replicate the first/last frame.

    Returns the SR frames and, when compensating, per-frame pixel flows
    ``(2, 2, h, w)`` for the previous and next neighbour.
    """
    d0 = net.spec.d0
    radius = (d0 - 1) // 2
    if mc_net is not None and d0 != 3:
        raise UsageError(f"motion compensation needs a D0 = 3 network, checkpoint has D0 = {d0}")
    if streaming and mc_net is None:
        outs, _ = stream_super_resolve(net, frames)
        return [np.asarray(o, dtype=np.float64) for o in outs], []
    n = len(frames)
    outs, flows = [], []
    for t in range(n):
        idx = [min(max(t + j, 0), n - 1) for j in range(-radius, radius + 1)]
        block = np.stack([frames[i] for i in idx])[:, None].astype(net.dtype)
        if mc_net is not None:
            comp = compensate_block(mc_net, block)
            block = comp.frames.data[0]
            flows.append(np.stack([flow_to_pixels(f.delta.data)[0] for f in comp.flows]))
        outs.append(forward_sr(net, block).data[0, 0].astype(np.float64))
    return outs, flows


def cmd_super_resolve(cfg: SuperResolveConfig) -> int:
    if not cfg.checkpoint.exists():
        raise UsageError(f"checkpoint {cfg.checkpoint} does not exist")
    ckpt = load_checkpoint(cfg.checkpoint)
    if ckpt.sr is None:
        raise UsageError(f"{cfg.checkpoint} holds no SR network")
    mc_net = None if cfg.no_mc else ckpt.mc
    if cfg.mc_checkpoint is not None and not cfg.no_mc:
        mc_net = _load_net(cfg.mc_checkpoint, "mc")
    clip = read_clip(cfg.input)
    h, w = clip.shape
    if mc_net is not None and (h % 4 or w % 4):
        raise UsageError(f"motion compensation needs frame sizes divisible by 4; {w}x{h} input, "
                         f"crop to {w - w % 4}x{h - h % 4}")
    outs, flows = super_resolve_clip(ckpt.sr, clip.frames, mc_net, cfg.streaming)
    write_clip(cfg.output, outs, bits=cfg.bits)
    if cfg.flow_dir is not None and flows:
        cfg.flow_dir.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(flows):
            write_flow(cfg.flow_dir / f"{t:05d}_prev.tif", f[0])
            write_flow(cfg.flow_dir / f"{t:05d}_next.tif", f[1])
    print(f"{len(outs)} frames x{ckpt.sr.spec.r} -> {cfg.output}"
          + (" (motion-compensated)" if mc_net is not None else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(cfg: EvaluateConfig) -> int:
    for p in (cfg.reference, cfg.test):
        if not p.is_dir():
            raise UsageError(f"clip directory {p} does not exist")
    ref, tst = read_clip(cfg.reference), read_clip(cfg.test)
    if len(ref) != len(tst):
        raise UsageError(f"reference has {len(ref)} frames, test has {len(tst)}")
    if ref.shape != tst.shape:
        raise UsageError(f"reference frames are {ref.shape}, test frames are {tst.shape}")
    try:
        record = metrics.metrics_record(ref, tst, cfg.border_crop, cfg.skip_frames, cfg.peak)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    row = cfg.profile_row if cfg.profile_row is not None else ref.shape[0] // 2
    prof_ref, prof_tst = metrics.temporal_profile(ref, row), metrics.temporal_profile(tst, row)
    record["profile"] = {"row": row, "reference_variation": metrics.temporal_variation(prof_ref),
                         "test_variation": metrics.temporal_variation(prof_tst)}
    if cfg.profile_dir is not None:
        cfg.profile_dir.mkdir(parents=True, exist_ok=True)
        write_frame(cfg.profile_dir / "profile_reference.png", prof_ref)
        write_frame(cfg.profile_dir / "profile_test.png", prof_tst)
    # JSON has no infinity; the sentinel is the string "inf"
    out = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in record.items()}
    text = json.dumps(out, sort_keys=True, indent=1)
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# cost-report

def cmd_cost_report(cfg: CostConfig) -> int:
    hr = (cfg.height, cfg.width)
    text = cost.format_tables(hr) if cfg.format == "text" else json.dumps(cost.tables_dict(hr), indent=1)
    if cfg.out is not None:
        cfg.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {
    "prepare-data": (PrepareConfig, cmd_prepare_data),
    "train": (TrainRunConfig, cmd_train),
    "super-resolve": (SuperResolveConfig, cmd_super_resolve),
    "evaluate": (EvaluateConfig, cmd_evaluate),
    "cost-report": (CostConfig, cmd_cost_report),
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="vidsr", description="Spatio-temporal video super-resolution toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=S, help="JSON file with default values for this command")
        p.add_argument("-v", "--verbose", action="store_true", default=S)

    p = sub.add_parser("prepare-data", help="cut LR/HR training patches from frame directories")
    common(p)
    p.add_argument("clips", nargs="*", type=Path, default=S, help="HR frame directories")
    p.add_argument("--out", type=Path, default=S)
    p.add_argument("--d0", type=int, default=S, help="frames per block (odd)")
    p.add_argument("--r", type=int, default=S, help="upscaling factor")
    p.add_argument("--samples-per-clip", type=int, default=S)
    p.add_argument("--patch-size", type=int, default=S, help="LR patch side")
    p.add_argument("--validation-fraction", type=float, default=S)
    p.add_argument("--sigma", type=float, default=S, help="anti-alias blur sigma (default r/2)")
    p.add_argument("--seed", type=int, default=S)

    p = sub.add_parser("train", help="train an SR network, pretrain motion compensation, or fine-tune jointly")
    common(p)
    p.add_argument("--data", type=Path, default=S, help="prepare-data output directory")
    p.add_argument("--out", type=Path, default=S, help="directory for checkpoints and run.jsonl")
    p.add_argument("--regime", choices=REGIMES, default=S)
    p.add_argument("--kind", choices=KINDS, default=S)
    p.add_argument("--layers", type=int, default=S)
    p.add_argument("--schedule", type=int, nargs="+", default=S, help="temporal kernel depth per layer")
    p.add_argument("--base-features", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--lam", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--checkpoint-every", type=int, default=S, help="epochs between checkpoints (0: off)")
    p.add_argument("--batch-start", type=int, default=S)
    p.add_argument("--batch-every", type=int, default=S)
    p.add_argument("--batch-cap", type=int, default=S)
    p.add_argument("--grad-clip", type=float, default=S)
    p.add_argument("--sr-checkpoint", type=Path, default=S)
    p.add_argument("--mc-checkpoint", type=Path, default=S)
    p.add_argument("--resume", type=Path, default=S, help="continue from a last.ckpt / epoch_*.ckpt file")

    p = sub.add_parser("super-resolve", help="upscale every frame of an LR clip")
    common(p)
    p.add_argument("--checkpoint", type=Path, default=S)
    p.add_argument("--input", type=Path, default=S)
    p.add_argument("--output", type=Path, default=S)
    p.add_argument("--mc-checkpoint", type=Path, default=S)
    p.add_argument("--no-mc", action="store_true", default=S, help="ignore any MC network in the checkpoint")
    p.add_argument("--flow-dir", type=Path, default=S, help="write flow maps as 2-page float TIFFs")
    p.add_argument("--streaming", action="store_true", default=S, help="reuse activations across frames")
    p.add_argument("--bits", type=int, choices=(8, 16), default=S)

    p = sub.add_parser("evaluate", help="PSNR / SSIM of a test clip against a reference")
    common(p)
    p.add_argument("reference", type=Path, nargs="?", default=S)
    p.add_argument("test", type=Path, nargs="?", default=S)
    p.add_argument("--border-crop", type=int, default=S)
    p.add_argument("--skip-frames", type=int, default=S)
    p.add_argument("--peak", type=float, default=S)
    p.add_argument("--out", type=Path, default=S)
    p.add_argument("--profile-row", type=int, default=S)
    p.add_argument("--profile-dir", type=Path, default=S)

    p = sub.add_parser("cost-report", help="operation counts per HR frame")
    common(p)
    p.add_argument("--format", choices=("text", "json"), default=S)
    p.add_argument("--height", type=int, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--out", type=Path, default=S)
    return parser


def parse_config(argv: list[str]) -> tuple[str, BaseModel]:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    model, _ = COMMANDS[command]
    values: dict = {}
    if "config" in args:
        path = args["config"]
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise UsageError(f"{path}: top level must be an object")
        stated = values.pop("command", command)
        if stated != command:
            raise UsageError(f"{path} is a {stated!r} config, not {command!r}")
        values = {k.replace("-", "_"): v for k, v in values.items()}
    if args.get("clips") == []:
        del args["clips"]
    values.update(args)
    return command, model.model_validate(values)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, cfg = parse_config(argv)
    except SystemExit as exc:           # argparse
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    except ValidationError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[command][1](cfg)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FrameReadError, CheckpointError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
