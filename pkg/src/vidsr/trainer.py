"""Training loops for SR-only, motion-compensation pretraining and joint fine-tuning."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, add, backward, huber_smoothness, mse_loss, mul, no_grad, reshape
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Patch, batch_size
from .motion import HUBER_EPS, MCNetwork, compensate, compensate_block
from .networks import SRNetwork
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

REGIMES = ("sr", "mc-pretrain", "joint")
REGIME_DEFAULTS = {"sr": (0.0, 0.0), "mc-pretrain": (1.0, 0.01), "joint": (0.01, 0.001)}


@dataclass
class TrainConfig:
    regime: str = "sr"
    lr: float = 1e-4
    beta: float | None = None
    lam: float | None = None
    epochs: int = 10
    seed: int = 0
    checkpoint_every: int = 0
    batch_start: int = 1
    batch_every: int = 10
    batch_cap: int = 128
    grad_clip: float | None = None
    huber_eps: float = HUBER_EPS

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        beta, lam = REGIME_DEFAULTS[self.regime]
        self.beta = beta if self.beta is None else float(self.beta)
        self.lam = lam if self.lam is None else float(self.lam)
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be non-negative")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)


def _stack(patches: Sequence[Patch], dtype) -> tuple[Tensor, Tensor]:
    lr = np.stack([p.lr for p in patches]).astype(dtype)
    hr = np.stack([p.hr[0] for p in patches]).astype(dtype)
    return Tensor(lr), Tensor(hr)


def sr_loss(net: SRNetwork, patches: Sequence[Patch]) -> dict[str, Tensor]:
    lr, hr = _stack(patches, net.dtype)
    return {"sr": mse_loss(net(lr), hr)}


def mc_terms(mcnet: MCNetwork, lr: Tensor, eps: float = HUBER_EPS) -> tuple[Tensor, Tensor, Tensor]:
    """Photometric and smoothness terms summed over both outer frames, plus the warped block."""
    comp = compensate_block(mcnet, lr)
    n, _, c, h, w = lr.shape
    centre = reshape(lr[:, 1], (n, c, h, w))
    photo = smooth = None
    for i, flow in zip((0, 2), comp.flows):
        warped = reshape(comp.frames[:, i], (n, c, h, w))
        p = mse_loss(warped, centre)
        s = huber_smoothness(flow.delta, eps)
        photo = p if photo is None else add(photo, p)
        smooth = s if smooth is None else add(smooth, s)
    return photo, smooth, comp.frames


def joint_loss(net: SRNetwork | None, mcnet: MCNetwork, patches: Sequence[Patch], beta: float, lam: float,
               eps: float = HUBER_EPS) -> dict[str, Tensor]:
    dtype = mcnet.dtype
    lr, hr = _stack(patches, dtype)
    if lr.shape[1] != 3:
        raise ValueError(f"motion compensation needs 3-frame blocks, got D0 = {lr.shape[1]}")
    photo, smooth, frames = mc_terms(mcnet, lr, eps)
    terms = {"photometric": mul(photo, beta), "smoothness": mul(smooth, lam)}
    if net is not None:
        terms = {"sr": mse_loss(net(frames), hr), **terms}
    return terms


class Trainer:
    """Resumable optimisation loop.

    Batches are drawn from a per-epoch permutation seeded by ``(seed, epoch)``,
    so the position ``(epoch, step)`` fully determines what comes next.
    """

    def __init__(self, config: TrainConfig, train: Sequence[Patch], validation: Sequence[Patch] = (),
                 sr_net: SRNetwork | None = None, mc_net: MCNetwork | None = None,
                 log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None):
        self.config = config
        self.train = list(train)
        self.validation = list(validation)
        self.sr_net = sr_net
        self.mc_net = mc_net
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self._check()
        self.adam = AdamState.for_params(self.parameters(), lr=config.lr)
        self.epoch = 0
        self.step_in_epoch = 0
        self.acc: dict[str, float] = {}
        self.history: list[dict] = []
        self.best_val = math.inf
        self.best_params: list[np.ndarray] | None = None
        self.on_epoch_end: Callable[[Trainer], None] | None = None

    def _check(self) -> None:
        cfg = self.config
        if not self.train:
            raise ValueError("no training samples")
        d0 = self.train[0].lr.shape[0]
        if cfg.regime == "sr":
            if self.sr_net is None:
                raise ValueError("regime 'sr' needs an SR network")
            if d0 != self.sr_net.spec.d0:
                raise ValueError(f"samples have D0 = {d0}, network expects {self.sr_net.spec.d0}")
            if self.train[0].hr.shape[-1] != self.sr_net.spec.r * self.train[0].lr.shape[-1]:
                raise ValueError("sample scale factor does not match the network")
        elif cfg.regime == "mc-pretrain":
            if self.mc_net is None:
                raise ValueError("regime 'mc-pretrain' needs a motion-compensation network")
            if d0 != 3:
                raise ValueError(f"motion compensation pretraining needs D0 = 3 samples, got {d0}")
        else:
            if self.sr_net is None or self.mc_net is None:
                raise ValueError("regime 'joint' needs both an SR and a motion-compensation network")
            if self.sr_net.spec.d0 != 3 or d0 != 3:
                raise ValueError("joint training compensates 3-frame blocks: network and samples need D0 = 3")

    # parameters ---------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        regime = self.config.regime
        params = []
        if regime in ("sr", "joint"):
            params += self.sr_net.parameters()
        if regime in ("mc-pretrain", "joint"):
            params += self.mc_net.parameters()
        return params

    def loss_terms(self, patches: Sequence[Patch]) -> dict[str, Tensor]:
        cfg = self.config
        if cfg.regime == "sr":
            return sr_loss(self.sr_net, patches)
        net = self.sr_net if cfg.regime == "joint" else None
        return joint_loss(net, self.mc_net, patches, cfg.beta, cfg.lam, cfg.huber_eps)

    # schedule -------------------------------------------------------------
    def batch_size(self, epoch: int | None = None) -> int:
        cfg = self.config
        return batch_size(self.epoch if epoch is None else epoch, cfg.batch_start, cfg.batch_every, cfg.batch_cap)

    def batches(self, epoch: int) -> list[np.ndarray]:
        perm = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.train))
        bs = self.batch_size(epoch)
        return [perm[i:i + bs] for i in range(0, len(perm), bs)]

    @property
    def finished(self) -> bool:
        return self.epoch >= self.config.epochs

    # optimisation -----------------------------------------------------------
    def step(self) -> dict[str, float]:
        """One optimiser step on the next batch; closes the epoch when it runs out."""
        batches = self.batches(self.epoch)
        idx = batches[self.step_in_epoch]
        patches = [self.train[i] for i in idx]
        params = self.parameters()
        for p in params:
            p.zero_grad()
        terms = self.loss_terms(patches)
        loss = None
        for t in terms.values():
            loss = t if loss is None else add(loss, t)
        backward(loss)
        grads = [p.grad for p in params]
        if self.config.grad_clip:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
            if norm > self.config.grad_clip:
                grads = [None if g is None else g * (self.config.grad_clip / norm) for g in grads]
        adam_step(params, grads, self.adam)

        values = {k: float(v.data) for k, v in terms.items()}
        values["total"] = float(loss.data)
        n = len(idx)
        for k, v in values.items():
            self.acc[k] = self.acc.get(k, 0.0) + v * n
        self.acc["count"] = self.acc.get("count", 0.0) + n
        self.step_in_epoch += 1
        if self.step_in_epoch >= len(batches):
            self._end_epoch()
        return values

    def _end_epoch(self) -> None:
        count = self.acc.pop("count")
        record = {"epoch": self.epoch, "batch_size": self.batch_size(),
                  "steps": self.step_in_epoch, "samples": int(count)}
        record.update({f"train_{k}": v / count for k, v in sorted(self.acc.items())})
        if self.validation:
            metrics = self.validate()
            record.update({f"val_{k}": v for k, v in metrics.items()})
            if metrics["mse"] < self.best_val:
                self.best_val = metrics["mse"]
                self.best_params = [p.data.copy() for p in self.parameters()]
        self.history.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info("epoch %d  %s", self.epoch, {k: v for k, v in record.items() if k.startswith(("train_", "val_"))})
        self.epoch += 1
        self.step_in_epoch = 0
        self.acc = {}
        if self.checkpoint_dir is not None:
            improved = self.validation and self.best_val == record.get("val_mse")
            every = self.config.checkpoint_every
            if every and self.epoch % every == 0:
                self.save(self.checkpoint_dir / f"epoch_{self.epoch:04d}.ckpt")
                self.save(self.checkpoint_dir / "last.ckpt")
            if improved or self.finished:
                self.save_best(self.checkpoint_dir / "best.ckpt")
        if self.on_epoch_end is not None:
            self.on_epoch_end(self)

    # persistence ------------------------------------------------------------
    def _networks(self) -> dict:
        regime = self.config.regime
        return {"sr": self.sr_net if regime in ("sr", "joint") else None,
                "mc": self.mc_net if regime in ("mc-pretrain", "joint") else None}

    def checkpoint(self) -> Checkpoint:
        """Everything needed to continue exactly where this trainer stands."""
        extra = {}
        if self.best_params is not None:
            extra = {f"best{i}": a for i, a in enumerate(self.best_params)}
        meta = {
            "kind": "training-state",
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "data_digest": samples_digest(self.train),
            "epoch": self.epoch,
            "step_in_epoch": self.step_in_epoch,
            "acc": self.acc,
            "history": self.history,
            "best_val": self.best_val,
        }
        return Checkpoint(**self._networks(), adam=self.adam, meta=meta, extra=extra)

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.checkpoint())

    def save_best(self, path: str | Path) -> Path:
        """Network weights with the lowest validation MSE (current weights if never validated)."""
        nets = self._networks()
        if self.best_params is not None:
            snapshot = [p.data.copy() for p in self.parameters()]
            self.restore_best()
        try:
            meta = {"kind": "model", "config": self.config.to_dict(), "epoch": self.epoch,
                    "best_val": self.best_val}
            return save_checkpoint(path, Checkpoint(**nets, meta=meta))
        finally:
            if self.best_params is not None:
                for p, a in zip(self.parameters(), snapshot):
                    p.data = a

    @classmethod
    def resume(cls, path: str | Path, train: Sequence[Patch], validation: Sequence[Patch] = (),
               sr_net: SRNetwork | None = None, mc_net: MCNetwork | None = None,
               log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None) -> "Trainer":
        """Rebuild a trainer from :meth:`save` output.

        Networks stored in the file replace the ones passed in; a network the
        regime does not train (the frozen partner) must still be supplied.
        """
        ckpt = load_checkpoint(path)
        meta = ckpt.meta
        if meta.get("kind") != "training-state":
            raise ValueError(f"{path} holds model weights only, not a resumable training state")
        config = TrainConfig(**meta["config"])
        if config.digest() != meta["config_digest"]:
            raise ValueError("config digest mismatch; checkpoint header is inconsistent")
        if samples_digest(train) != meta["data_digest"]:
            raise ValueError("training samples differ from the ones this checkpoint was trained on")
        trainer = cls(config, train, validation, sr_net=ckpt.sr or sr_net, mc_net=ckpt.mc or mc_net,
                      log_path=log_path, checkpoint_dir=checkpoint_dir)
        trainer.adam = ckpt.adam
        trainer.epoch = meta["epoch"]
        trainer.step_in_epoch = meta["step_in_epoch"]
        trainer.acc = dict(meta["acc"])
        trainer.history = list(meta["history"])
        trainer.best_val = float(meta["best_val"])
        if ckpt.extra:
            trainer.best_params = [ckpt.extra[f"best{i}"] for i in range(len(ckpt.extra))]
        return trainer

    def run(self, max_steps: int | None = None) -> list[dict]:
        steps = 0
        while not self.finished and (max_steps is None or steps < max_steps):
            self.step()
            steps += 1
        return self.history

    def validate(self, patches: Sequence[Patch] | None = None) -> dict[str, float]:
        return validate(self.sr_net if self.config.regime != "mc-pretrain" else None, self.mc_net,
                        self.validation if patches is None else patches, self.config)

    def restore_best(self) -> None:
        if self.best_params is not None:
            for p, a in zip(self.parameters(), self.best_params):
                p.data = a.copy()


def validate(sr_net: SRNetwork | None, mc_net: MCNetwork | None, patches: Sequence[Patch],
             config: TrainConfig | None = None, chunk: int = 32) -> dict[str, float]:
    """MSE and PSNR over a validation set.

    With an SR network the metric is on the super-resolved centre frame
    (motion-compensated first when ``mc_net`` is given); with only a
    compensation network it is the photometric error of the warped outer frames.
    """
    if not patches:
        raise ValueError("empty validation set")
    eps = config.huber_eps if config else HUBER_EPS
    sq, count = 0.0, 0
    with no_grad():
        for i in range(0, len(patches), chunk):
            part = patches[i:i + chunk]
            dtype = (sr_net or mc_net).dtype
            lr, hr = _stack(part, dtype)
            if sr_net is not None:
                x = compensate_block(mc_net, lr).frames if mc_net is not None else lr
                out = sr_net(x).data.astype(np.float64)
                diff = out - hr.data
            else:
                _, _, frames = mc_terms(mc_net, lr, eps)
                f = frames.data.astype(np.float64)
                diff = np.concatenate([f[:, 0] - f[:, 1], f[:, 2] - f[:, 1]])
            sq += float((diff * diff).sum())
            count += diff.size
    mse = sq / count
    return {"mse": mse, "psnr": psnr_from_mse(mse)}


def samples_digest(patches: Sequence[Patch]) -> str:
    h = hashlib.sha256()
    for p in patches:
        h.update(np.ascontiguousarray(p.lr, dtype=np.float32).tobytes())
        h.update(np.ascontiguousarray(p.hr, dtype=np.float32).tobytes())
    return h.hexdigest()[:16]


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    trainer: Trainer | None = None


def train_sr(net: SRNetwork, samples, config: TrainConfig, log_path=None, checkpoint_dir=None) -> TrainResult:
    """Fit ``net`` to the samples with the plain reconstruction MSE."""
    if config.regime != "sr":
        raise ValueError("train_sr needs regime 'sr'")
    trainer = Trainer(config, samples.train, samples.validation, sr_net=net, log_path=log_path,
                      checkpoint_dir=checkpoint_dir)
    trainer.run()
    return TrainResult(trainer.history, trainer)


def pretrain_mc(mcnet: MCNetwork, samples, config: TrainConfig, log_path=None, checkpoint_dir=None) -> TrainResult:
    """Fit the compensation network alone: photometric + smoothness terms only."""
    if config.regime != "mc-pretrain":
        raise ValueError("pretrain_mc needs regime 'mc-pretrain'")
    trainer = Trainer(config, samples.train, samples.validation, mc_net=mcnet, log_path=log_path,
                      checkpoint_dir=checkpoint_dir)
    trainer.run()
    return TrainResult(trainer.history, trainer)


def train_joint(net: SRNetwork, mcnet: MCNetwork, samples, config: TrainConfig, log_path=None,
                checkpoint_dir=None) -> TrainResult:
    """Fine-tune SR and compensation networks together on the composite loss."""
    if config.regime != "joint":
        raise ValueError("train_joint needs regime 'joint'")
    if net.spec.d0 != 3:
        raise ValueError(f"joint training needs a D0 = 3 network, got D0 = {net.spec.d0}")
    trainer = Trainer(config, samples.train, samples.validation, sr_net=net, mc_net=mcnet, log_path=log_path,
                      checkpoint_dir=checkpoint_dir)
    trainer.run()
    return TrainResult(trainer.history, trainer)
