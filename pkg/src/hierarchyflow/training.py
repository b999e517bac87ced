"""Unpaired training: data sampling, Adam with cosine annealing, run artifacts.

Determinism contract: (seed, config, data) fixes every parameter and every
logged loss bit-exactly. Per-iteration randomness is derived from
SeedSequence(seed, iteration), so resuming from a checkpoint at iteration i
replays the exact sample/crop sequence of an uninterrupted run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from . import checkpoint as ckpt
from .errors import ConfigurationError, ContractError, NumericalError
from .perceptual import CachedExtractor, LossConfig, total_loss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and data-pipeline settings."""

    iterations: int = 300_000
    batch_size: int = 1
    lr: float = 1e-5
    style_weight: float = 0.1
    k: float = 0.8
    seed: int = 0
    resize: tuple[int, int] = (256, 512)  # (H, W)
    crop: tuple[int, int] = (256, 256)
    checkpoint_every: int = 10_000
    log_every: int = 1
    sample_every: int = 0  # 0 disables sample translations

    def __post_init__(self):
        positive = {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
        }
        for name, v in positive.items():
            if v <= 0 and not (name == "iterations" and v == 0):
                raise ConfigurationError(f"{name} must be positive, got {v}")
        if self.crop[0] > self.resize[0] or self.crop[1] > self.resize[1]:
            raise ConfigurationError(
                f"crop {self.crop} exceeds resize target {self.resize}"
            )

    @property
    def loss(self) -> LossConfig:
        return LossConfig(style_weight=self.style_weight, k=self.k)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "style_weight": self.style_weight,
            "k": self.k,
            "seed": self.seed,
            "resize": list(self.resize),
            "crop": list(self.crop),
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
            "sample_every": self.sample_every,
        }


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi*t/total)) / 2; decays to exactly 0 at t = total."""
    if not (0 <= t <= total):
        raise ContractError(f"iteration {t} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


class AdamState:
    """First/second moment estimates plus the shared bias-correction step."""

    def __init__(self, params: dict[str, Tensor]):
        self.step = 0
        self.m = {k: torch.zeros_like(v) for k, v in params.items()}
        self.v = {k: torch.zeros_like(v) for k, v in params.items()}

    def names(self):
        return set(self.m)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    if set(params) != state.names() or set(grads) != set(params):
        raise ContractError("parameter/gradient/state name sets disagree")
    for name, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m[name]
            v = state.v[name]
            m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
            v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt() + ADAM_EPS, value=-lr)
    return params, state


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Fresh deterministic generator for one iteration's data randomness."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def sample_pair(source_pool, target_pool, rng: np.random.Generator):
    """Independent uniform draws from the two unpaired pools."""
    if len(source_pool) == 0 or len(target_pool) == 0:
        raise ConfigurationError("image pools must be non-empty")
    i = int(rng.integers(len(source_pool)))
    j = int(rng.integers(len(target_pool)))
    return source_pool[i], target_pool[j]


def augment(image: Tensor, resize: tuple[int, int], crop: tuple[int, int], rng) -> Tensor:
    """Bilinear resize then uniform random crop; [0,1] values are preserved."""
    if crop[0] > resize[0] or crop[1] > resize[1]:
        raise ConfigurationError(f"crop {crop} larger than resize target {resize}")
    if image.ndim != 3:
        raise ContractError(f"augment expects (C,H,W), got {tuple(image.shape)}")
    resized = F.interpolate(
        image.unsqueeze(0), size=resize, mode="bilinear", align_corners=False
    ).squeeze(0)
    dy = int(rng.integers(resize[0] - crop[0] + 1))
    dx = int(rng.integers(resize[1] - crop[1] + 1))
    return resized[:, dy : dy + crop[0], dx : dx + crop[1]]


@dataclass
class StepResult:
    total: float
    content: float
    style: float
    lr: float


def train_step(
    model,
    opt_state: AdamState,
    pair: tuple[Tensor, Tensor],
    cfg: TrainConfig,
    extractor,
    iteration: int,
) -> StepResult:
    """One optimization step on an unpaired (source, target) sample.

    Translates the source with the target's style, evaluates the objective,
    backpropagates through the reversed pass, AdaIN, the forward pass and
    both sub-networks, then applies Adam at the cosine-annealed rate.
    """
    source, target = pair
    model.zero_grad(set_to_none=True)
    x_hat = model.translate(source, target)
    loss, parts = total_loss(x_hat, source, target, cfg.loss, extractor)
    if not math.isfinite(float(loss)):
        raise NumericalError(f"non-finite loss at iteration {iteration}")
    loss.backward()
    params = dict(model.named_parameters())
    grads = {
        name: (p.grad if p.grad is not None else torch.zeros_like(p))
        for name, p in params.items()
    }
    lr = cosine_lr(iteration, cfg.iterations, cfg.lr)
    adam_step(params, grads, opt_state, lr)
    model.zero_grad(set_to_none=True)
    return StepResult(total=float(loss), content=parts["content"], style=parts["style"], lr=lr)


class RunLog:
    """Append-only line-delimited JSON records of per-iteration losses."""

    FIELDS = ("iteration", "lr", "total", "content", "style", "wall")

    def __init__(self, path):
        self.path = Path(path)
        self._last_iteration = -1

    def append(self, iteration: int, lr: float, result: StepResult, wall: float):
        if iteration <= self._last_iteration:
            raise ContractError(
                f"log iterations must increase: {iteration} after {self._last_iteration}"
            )
        for name, v in (("lr", lr), ("total", result.total),
                        ("content", result.content), ("style", result.style)):
            if not math.isfinite(v):
                raise NumericalError(f"non-finite {name} at iteration {iteration}")
        self._last_iteration = iteration
        record = {
            "iteration": iteration,
            "lr": lr,
            "total": result.total,
            "content": result.content,
            "style": result.style,
            "wall": wall,
        }
        with open(self.path, "a") as f:
            f.write(json.dumps(record) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        records = []
        last = -1
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["iteration"] <= last:
                    raise ContractError("run log iterations are not strictly increasing")
                last = rec["iteration"]
                records.append(rec)
        return records


def load_pool(directory) -> list[Path]:
    """Sorted decodable-image paths beneath a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"image pool directory not found: {directory}")
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not paths:
        raise ConfigurationError(f"no images (.png/.jpg) in pool directory: {directory}")
    return paths


def registry_census(model, opt_state: AdamState):
    """Every learnable parameter must be covered by the optimizer state."""
    names = set(dict(model.named_parameters()))
    if names != opt_state.names():
        raise ConfigurationError(
            "optimizer state does not cover the parameter registry: "
            f"missing {sorted(names - opt_state.names())}, "
            f"stale {sorted(opt_state.names() - names)}"
        )


def train_loop(
    model,
    cfg: TrainConfig,
    source_pool,
    target_pool,
    run_dir,
    extractor,
    start_iteration: int = 0,
    opt_state: AdamState | None = None,
    load_image=None,
    on_sample=None,
) -> Path:
    """Iterate train_step with seeded sampling; writes checkpoints and logs.

    ``source_pool``/``target_pool`` hold image paths (decoded via
    ``load_image``) or ready (C,H,W) tensors. Returns the final checkpoint
    path. Resume by passing ``start_iteration`` and the restored
    ``opt_state`` from a training-state checkpoint.
    """
    if len(source_pool) == 0 or len(target_pool) == 0:
        raise ConfigurationError("image pools must be non-empty")
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if cfg.sample_every:
        (run_dir / "samples").mkdir(exist_ok=True)

    snapshot = run_dir / "config.json"
    if not snapshot.exists():
        snapshot.write_text(
            json.dumps(
                {"model": model.config.to_dict(), "train": cfg.to_dict(),
                 "backend": extractor.backend},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )

    params = dict(model.named_parameters())
    if opt_state is None:
        opt_state = AdamState(params)
    registry_census(model, opt_state)

    cached = extractor if isinstance(extractor, CachedExtractor) else CachedExtractor(extractor)
    log = RunLog(run_dir / "runlog.jsonl")
    if start_iteration > 0 and log.path.exists():
        existing = RunLog.read(log.path)
        log._last_iteration = existing[-1]["iteration"] if existing else -1

    def decode(item) -> Tensor:
        if isinstance(item, Tensor):
            return item
        if load_image is None:
            raise ConfigurationError("pools hold paths but no load_image was provided")
        return load_image(item)

    def save(iteration: int) -> Path:
        path = run_dir / "checkpoints" / f"ckpt_{iteration:07d}.hflow"
        ckpt.save_model(
            path,
            model,
            train_state={
                "iteration": iteration,
                "seed": cfg.seed,
                "adam_step": opt_state.step,
                "m": opt_state.m,
                "v": opt_state.v,
            },
        )
        return path

    t_start = time.monotonic()
    final = save(start_iteration) if cfg.iterations == start_iteration else None
    for t in range(start_iteration, cfg.iterations):
        rng = iteration_rng(cfg.seed, t)
        src_item, tgt_item = sample_pair(source_pool, target_pool, rng)
        source = augment(decode(src_item), cfg.resize, cfg.crop, rng)
        target = augment(decode(tgt_item), cfg.resize, cfg.crop, rng)
        result = train_step(model, opt_state, (source, target), cfg, cached, t)
        done = t + 1
        if done % cfg.log_every == 0 or done == cfg.iterations:
            log.append(t, result.lr, result, time.monotonic() - t_start)
        if done % cfg.checkpoint_every == 0 or done == cfg.iterations:
            final = save(done)
        if cfg.sample_every and on_sample and (done % cfg.sample_every == 0):
            on_sample(done, run_dir / "samples")
    if final is None:
        final = save(cfg.iterations)
    return final
