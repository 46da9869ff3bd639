"""Mini-batch SGD training with per-domain batch composition, validation-based
early stopping, and the plain empirical-risk baseline (same network, no
domain-classifier or alignment terms)."""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DGTask, fit_normalizer, normalize_values, split_train_val
from .distances import DiscriminatorParams, KernelSpec
from .losses import LossBreakdown, total_loss
from .metrics import weighted_f1_score
from .model import ModelConfig, ModelParams, init_params, predict

DISTANCE_KINDS = ("mmd", "coral", "adversarial")
METHODS = ("fusion", "erm")
MONITORS = ("val_f1", "val_loss")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, step: int | None = None,
                 breakdown: LossBreakdown | None = None):
        super().__init__(message)
        self.step = step
        self.breakdown = breakdown


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0            # weight on the domain-classifier term
    beta: float = 1.0           # weight on the cross-domain alignment term
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128       # total per step, split equally across domains
    max_epochs: int = 500
    patience: int = 30
    distance: str = "mmd"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    method: str = "fusion"      # "erm" trains the same network with lam=beta=0
    monitor: str = "val_f1"
    fusion_teacher: bool = False  # gate with one-hot true-domain weights at train time
    disc_hidden: int = 16

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")
        if self.distance not in DISTANCE_KINDS:
            raise ValueError(f"distance must be one of {DISTANCE_KINDS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.monitor not in MONITORS:
            raise ValueError(f"monitor must be one of {MONITORS}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("bad optimizer setting")

    def effective_lam_beta(self) -> tuple[float, float]:
        return (0.0, 0.0) if self.method == "erm" else (self.lam, self.beta)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_cls: float
    l_dsr: float
    l_dir: float
    total: float
    val_weighted_f1: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")
            fh.write(json.dumps({"best_epoch": self.best_epoch, "stop_reason": self.stop_reason}) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "TrainLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            row = json.loads(line)
            if "epoch" in row:
                log.records.append(EpochRecord(**row))
            else:
                log.best_epoch = row["best_epoch"]
                log.stop_reason = row["stop_reason"]
        return log


def sgd_step(params: ModelParams, grads: ModelParams, velocity: ModelParams,
             lr: float, momentum: float) -> ModelParams:
    """In-place heavy-ball update: v <- momentum * v + g; p <- p - lr * v.
    Momentum 0 is plain SGD. Raises on non-finite gradients."""
    for (name, p), (_, g), (_, v) in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter group {name!r}")
        v *= momentum
        v += g
        p -= lr * v
    return params


def _disc_sgd_step(disc: DiscriminatorParams, grads: DiscriminatorParams,
                   velocity: DiscriminatorParams, lr: float, momentum: float):
    for (name, p), (_, g), (_, v) in zip(disc.arrays(), grads.arrays(), velocity.arrays()):
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in discriminator group {name!r}")
        v *= momentum
        v += g
        p -= lr * v


def validation_scores(params: ModelParams, cfg: ModelConfig, values, labels,
                      num_classes: int):
    """Weighted F1 and mean cross-entropy on a held-out slice."""
    preds, probs, _ = predict(params, cfg, values)
    f1 = weighted_f1_score(labels, preds, num_classes)
    p_true = np.maximum(probs[np.arange(len(labels)), labels], 1e-12)
    return f1, float(-np.log(p_true).mean())


def infer(params: ModelParams, cfg: ModelConfig, windows):
    """Predictions and per-window gate weights for (already normalized)
    windows; ties resolve to the lowest class index."""
    preds, _, weights = predict(params, cfg, windows)
    return preds, weights


def train(task: DGTask, model_cfg: ModelConfig, cfg: TrainConfig,
          step_hook=None):
    """Run the full optimization loop on one task.

    Every epoch draws per-domain shuffles and composes each step's batch from
    equal sub-batches of the K training domains. After each epoch the model
    is scored on the stratified validation split; the parameters of the best
    epoch are returned. Stops early when the monitored score has not improved
    for ``cfg.patience`` epochs. Deterministic given ``cfg.seed``.
    """
    if model_cfg.num_domains != task.num_train_domains:
        raise ValueError(
            f"model built for {model_cfg.num_domains} domains, task has {task.num_train_domains}"
        )
    k = task.num_train_domains
    sub = cfg.batch_size // k
    if sub < 1:
        raise ValueError(f"batch size {cfg.batch_size} cannot cover {k} domains")
    lam, beta = cfg.effective_lam_beta()
    if beta > 0 and cfg.distance == "coral" and sub < 2:
        raise ValueError("coral alignment needs at least 2 samples per domain sub-batch")

    stats = task.normalization_stats or fit_normalizer(task.train_domains)
    train_doms, val_doms = split_train_val(task.train_domains, task.val_fraction, cfg.seed)
    xs = [normalize_values(d.values, stats) for d in train_doms]
    ys = [d.activities for d in train_doms]
    val_x = np.concatenate([normalize_values(d.values, stats) for d in val_doms])
    val_y = np.concatenate([d.activities for d in val_doms])

    steps = min(len(x) for x in xs) // sub
    if steps < 1:
        smallest = min(range(k), key=lambda i: len(xs[i]))
        raise ValueError(
            f"domain {train_doms[smallest].name!r} has too few training windows "
            f"({len(xs[smallest])}) for sub-batches of {sub}"
        )

    seedseq = np.random.SeedSequence([cfg.seed, 0x7472])
    rng = np.random.default_rng(seedseq)
    params = init_params(model_cfg, seed=cfg.seed)
    velocity = params.zeros_like()
    domain_labels = np.repeat(np.arange(k), sub)

    discs = disc_vel = None
    if beta > 0 and cfg.distance == "adversarial":
        disc_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x646973]))
        discs = {
            (i, j): DiscriminatorParams.init(model_cfg.branch_dim, cfg.disc_hidden, disc_rng)
            for i, j in itertools.combinations(range(k), 2)
        }
        disc_vel = {key: d.zeros_like() for key, d in discs.items()}

    log = TrainLog()
    best_score = -np.inf
    best_params = params.copy()
    best_epoch = 0
    since_best = 0
    global_step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.monotonic()
        perms = [rng.permutation(len(x)) for x in xs]
        sums = np.zeros(4)
        for s in range(steps):
            take = [perms[i][s * sub:(s + 1) * sub] for i in range(k)]
            bx = np.concatenate([xs[i][take[i]] for i in range(k)])
            by = np.concatenate([ys[i][take[i]] for i in range(k)])
            breakdown, grads, disc_grads = total_loss(
                bx, by, domain_labels, params, model_cfg,
                lam=lam, beta=beta, kind=cfg.distance, kernel=cfg.kernel,
                discriminators=discs, fusion_teacher=cfg.fusion_teacher,
            )
            if not breakdown.finite:
                raise TrainingDiverged(
                    f"loss diverged at step {global_step}: {breakdown}",
                    step=global_step, breakdown=breakdown,
                )
            sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum)
            if disc_grads:
                for key, g in disc_grads.items():
                    _disc_sgd_step(discs[key], g, disc_vel[key], cfg.learning_rate, cfg.momentum)
            if step_hook is not None:
                step_hook(breakdown)
            sums += (breakdown.l_cls, breakdown.l_dsr, breakdown.l_dir, breakdown.total)
            global_step += 1

        val_f1, val_ce = validation_scores(params, model_cfg, val_x, val_y, model_cfg.num_classes)
        log.records.append(EpochRecord(
            epoch=epoch,
            l_cls=sums[0] / steps, l_dsr=sums[1] / steps,
            l_dir=sums[2] / steps, total=sums[3] / steps,
            val_weighted_f1=val_f1,
            seconds=time.monotonic() - started,
        ))
        score = val_f1 if cfg.monitor == "val_f1" else -val_ce
        if score > best_score:
            best_score = score
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.stop_reason = "early_stop"
                break
    else:
        log.stop_reason = "max_epochs"
    log.best_epoch = best_epoch
    return best_params, log
