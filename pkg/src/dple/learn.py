"""Contrastive scoring, few-shot sampling, and the SGD training loop.

Training is single-threaded and fully deterministic given the config
seed: data order, parameter init, and noise draws all come from seeded
generators, and a fresh tape is built per step.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import adapter, encoders
from .encoders import frozen_checksum
from .errors import ConfigError, DataError, DimensionError, NumericError, UsageError
from .grad import Tape, Tensor
from .pipeline import Pipeline, forward_sample

Array = np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe plus model dimensions; defaults follow the recipe
    of a 16-shot prompt-tuning run (SGD, batch 4, lr 0.0035, depth 9)."""

    lr: float = 0.0035
    batch: int = 4
    shots: int = 16
    epochs: int = 10
    k: int = 9
    tau: float = 0.01
    seed: int = 7
    noise_mode: str = "language"
    quat_mode: str = "hamilton"
    branch_mode: str = "PL+PV"
    eq9_literal: bool = False
    noise_scale: str = "scalar"
    momentum: float = 0.0
    weight_decay: float = 0.0
    lr_decay: float = 1.0
    m: int = 12
    d_model: int = 64
    d_joint: int = 32
    n_ctx: int = 4
    n_p: int = 2
    d_domain: int = 48

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if not (1 <= self.k <= self.m):
            raise ConfigError(f"prompt depth k={self.k} outside 1..m={self.m}")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.noise_mode not in adapter.NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {adapter.NOISE_MODES}")
        if self.quat_mode not in adapter.QUAT_MODES:
            raise ConfigError(f"quat_mode must be one of {adapter.QUAT_MODES}")
        if self.branch_mode not in ("PL", "PV", "PL+PV"):
            raise ConfigError("branch_mode must be PL, PV, or PL+PV")
        if self.noise_scale not in ("scalar", "per_dim"):
            raise ConfigError("noise_scale must be 'scalar' or 'per_dim'")
        if self.d_model % 4 != 0:
            raise ConfigError("d_model must be a multiple of 4")
        for name in ("m", "d_model", "d_joint", "n_ctx", "n_p", "d_domain"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class TrainReport:
    losses: list[float]
    acc_base: float
    acc_novel: float
    hm: float
    wall_time_s: float
    checksums: dict[str, str] = field(default_factory=dict)
    steps: int = 0


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|); zero-norm inputs are a numeric error."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise DimensionError(f"cosine: {av.shape} vs {bv.shape}")
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return float(av @ bv / (na * nb))


def class_probabilities(e_m, class_embeddings, tau: float) -> Array:
    """Softmax over cosine similarities / tau; sums to 1."""
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    if len(class_embeddings) < 1:
        raise UsageError("need at least one class embedding")
    sims = np.array([cosine_similarity(e_m, w) for w in class_embeddings])
    z = sims / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def few_shot_sample(dataset, shots: int, rng: np.random.Generator) -> Array:
    """Indices of exactly `shots` records per base class, without replacement."""
    picks = []
    for cid in dataset.base_ids:
        pool = np.nonzero(dataset.labels == cid)[0]
        if pool.size < shots:
            raise DataError(
                f"class {dataset.class_names[cid]!r} has {pool.size} records, "
                f"needs {shots}")
        picks.append(rng.choice(pool, size=shots, replace=False))
    return np.concatenate(picks)


def sgd_step(params, lr: float, *, momentum: float = 0.0, weight_decay: float = 0.0,
             velocity: dict | None = None) -> None:
    """theta <- theta - lr * grad on every tensor that received a gradient."""
    for p in params:
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient (shape {p.shape})")
        if weight_decay:
            g = g + weight_decay * p.data
        if momentum and velocity is not None:
            v = velocity.get(id(p))
            v = g if v is None else momentum * v + g
            velocity[id(p)] = v
            g = v
        p.data -= lr * g
        p.grad = None


def trainable_checksum(prompt_state: adapter.PromptState) -> str:
    h = hashlib.sha256()
    for name, t in prompt_state.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def build_pipeline(cfg: TrainConfig) -> Pipeline:
    """Encoders and prompt state from the config seed (branch seeds derived)."""
    cfg.validate()
    lang = encoders.init_frozen_encoder("language", cfg.m, cfg.d_model,
                                        cfg.seed + 1, d_joint=cfg.d_joint)
    vis = encoders.init_frozen_encoder("vision", cfg.m, cfg.d_model, cfg.seed + 2,
                                       d_joint=cfg.d_joint, d_domain=cfg.d_domain)
    prompts = adapter.init_prompt_state(
        n_ctx=cfg.n_ctx, n_p=cfg.n_p, d_model=cfg.d_model, d_domain=cfg.d_domain,
        k=cfg.k, quat_mode=cfg.quat_mode, noise_mode=cfg.noise_mode,
        seed=cfg.seed + 3)
    return Pipeline(lang=lang, vis=vis, prompts=prompts, tau=cfg.tau,
                    branch_mode=cfg.branch_mode, eq9_literal=cfg.eq9_literal,
                    noise_scale=cfg.noise_scale)


def train(cfg: TrainConfig, dataset, pipe: Pipeline, *,
          max_steps: int | None = None) -> TrainReport:
    """Run the few-shot training loop and report losses and accuracies.

    Per step: sample batch -> adapter forward (fresh noise in language
    mode) -> both branch forwards per branch_mode -> softmax over cosine
    similarities -> cross-entropy -> backward -> SGD.
    """
    from . import evaluation  # local import; evaluation builds on this module

    cfg.validate()
    if dataset.features.shape[1] != cfg.d_domain:
        raise DimensionError(
            f"dataset d_domain {dataset.features.shape[1]} != config {cfg.d_domain}")

    t0 = time.monotonic()
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    data_rng = np.random.Generator(np.random.PCG64(seeds[0]))
    noise_rng = np.random.Generator(np.random.PCG64(seeds[1]))

    base_ids = list(dataset.base_ids)
    label_pos = {cid: i for i, cid in enumerate(base_ids)}
    text_bank = encoders.text_embedding_bank(
        pipe.lang, [dataset.class_names[c] for c in base_ids])
    subset = few_shot_sample(dataset, cfg.shots, data_rng)

    checks = {
        "frozen_before": frozen_checksum(pipe.lang, pipe.vis),
        "trainable_before": trainable_checksum(pipe.prompts),
    }

    params = pipe.prompts.parameters()
    velocity: dict = {}
    losses: list[float] = []
    lr = cfg.lr
    steps = 0
    done = False
    for _ in range(cfg.epochs):
        order = data_rng.permutation(subset)
        for lo in range(0, order.size, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            tape = Tape()
            rows = [forward_sample(tape, pipe, dataset.patch_features[i], text_bank,
                                   training=True, noise_rng=noise_rng).logits
                    for i in idx]
            logits = rows[0] if len(rows) == 1 else tape.concat(rows, axis=0)
            labels = np.array([label_pos[int(dataset.labels[i])] for i in idx])
            loss = tape.softmax_ce(logits, labels)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericError(f"training diverged at step {steps}: loss={val}")
            losses.append(val)
            tape.backward(loss)
            sgd_step(params, lr, momentum=cfg.momentum,
                     weight_decay=cfg.weight_decay, velocity=velocity)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                done = True
                break
        lr *= cfg.lr_decay
        if done:
            break

    acc_base = evaluation.evaluate_accuracy(pipe, dataset, dataset.base_ids)
    acc_novel = evaluation.evaluate_accuracy(pipe, dataset, dataset.novel_ids)
    hm = evaluation.harmonic_mean(100.0 * acc_base, 100.0 * acc_novel) / 100.0

    checks["frozen_after"] = frozen_checksum(pipe.lang, pipe.vis)
    checks["trainable_after"] = trainable_checksum(pipe.prompts)
    return TrainReport(losses=losses, acc_base=acc_base, acc_novel=acc_novel,
                       hm=hm, wall_time_s=time.monotonic() - t0,
                       checksums=checks, steps=steps)


GRADCHECK_TOLERANCE = 1e-4


def gradcheck_problem(seed: int = 0):
    """Small full-pipeline loss for finite-difference gradient checking.

    Three encoder layers, d_model 16, four classes, noise off. Returns
    (fn, named_params): fn rebuilds the batch loss on a fresh tape from
    the current parameter values.
    """
    cfg = TrainConfig(m=3, d_model=16, d_joint=8, n_ctx=2, n_p=1, k=2,
                      d_domain=8, tau=0.25, noise_mode="off", seed=int(seed))
    pipe = build_pipeline(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 17))
    names = [f"class_{i}" for i in range(4)]
    bank = encoders.text_embedding_bank(pipe.lang, names)
    patches = [rng.standard_normal((3, cfg.d_domain)) for _ in range(2)]
    labels = np.array([0, 2])

    def fn(tape: Tape) -> Tensor:
        rows = [forward_sample(tape, pipe, p, bank, training=False).logits
                for p in patches]
        return tape.softmax_ce(tape.concat(rows, axis=0), labels)

    return fn, pipe.prompts.named_parameters()
