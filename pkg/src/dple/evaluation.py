"""Evaluation protocols: base-to-novel generalization, harmonic mean,
cross-dataset transfer, the ablation grid, and the synthetic feature
datasets that stand in for foundation-model embeddings.

Synthetic data convention: every class name hashes to a low-rank semantic
code (the same code the language branch uses for its class token), and
the visual centroid is that code pushed through a dataset-level random
basis. Base-trained prompt alignment can therefore generalize to novel
classes: their codes live in the span of the base codes.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import encoders, learn
from .encoders import class_latent
from .errors import ConfigError, DataError, DimensionError, UsageError
from .grad import Tape
from .learn import TrainConfig, build_pipeline, class_probabilities
from .pipeline import Pipeline, forward_sample

Array = np.ndarray


@dataclass(frozen=True)
class EmbeddingDataset:
    """Labeled feature records with a base/novel class partition."""

    name: str
    class_names: tuple[str, ...]
    features: Array          # [N, d_domain]
    patch_features: Array    # [N, n_patches, d_domain]
    labels: Array            # [N] int
    base_ids: tuple[int, ...]
    novel_ids: tuple[int, ...]

    def __post_init__(self):
        n = self.features.shape[0]
        if self.patch_features.shape[0] != n or self.labels.shape[0] != n:
            raise DataError("features, patch_features, and labels disagree on N")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise DataError("label outside class id range")
        base, novel = set(self.base_ids), set(self.novel_ids)
        if base & novel:
            raise DataError("base and novel class sets overlap")
        if base | novel != set(range(len(self.class_names))):
            raise DataError("base + novel must cover every class id")

    @property
    def d_domain(self) -> int:
        return self.features.shape[1]

    def records_of(self, class_ids) -> Array:
        wanted = np.isin(self.labels, np.asarray(list(class_ids)))
        return np.nonzero(wanted)[0]


@dataclass
class EvalReport:
    acc_base: float
    acc_novel: float
    hm: float
    per_class: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def harmonic_mean(acc_base: float, acc_novel: float) -> float:
    """2ab/(a+b) on percentages; (0, 0) degenerates to 0 with a warning."""
    if acc_base < 0 or acc_novel < 0:
        raise UsageError("accuracies must be >= 0")
    if acc_base == 0 and acc_novel == 0:
        warnings.warn("harmonic mean of (0, 0) defined as 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return 2.0 * acc_base * acc_novel / (acc_base + acc_novel)


def base_novel_split(class_names) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sort names lexicographically; the first ceil(C/2) are base."""
    names = list(class_names)
    if len(names) < 2:
        raise DataError("need at least 2 classes to split")
    order = sorted(range(len(names)), key=lambda i: names[i])
    n_base = (len(names) + 1) // 2
    return tuple(sorted(order[:n_base])), tuple(sorted(order[n_base:]))


def evaluate_accuracy(pipe: Pipeline, dataset: EmbeddingDataset, class_ids) -> float:
    """Top-1 accuracy restricted to the given class subset; noise disabled."""
    ids = list(class_ids)
    if not ids:
        raise DataError("empty class subset")
    recs = dataset.records_of(ids)
    if recs.size == 0:
        raise DataError("no records for the requested classes")
    text_bank = encoders.text_embedding_bank(
        pipe.lang, [dataset.class_names[c] for c in ids])
    correct = 0
    for i in recs:
        out = forward_sample(Tape(), pipe, dataset.patch_features[i], text_bank,
                             training=False)
        probs = class_probabilities(out.image_embedding.data,
                                    list(out.class_embeddings.data), pipe.tau)
        if ids[int(np.argmax(probs))] == int(dataset.labels[i]):
            correct += 1
    return correct / recs.size


def per_class_accuracy(pipe: Pipeline, dataset: EmbeddingDataset,
                       class_ids) -> dict[str, float]:
    return {dataset.class_names[c]: evaluate_accuracy(pipe, dataset, [c])
            for c in class_ids}


def base_novel_eval(pipe: Pipeline, dataset: EmbeddingDataset,
                    config_echo: dict | None = None) -> EvalReport:
    acc_b = evaluate_accuracy(pipe, dataset, dataset.base_ids)
    acc_n = evaluate_accuracy(pipe, dataset, dataset.novel_ids)
    hm = harmonic_mean(100.0 * acc_b, 100.0 * acc_n) / 100.0
    table = {}
    table.update(per_class_accuracy(pipe, dataset, dataset.base_ids))
    table.update(per_class_accuracy(pipe, dataset, dataset.novel_ids))
    return EvalReport(acc_base=acc_b, acc_novel=acc_n, hm=hm, per_class=table,
                      config=dict(config_echo or {}))


def cross_dataset_eval(pipe: Pipeline, source_name: str,
                       targets) -> list[tuple[str, float]]:
    """Accuracy over all classes of each target, no adaptation."""
    rows = []
    for ds in targets:
        if ds.d_domain != pipe.vis.d_domain:
            raise DataError(
                f"target {ds.name!r} d_domain {ds.d_domain} != model "
                f"{pipe.vis.d_domain}")
        rows.append((ds.name, evaluate_accuracy(pipe, ds, range(len(ds.class_names)))))
    return rows


def make_shifted_copy(dataset: EmbeddingDataset, shift_seed: int, *,
                      suffix: str = "v2") -> EmbeddingDataset:
    """Domain-shifted variant: per-dimension scaling plus feature noise."""
    rng = np.random.Generator(np.random.PCG64(int(shift_seed)))
    scale = rng.uniform(0.8, 1.2, size=dataset.d_domain)
    offset = 0.1 * rng.standard_normal(dataset.d_domain)
    jitter = 0.02 * rng.standard_normal(dataset.features.shape)
    feats = dataset.features * scale + offset + jitter
    patches = dataset.patch_features * scale + offset + jitter[:, None, :]
    return replace(dataset, name=f"{dataset.name}-{suffix}", features=feats,
                   patch_features=patches)


# -- ablation grid -----------------------------------------------------------

def _config_hash(cfg: TrainConfig) -> str:
    from .config import serialize_config
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]


def ablation_cells(base: TrainConfig) -> list[tuple[str, str, TrainConfig]]:
    """The 12-run grid: one axis varied at a time, others at the base value."""
    cells: list[tuple[str, str, TrainConfig]] = []
    for qm in ("hamilton", "off"):
        cells.append(("quaternion", f"qn={qm}", replace(base, quat_mode=qm)))
    for bm in ("PL", "PV", "PL+PV"):
        cells.append(("branches", f"branch={bm}", replace(base, branch_mode=bm)))
    for depth in (3, 6, 9, 12):
        cells.append(("depth", f"k={depth}", replace(base, k=depth)))
    for nm in ("off", "language", "vision"):
        cells.append(("noise", f"noise={nm}", replace(base, noise_mode=nm)))
    return cells


def ablation_suite(base: TrainConfig, dataset: EmbeddingDataset, *,
                   max_steps: int | None = None) -> list[dict]:
    """Train and evaluate every grid cell independently.

    Every cell uses the base config seed so single-axis comparisons (the
    branch cells in particular) see identical data order and noise draws;
    each cell owns fresh generator instances, so cells may run in any
    order or in parallel.
    """
    out = []
    for axis, label, cfg in ablation_cells(base):
        pipe = build_pipeline(cfg)
        report = learn.train(cfg, dataset, pipe, max_steps=max_steps)
        out.append({
            "axis": axis,
            "cell": label,
            "config_hash": _config_hash(cfg),
            "acc_base": report.acc_base,
            "acc_novel": report.acc_novel,
            "hm": report.hm,
            "final_loss": report.losses[-1] if report.losses else float("nan"),
            "losses": report.losses,
            "frozen_unchanged": (report.checksums["frozen_before"]
                                 == report.checksums["frozen_after"]),
        })
    return out


# -- synthetic datasets ------------------------------------------------------

def generate_synthetic_dataset(classes: int, per_class: int, d_domain: int,
                               cluster_spread: float, domain_shift_seed: int,
                               rng: np.random.Generator, *,
                               n_patches: int = 8, patch_jitter: float = 0.03,
                               name: str = "synthetic",
                               class_names=None) -> EmbeddingDataset:
    """Clustered unit-centroid embeddings with per-record patch jitter.

    Centroids are the class-name semantic codes pushed through a random
    dataset basis, then unit-normalized; records add Gaussian spread and
    patches add further jitter. A nonzero domain_shift_seed applies a
    fixed per-dimension scaling and offset to everything (a "shifted
    domain" variant of the same classes).
    """
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if d_domain < 1 or n_patches < 1:
        raise ConfigError("d_domain and n_patches must be >= 1")
    if cluster_spread < 0 or patch_jitter < 0:
        raise ConfigError("spread parameters must be >= 0")
    if class_names is None:
        class_names = tuple(f"class_{i:03d}" for i in range(classes))
    else:
        class_names = tuple(class_names)
        if len(class_names) != classes:
            raise ConfigError("class_names length must equal classes")

    basis = rng.standard_normal((encoders.LATENT_DIM, d_domain))
    feats, patches, labels = [], [], []
    for cid, cname in enumerate(class_names):
        centroid = class_latent(cname) @ basis
        centroid = centroid / np.linalg.norm(centroid)
        for _ in range(per_class):
            f = centroid + cluster_spread * rng.standard_normal(d_domain)
            p = f[None, :] + patch_jitter * rng.standard_normal((n_patches, d_domain))
            feats.append(f)
            patches.append(p)
            labels.append(cid)

    features = np.asarray(feats)
    patch_features = np.asarray(patches)
    if domain_shift_seed:
        srng = np.random.Generator(np.random.PCG64(int(domain_shift_seed)))
        scale = srng.uniform(0.8, 1.2, size=d_domain)
        offset = 0.1 * srng.standard_normal(d_domain)
        features = features * scale + offset
        patch_features = patch_features * scale + offset

    base_ids, novel_ids = base_novel_split(class_names)
    return EmbeddingDataset(name=name, class_names=class_names, features=features,
                            patch_features=patch_features,
                            labels=np.asarray(labels, dtype=np.int64),
                            base_ids=base_ids, novel_ids=novel_ids)


def nearest_centroid_accuracy(dataset: EmbeddingDataset) -> float:
    """Independent oracle: classify records by the nearest class mean."""
    cents = np.stack([dataset.features[dataset.labels == c].mean(axis=0)
                      for c in range(len(dataset.class_names))])
    d2 = ((dataset.features[:, None, :] - cents[None, :, :]) ** 2).sum(axis=-1)
    return float((np.argmin(d2, axis=1) == dataset.labels).mean())
