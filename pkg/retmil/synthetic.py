"""
Synthetic multiple instance tasks.

Every instance of a negative bag is drawn from Normal(0, sigma^2 I). A bag of
class c > 0 looks the same except that k of its instances (the witnesses)
are shifted by delta * u_c, where u_c is a fixed random unit direction per
class. With two classes this is the usual positive/negative setup. Labels
are balanced within every split, and everything is determined by the seed.
"""

from dataclasses import dataclass, asdict
import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import ConfigError
from .features import write_features
from .manifest import SPLITS, BagRecord, Manifest, ManifestEntry, save_manifest
from .sequencer import FeatureSequence


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SyntheticTaskConfig:

    d: int = 64
    n_tokens: Tuple[int, int] = (64, 256)
    witnesses: Tuple[int, int] = (5, 10)
    separation: float = 6.0
    noise: float = 1.0
    bags: Tuple[int, int, int] = (200, 50, 100)  # train, val, test
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_tokens", "witnesses", "bags"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        lo, hi = self.n_tokens
        if not 1 <= lo <= hi:
            raise ConfigError(f"Bad token count range {self.n_tokens}")
        lo, hi = self.witnesses
        if not 1 <= lo <= hi:
            raise ConfigError(f"Bad witness count range {self.witnesses}")
        if len(self.bags) != len(SPLITS) or min(self.bags) < 0:
            raise ConfigError(f"Need a non-negative bag count for each of {SPLITS}")
        # A zero separation is allowed; it makes the classes indistinguishable.
        if self.separation < 0:
            raise ConfigError(f"Class separation must be non-negative, got {self.separation}")
        if not self.noise > 0:
            raise ConfigError(f"Noise scale must be positive, got {self.noise}")
        if self.d < 1 or self.num_classes < 2:
            raise ConfigError("Need d >= 1 and at least 2 classes")


def unit_directions(rng, count, d):
    directions = rng.normal(size=(count, d))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def synthetic_bags(cfg):
    "{split: [BagRecord]} and the witness directions (one row per class > 0)."
    rng = np.random.default_rng(cfg.seed)
    directions = unit_directions(rng, cfg.num_classes - 1, cfg.d)
    bags = {}
    for split, count in zip(SPLITS, cfg.bags):
        records = []
        for i in range(count):
            label = i % cfg.num_classes
            n = int(rng.integers(cfg.n_tokens[0], cfg.n_tokens[1] + 1))
            features = rng.normal(0.0, cfg.noise, size=(n, cfg.d))
            if label > 0:
                k = min(int(rng.integers(cfg.witnesses[0], cfg.witnesses[1] + 1)), n)
                witnesses = rng.choice(n, size=k, replace=False)
                features[witnesses] += cfg.separation * directions[label - 1]
            records.append(BagRecord(features=FeatureSequence(features.astype(np.float32)),
                                     label=label, id=f"{split}_{i:04d}"))
        bags[split] = records
    return bags, directions


def generate_synthetic(cfg, out_dir):
    "Write feature files and a manifest for the task into out_dir."
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bags, directions = synthetic_bags(cfg)
    entries = []
    for split in SPLITS:
        for bag in bags[split]:
            filename = f"{bag.id}.rmil"
            write_features(out_dir / filename, bag.features)
            entries.append(ManifestEntry(id=bag.id, path=filename, label=bag.label, split=split))
    meta = {
        "generator": "synthetic",
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "directions": directions.tolist(),
    }
    manifest = Manifest(num_classes=cfg.num_classes, d=cfg.d, entries=entries,
                        root=out_dir, meta=meta)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info("Wrote %d synthetic bags to %s", len(entries), out_dir)
    return manifest


def witness_score(features, direction, k=5):
    "Mean of the k largest projections onto the witness direction."
    features = features.features if isinstance(features, FeatureSequence) else np.asarray(features)
    projections = features @ np.asarray(direction)
    k = min(k, len(projections))
    return float(np.sort(projections)[-k:].mean())


def oracle_predictions(bags, direction, threshold, k=5):
    "Binary labels from thresholding the top-k projection score."
    return np.array([int(witness_score(bag.features, direction, k) > threshold) for bag in bags])
