"""
A manifest lists the bags of a task: one feature file, label and split per
bag, plus the number of classes and the feature dimension. It's stored as
JSON next to the feature files, with paths relative to the manifest.

    {
      "num_classes": 2,
      "d": 64,
      "entries": [{"id": "train_0000", "path": "train_0000.rmil", "label": 0, "split": "train"}, ...],
      "meta": {...}
    }
"""

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import List

from .errors import ConfigError, InputError
from .features import read_features, read_header
from .sequencer import FeatureSequence
from .util import atomic_write


logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: int
    split: str


@dataclass
class BagRecord:

    features: FeatureSequence
    label: int
    id: str

    @property
    def n_tokens(self):
        return self.features.n_tokens


@dataclass
class Manifest:

    num_classes: int
    d: int
    entries: List[ManifestEntry]
    root: Path = Path(".")
    meta: dict = field(default_factory=dict)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry):
        return self.root / entry.path

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "d": self.d,
            "entries": [{"id": e.id, "path": e.path, "label": e.label, "split": e.split}
                        for e in self.entries],
            "meta": self.meta,
        }

    def validate(self, require_splits=()):
        "Check labels, splits and that all files exist and share the feature dimension."
        if self.num_classes < 2:
            raise ConfigError(f"Manifest needs at least 2 classes, got {self.num_classes}")
        for entry in self.entries:
            if entry.split not in SPLITS:
                raise ConfigError(f"Bag {entry.id}: unknown split {entry.split!r}")
            if not 0 <= entry.label < self.num_classes:
                raise ConfigError(f"Bag {entry.id}: label {entry.label} out of range")
            path = self.resolve(entry)
            if not path.exists():
                raise ConfigError(f"Bag {entry.id}: missing feature file {path}")
            _, d = read_header(path)
            if d != self.d:
                raise ConfigError(f"Bag {entry.id}: feature dimension {d}, manifest says {self.d}")
        for name in require_splits:
            if not self.split(name):
                raise InputError(f"Split {name!r} is empty")
        return self


def save_manifest(manifest, path):
    path = Path(path)
    with atomic_write(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path):
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Manifest {path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Manifest {path} is not valid JSON: {e}")
    unknown = set(data) - {"num_classes", "d", "entries", "meta"}
    if unknown:
        raise ConfigError(f"Unknown manifest key(s): {', '.join(sorted(unknown))}")
    try:
        entries = [ManifestEntry(id=str(e["id"]), path=str(e["path"]),
                                 label=int(e["label"]), split=str(e["split"]))
                   for e in data["entries"]]
        return Manifest(num_classes=int(data["num_classes"]), d=int(data["d"]),
                        entries=entries, root=path.parent, meta=data.get("meta", {}))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"Malformed manifest {path}: {e}")


def load_bags(manifest, split):
    "Read all bags of one split, in manifest order."
    bags = []
    for entry in manifest.split(split):
        features = read_features(manifest.resolve(entry))
        if features.dim != manifest.d:
            raise ConfigError(f"Bag {entry.id}: feature dimension {features.dim}, manifest says {manifest.d}")
        bags.append(BagRecord(features=features, label=entry.label, id=entry.id))
    logger.debug("Loaded %d %s bags", len(bags), split)
    return bags
