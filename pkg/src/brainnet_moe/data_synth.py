"""Synthetic structural-connectivity cohorts with planted class signatures.

Each subject gets a symmetric lognormal fiber-count matrix. For a subject of
class ``c`` the rows and columns of ``planted_regions[c]`` are scaled by
``effect_size``, so the class signal lives in whole sub-networks.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .connectome import ConnectivityMatrix, default_labels, load_matrix, log_normalize, save_matrix
from .errors import SpecError
from .seeding import substream


@dataclass
class SynthSpec:
    n_regions: int = 32
    n_classes: int = 3
    subjects_per_class: int | list = 50
    planted_regions: list | None = None
    effect_size: float = 1.6
    base_scale: float = 50.0
    dispersion: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_regions < 2 or self.n_classes < 2:
            raise SpecError("need at least 2 regions and 2 classes")
        if isinstance(self.subjects_per_class, int):
            counts = [self.subjects_per_class] * self.n_classes
        else:
            counts = list(self.subjects_per_class)
        if len(counts) != self.n_classes or any(c < 1 for c in counts):
            raise SpecError(f"subjects_per_class must give a positive count for each of {self.n_classes} classes")
        if self.planted_regions is None:
            if 2 * self.n_classes > self.n_regions:
                raise SpecError("too few regions for two planted regions per class")
            self.planted_regions = default_planted(self.n_regions, self.n_classes)
        self.planted_regions = [list(map(int, r)) for r in self.planted_regions]
        if len(self.planted_regions) != self.n_classes:
            raise SpecError("planted_regions needs one list per class")
        flat = [r for regs in self.planted_regions for r in regs]
        if any(r < 0 or r >= self.n_regions for r in flat):
            raise SpecError(f"planted region out of range 0..{self.n_regions - 1}")
        if len(set(flat)) != len(flat):
            raise SpecError("planted regions overlap across classes")
        if not (self.effect_size > 0 and math.isfinite(self.effect_size)) or self.effect_size == 1:
            raise SpecError(f"effect_size must be positive and differ from 1, got {self.effect_size}")
        if not self.base_scale > 0 or not self.dispersion > 0:
            raise SpecError("base_scale and dispersion must be positive")

    @property
    def class_counts(self) -> list[int]:
        if isinstance(self.subjects_per_class, int):
            return [self.subjects_per_class] * self.n_classes
        return list(self.subjects_per_class)


def default_planted(n_regions: int, n_classes: int, per_class: int = 2) -> list[list[int]]:
    """Disjoint planted regions spread across the index range."""
    stride = n_regions // (n_classes * per_class)
    return [[(c * per_class + j) * stride + stride // 2 for j in range(per_class)] for c in range(n_classes)]


@dataclass
class Subject:
    matrix: ConnectivityMatrix
    label: int
    subject_id: str


@dataclass
class Cohort:
    subjects: list
    split: dict = field(default_factory=lambda: {"train": [], "test": []})
    class_names: list | None = None
    test_fraction: float | None = None

    def __post_init__(self):
        if self.class_names is None:
            k = max((s.label for s in self.subjects), default=-1) + 1
            self.class_names = [f"C{c}" for c in range(k)]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    @property
    def region_labels(self) -> list:
        return self.subjects[0].matrix.region_labels

    @property
    def n_regions(self) -> int:
        return self.subjects[0].matrix.n_regions

    def indices(self, split: str) -> list[int]:
        if split == "all":
            return list(range(len(self.subjects)))
        return list(self.split[split])

    def normalized(self, split: str = "all") -> tuple[np.ndarray, np.ndarray]:
        """``([S, N, N] log-normalized matrices, [S] labels)`` for a split."""
        idx = self.indices(split)
        n = self.n_regions
        x = np.empty((len(idx), n, n))
        for r, i in enumerate(idx):
            x[r] = log_normalize(self.subjects[i].matrix).values
        return x, self.labels[idx]


def _subject_matrix(spec: SynthSpec, label: int, index: int) -> np.ndarray:
    rng = substream(spec.seed, "data", index)
    n = spec.n_regions
    mu = math.log(spec.base_scale) - 0.5 * spec.dispersion ** 2
    upper = np.rint(rng.lognormal(mu, spec.dispersion, size=n * (n - 1) // 2))
    m = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    m[iu] = upper
    m = m + m.T
    scale = np.ones(n)
    scale[spec.planted_regions[label]] = spec.effect_size
    return np.rint(m * np.outer(scale, scale))


def generate(spec: SynthSpec) -> Cohort:
    """Deterministic cohort for ``spec``; subject ``j`` draws from stream ``(seed, "data", j)``."""
    labels = default_labels(spec.n_regions)
    subjects = []
    index = 0
    for c, count in enumerate(spec.class_counts):
        for _ in range(count):
            m = _subject_matrix(spec, c, index)
            subjects.append(Subject(ConnectivityMatrix(m, labels), c, f"sub-{index:04d}"))
            index += 1
    return Cohort(subjects, class_names=[f"C{c}" for c in range(spec.n_classes)])


def split_stratified(cohort: Cohort, test_fraction: float = 0.2, seed: int = 0) -> Cohort:
    """Per-class shuffled split; each class keeps at least one test and one train subject."""
    if not 0.0 < test_fraction < 1.0:
        raise SpecError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = cohort.labels
    rng = substream(seed, "split")
    train, test = [], []
    for c in range(len(cohort.class_names)):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise SpecError(f"class {cohort.class_names[c]} has fewer than 2 subjects")
        idx = rng.permutation(idx)
        n_test = min(max(1, int(math.floor(idx.size * test_fraction + 0.5))), idx.size - 1)
        test.extend(int(i) for i in idx[:n_test])
        train.extend(int(i) for i in idx[n_test:])
    return Cohort(cohort.subjects, {"train": sorted(train), "test": sorted(test)},
                  list(cohort.class_names), test_fraction)


# -- on-disk layout ------------------------------------------------------

LABELS_FILE = "labels.csv"
MATRIX_DIR = "matrices"
SPEC_FILE = "synth_spec.json"


def export_cohort(cohort: Cohort, directory, spec: SynthSpec | None = None) -> Path:
    """Write ``matrices/<subject>.csv`` plus a ``labels.csv`` manifest."""
    directory = Path(directory)
    (directory / MATRIX_DIR).mkdir(parents=True, exist_ok=True)
    split_of = {}
    for name, idx in cohort.split.items():
        for i in idx:
            split_of[i] = name
    with open(directory / LABELS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "class", "split"])
        for i, s in enumerate(cohort.subjects):
            save_matrix(s.matrix, directory / MATRIX_DIR / f"{s.subject_id}.csv")
            w.writerow([s.subject_id, cohort.class_names[s.label], split_of.get(i, "")])
    if spec is not None:
        meta = asdict(spec)
        meta["test_fraction"] = cohort.test_fraction
        (directory / SPEC_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_cohort(directory, class_names: Sequence[str] | None = None) -> Cohort:
    directory = Path(directory)
    path = directory / LABELS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no {LABELS_FILE} in {directory}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if class_names is None:
        seen = []
        for r in rows:
            if r["class"] not in seen:
                seen.append(r["class"])
        class_names = sorted(seen, key=lambda c: (len(c), c))
    class_names = list(class_names)
    subjects, split = [], {"train": [], "test": []}
    for i, r in enumerate(rows):
        m = load_matrix(directory / MATRIX_DIR / f"{r['subject_id']}.csv")
        subjects.append(Subject(m, class_names.index(r["class"]), r["subject_id"]))
        if r.get("split") in split:
            split[r["split"]].append(i)
    return Cohort(subjects, split, class_names)
