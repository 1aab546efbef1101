"""Dataset files, synthetic data, stratified folds and model persistence.

Dataset files hold one JSON record per line::

    {"modality": 1, "class": 3, "label": -1, "seq": [[0.1, 0.2], [0.3, 0.4]]}

``label`` is optional and can be derived later from a set of positive
classes. Blank lines and lines starting with ``#`` are ignored.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .conv import FilterBank
from .errors import DatasetFormatError, InvalidArgumentError, ModelFormatError, ModelVersionError
from .objective import Hyperparams, ModelParams
from .windowing import SequenceSample

MODEL_MAGIC = "XMCNN"
MODEL_VERSION = 1

# spawn-key prefixes, kept apart from the solver's streams
SYNTH_STREAM = 11
FOLD_STREAM = 12


@dataclass
class Dataset:
    samples: List[SequenceSample]
    dims: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            d = self.dims.setdefault(s.modality, s.dim)
            if d != s.dim:
                raise InvalidArgumentError(
                    f"sample {i}: instance dimension {s.dim} differs from modality {s.modality} ({d})"
                )

    def __len__(self):
        return len(self.samples)

    @property
    def modalities(self):
        return sorted(self.dims)

    @property
    def classes(self) -> np.ndarray:
        return np.array([s.cls for s in self.samples])

    @property
    def modality_ids(self) -> np.ndarray:
        return np.array([s.modality for s in self.samples], dtype=int)

    def subset(self, indices):
        return Dataset([self.samples[i] for i in indices], dict(self.dims))

    def with_binary_labels(self, positive_classes):
        """Relabel: classes in ``positive_classes`` become +1, others -1."""
        pos = set(positive_classes)
        out = []
        for i, s in enumerate(self.samples):
            if s.cls is None:
                raise InvalidArgumentError(f"sample {i} has no class id to derive a label from")
            out.append(s.with_label(1 if s.cls in pos else -1))
        return Dataset(out, dict(self.dims))


def _record(sample: SequenceSample):
    rec = {"modality": int(sample.modality)}
    if sample.cls is not None:
        rec["class"] = int(sample.cls)
    if sample.label is not None:
        rec["label"] = int(sample.label)
    rec["seq"] = sample.instances.tolist()
    return rec


def save_dataset(dataset: Dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            fh.write(json.dumps(_record(s), separators=(",", ":")) + "\n")


def _int_field(rec, key, path, lineno, required=True):
    if key not in rec:
        if required:
            raise DatasetFormatError(f"missing field {key!r}", path, lineno)
        return None
    value = rec[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise DatasetFormatError(f"field {key!r} must be an integer, got {value!r}", path, lineno)
    return value


def load_dataset(path) -> Dataset:
    samples = []
    dims = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(rec, dict):
                raise DatasetFormatError("record must be a JSON object", path, lineno)
            modality = _int_field(rec, "modality", path, lineno)
            if modality < 1:
                raise DatasetFormatError(f"unknown modality {modality} (ids start at 1)", path, lineno)
            cls = _int_field(rec, "class", path, lineno, required=False)
            label = _int_field(rec, "label", path, lineno, required=False)
            if label is not None and label not in (1, -1):
                raise DatasetFormatError(f"label must be +1 or -1, got {label}", path, lineno)
            seq = rec.get("seq")
            if not isinstance(seq, list) or not seq:
                raise DatasetFormatError("field 'seq' must be a non-empty list of vectors", path, lineno)
            lengths = {len(x) if isinstance(x, list) else -1 for x in seq}
            if len(lengths) != 1 or -1 in lengths or 0 in lengths:
                raise DatasetFormatError("instance vectors in 'seq' must be equal-length lists", path, lineno)
            d = lengths.pop()
            expected = dims.setdefault(modality, d)
            if d != expected:
                raise DatasetFormatError(
                    f"vector length {d} does not match modality {modality} dimension {expected}",
                    path, lineno,
                )
            try:
                arr = np.array(seq, dtype=np.float64)
            except (TypeError, ValueError):
                raise DatasetFormatError("non-numeric value in 'seq'", path, lineno) from None
            if not np.all(np.isfinite(arr)):
                raise DatasetFormatError("non-finite value in 'seq'", path, lineno)
            samples.append(SequenceSample(modality, arr, label, cls))
    if not samples:
        raise DatasetFormatError("dataset is empty", path)
    mods = sorted(dims)
    if mods != list(range(1, len(mods) + 1)):
        missing = sorted(set(range(1, mods[-1] + 1)) - set(mods))
        raise DatasetFormatError(f"modality ids must be contiguous from 1; missing {missing}", path)
    return Dataset(samples, dims)


def _anchors(rng, n_classes, d, separation):
    """Class anchors in R^d with pairwise distance ``separation``."""
    if n_classes <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        return separation / np.sqrt(2.0) * q[:, :n_classes].T
    # more classes than dimensions: random directions, distances only approximate
    dirs = rng.standard_normal((n_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation / np.sqrt(2.0) * dirs


def generate_synthetic(modalities=2, classes=2, per_class=10, dims=(4, 6), seq_len=(3, 8),
                       separation=4.0, noise=1.0, seed=0, positive_classes=(1,)) -> Dataset:
    """Gaussian sequence data with one anchor per (modality, class).

    Samples are laid out modality by modality, then class by class. Class ids
    run from 1 to ``classes``; ``positive_classes`` get label +1.
    """
    if separation < 0:
        raise InvalidArgumentError("separation must be non-negative")
    if len(dims) != modalities:
        raise InvalidArgumentError(f"need {modalities} instance dimensions, got {len(dims)}")
    lo, hi = seq_len
    if not 1 <= lo <= hi:
        raise InvalidArgumentError(f"bad sequence length range {seq_len}")
    pos = set(positive_classes)
    samples = []
    for j in range(1, modalities + 1):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SYNTH_STREAM, j)))
        d = int(dims[j - 1])
        anchors = _anchors(rng, classes, d, separation)
        for c in range(1, classes + 1):
            for _ in range(per_class):
                n = int(rng.integers(lo, hi + 1))
                x = anchors[c - 1] + noise * rng.standard_normal((n, d))
                samples.append(SequenceSample(j, x, 1 if c in pos else -1, c))
    return Dataset(samples, {j: int(dims[j - 1]) for j in range(1, modalities + 1)})


@dataclass
class FoldSplit:
    folds: List[np.ndarray]

    @property
    def n_folds(self):
        return len(self.folds)

    def round(self, r):
        """``(query_indices, training_indices)`` for evaluation round ``r``."""
        query = self.folds[r]
        rest = np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != r]))
        return query, rest


def make_folds(dataset: Dataset, n_folds=10, seed=0) -> FoldSplit:
    """Stratified split on (modality, class).

    Each group is shuffled and dealt round-robin; the dealer position carries
    over between groups so fold sizes stay within one of each other.
    """
    if n_folds < 2:
        raise InvalidArgumentError("need at least two folds")
    groups: Dict[tuple, list] = {}
    for i, s in enumerate(dataset.samples):
        groups.setdefault((s.modality, s.cls), []).append(i)
    for key, members in groups.items():
        if len(members) < n_folds:
            raise InvalidArgumentError(
                f"modality {key[0]} class {key[1]} has {len(members)} samples, fewer than {n_folds} folds"
            )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(FOLD_STREAM,)))
    buckets = [[] for _ in range(n_folds)]
    cursor = 0
    for key in sorted(groups, key=lambda k: (k[0], -1 if k[1] is None else k[1])):
        members = np.array(groups[key])
        for i in rng.permutation(members):
            buckets[cursor].append(int(i))
            cursor = (cursor + 1) % n_folds
    return FoldSplit([np.array(sorted(b), dtype=int) for b in buckets])


# ---------------------------------------------------------------- model files


def save_model(params: ModelParams, hp: Hyperparams, path, seed: Optional[int] = None,
               iterations: Optional[int] = None):
    body = {
        "hyperparams": hp.to_dict(),
        "v": params.v.tolist(),
        "banks": [
            {"modality": j, "h": b.h, "filters": b.filters.tolist()}
            for j, b in sorted(params.banks.items())
        ],
        "provenance": {"seed": seed, "iterations": iterations},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {MODEL_VERSION}\n")
        fh.write(json.dumps(body, sort_keys=True))
        fh.write("\n")


def load_model(path):
    """Return ``(params, hyperparams, provenance)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        payload = fh.read()
    parts = header.split()
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad header {header.strip()!r})")
    try:
        version = int(parts[1])
    except ValueError:
        raise ModelFormatError(f"{path}: unreadable version field {parts[1]!r}") from None
    if version != MODEL_VERSION:
        raise ModelVersionError(version, MODEL_VERSION)
    try:
        body = json.loads(payload)
        hp = Hyperparams.from_dict(body["hyperparams"])
        v = np.array(body["v"], dtype=np.float64)
        banks = {}
        for b in body["banks"]:
            banks[int(b["modality"])] = FilterBank(int(b["modality"]), np.array(b["filters"], dtype=np.float64), int(b["h"]))
        provenance = body.get("provenance", {})
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupted model file ({exc})") from None
    if any(bank.u != v.shape[0] for bank in banks.values()):
        raise ModelFormatError(f"{path}: corrupted model file (filter count disagrees with classifier)")
    return ModelParams(banks, v), hp, provenance
