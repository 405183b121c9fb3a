"""Core containers, label encoding and train/test splitting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArg, InvalidLabel, ShapeError, TooFewSamples
from .prng import Xoshiro256

N_CLASSES = 9
N_LABEL_DIMS = 4


class LabelDim(enum.IntEnum):
    VALENCE = 0
    AROUSAL = 1
    DOMINANCE = 2
    LIKING = 3

    @classmethod
    def parse(cls, name: str | int | LabelDim) -> LabelDim:
        if isinstance(name, (int, LabelDim)):
            return cls(int(name))
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise InvalidArg(
                f"unknown label dim {name!r}; expected one of "
                + ", ".join(d.name.lower() for d in cls)
            ) from None


@dataclass(frozen=True, eq=False)
class TrialSet:
    """Raw EEG: ``data[trial, channel, sample]`` plus VADL ratings per trial."""

    data: np.ndarray
    labels: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"data must be (trial, channel, sample), got shape {data.shape}")
        if labels.shape != (data.shape[0], N_LABEL_DIMS):
            raise ShapeError(
                f"labels must have shape ({data.shape[0]}, {N_LABEL_DIMS}), got {labels.shape}"
            )
        if min(data.shape) < 1:
            raise ShapeError(f"every dimension must be >= 1, got {data.shape}")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise InvalidArg(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all((labels >= 1.0) & (labels <= 9.0)):
            raise InvalidLabel("every label must lie in [1, 9]")
        data.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, TrialSet):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
            and np.array_equal(self.labels.view(np.uint32), other.labels.view(np.uint32))
        )


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Model-ready samples.

    ``classes`` holds the zero-based class index of every sample for all four
    label dimensions; ``targets(dim)`` gives the one-hot view for one of them.
    ``trial_index`` maps each sample back to its source trial.
    """

    features: np.ndarray
    classes: np.ndarray
    trial_index: np.ndarray
    feature_stats: tuple[np.ndarray, np.ndarray] | None = field(default=None)

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 3:
            raise ShapeError(f"features must be (sample, step, dim), got {feats.shape}")
        if self.classes.shape != (feats.shape[0], N_LABEL_DIMS):
            raise ShapeError("classes must be (n_samples, 4)")
        if self.trial_index.shape != (feats.shape[0],):
            raise ShapeError("trial_index must be (n_samples,)")
        if not np.all(np.isfinite(feats)):
            raise InvalidArg("features contain NaN or Inf")
        if self.classes.size and (self.classes.min() < 0 or self.classes.max() >= N_CLASSES):
            raise InvalidLabel("class index out of range")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @property
    def input_dim(self) -> int:
        return self.features.shape[2]

    def class_indices(self, dim: LabelDim) -> np.ndarray:
        return self.classes[:, int(dim)].astype(np.int64)

    def targets(self, dim: LabelDim) -> np.ndarray:
        return np.eye(N_CLASSES, dtype=np.float64)[self.class_indices(dim)]


def rating_to_class(rating: float) -> int:
    """Zero-based class of a 1..9 rating: round half away from zero, clamp."""
    rating = float(rating)
    if not math.isfinite(rating):
        raise InvalidLabel(f"rating must be finite, got {rating}")
    rounded = math.floor(abs(rating) + 0.5) * (1 if rating >= 0 else -1)
    return min(max(rounded, 1), 9) - 1


def one_hot_encode(rating: float) -> np.ndarray:
    out = np.zeros(N_CLASSES)
    out[rating_to_class(rating)] = 1.0
    return out


def one_hot_decode(target) -> int:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (N_CLASSES,):
        raise InvalidLabel(f"one-hot target must have length {N_CLASSES}, got shape {t.shape}")
    if not (np.count_nonzero(t == 1.0) == 1 and np.count_nonzero(t == 0.0) == N_CLASSES - 1):
        raise InvalidLabel("target is not a one-hot vector")
    return int(np.argmax(t)) + 1


def split_indices(n: int, train_fraction: float = 0.8, seed: int = 0) -> SplitIndices:
    """Seeded permutation of ``0..n-1``; the first ``round(fraction * n)`` go to train."""
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArg(f"train_fraction must lie in (0, 1), got {train_fraction}")
    perm = Xoshiro256(seed).permutation(n)
    # round half away from zero, matching the label rule
    n_train = int(math.floor(train_fraction * n + 0.5))
    return SplitIndices(train=perm[:n_train], test=perm[n_train:], seed=seed)


def split_by_trial(trial_index: np.ndarray, train_fraction: float, seed: int) -> SplitIndices:
    """Split whole trials, then expand to their samples (ascending sample order)."""
    trials = np.unique(trial_index)
    s = split_indices(len(trials), train_fraction, seed)
    train_trials = trials[s.train]
    in_train = np.isin(trial_index, train_trials)
    idx = np.arange(len(trial_index))
    return SplitIndices(train=idx[in_train], test=idx[~in_train], seed=seed)


def select_target(ts: TrialSet, dim: LabelDim) -> np.ndarray:
    return ts.labels[:, int(LabelDim.parse(dim))].astype(np.float64)
