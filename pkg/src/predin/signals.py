"""Windowing, standardization, and split logic for multichannel recordings.

Recordings enter either from CSV files (one row per timestep) or from the
synthetic generator, get cut into fixed-length windows, and are routed into
train/test partitions by trial id with a seeded known/unknown class split.

CSV formats (fixtures in docs/fixtures/):
  signal CSV    one row per timestep, C comma-separated decimal values
  metadata CSV  header start_row,end_row,label,trial,subject,sampling_rate_hz;
                row ranges are 0-based and end-exclusive into the signal file
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

# Label carried by test windows whose class was not selected as known.
UNKNOWN_LABEL = -1

# Channels with a training std below this are scaled by the floor instead.
STD_FLOOR = 1e-8


class ParseError(ValueError):
    """Malformed CSV input; the message names the offending location."""


@dataclass
class SignalRecording:
    """One continuous multichannel recording of a single labeled trial."""

    samples: np.ndarray  # (channels, timesteps)
    sampling_rate: float
    gesture_label: int
    trial_id: int
    subject_id: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or min(self.samples.shape) < 1:
            raise ValueError(
                f"samples must be a (channels, timesteps) matrix, got shape "
                f"{self.samples.shape}"
            )
        if not self.sampling_rate > 0:
            raise ValueError(f"sampling_rate must be > 0, got {self.sampling_rate}")
        if not np.isfinite(self.samples).all():
            raise ValueError("recording contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.samples.shape[1]


@dataclass
class WindowSample:
    """A fixed-length window cut from a recording."""

    x: np.ndarray  # (channels, window_len)
    label: int
    trial_id: int
    subject_id: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError(f"window must be 2-d, got shape {self.x.shape}")
        if not np.isfinite(self.x).all():
            raise ValueError("window contains non-finite values")


@dataclass(frozen=True)
class LabelSplit:
    """Seeded partition of class ids into known and unknown sets.

    Known classes are remapped to contiguous ids 1..N in the order of
    ``known_classes``; everything else maps to UNKNOWN_LABEL.
    """

    known_classes: tuple[int, ...]
    unknown_classes: frozenset[int]
    seed: int

    def __post_init__(self):
        if len(self.known_classes) < 2:
            raise ValueError("need at least 2 known classes")
        if set(self.known_classes) & self.unknown_classes:
            raise ValueError("known and unknown classes overlap")

    @property
    def n_known(self) -> int:
        return len(self.known_classes)

    def remap(self, original_label: int) -> int:
        """Original class id -> contiguous 1..N, or UNKNOWN_LABEL."""
        try:
            return self.known_classes.index(original_label) + 1
        except ValueError:
            return UNKNOWN_LABEL


@dataclass
class StandardizationStats:
    """Per-channel training mean/std; floored channels are recorded."""

    mean: np.ndarray  # (channels,)
    std: np.ndarray  # (channels,), floored at STD_FLOOR
    floored_channels: tuple[int, ...] = ()


@dataclass
class DatasetPartition:
    """Train/test windows split by trial, plus the label split that filtered
    the train side. Windows keep their original class labels; remapping to
    1..N happens when batches are assembled."""

    train_windows: list[WindowSample]
    test_windows: list[WindowSample]
    label_split: LabelSplit | None = None
    stats: StandardizationStats | None = None


def window_geometry(sampling_rate: float, window_ms: float, step_ms: float) -> tuple[int, int]:
    """Window length and stride in samples for the given timing.

    200 ms / 50 ms at 2000 Hz gives (400, 100).
    """
    if step_ms <= 0:
        raise ValueError(f"step_ms must be positive, got {step_ms}")
    window_len = int(round(window_ms * sampling_rate / 1000.0))
    stride = int(round(step_ms * sampling_rate / 1000.0))
    if window_len < 1:
        raise ValueError(f"window of {window_ms} ms is shorter than one sample")
    if stride < 1:
        raise ValueError(f"step of {step_ms} ms is shorter than one sample")
    return window_len, stride


def segment_windows(
    recording: SignalRecording, window_ms: float, step_ms: float
) -> list[WindowSample]:
    """Slide a fixed window over the recording; trailing partials are dropped.

    Yields floor((timesteps - window_len) / stride) + 1 windows, or an empty
    list when the recording is shorter than one window.
    """
    window_len, stride = window_geometry(recording.sampling_rate, window_ms, step_ms)
    out: list[WindowSample] = []
    for start in range(0, recording.n_timesteps - window_len + 1, stride):
        out.append(
            WindowSample(
                x=recording.samples[:, start : start + window_len].copy(),
                label=recording.gesture_label,
                trial_id=recording.trial_id,
                subject_id=recording.subject_id,
            )
        )
    return out


def split_known_unknown(all_classes, n_known: int, seed: int) -> LabelSplit:
    """Seeded draw of n_known known classes; the rest become unknown."""
    classes = sorted(set(all_classes))
    if n_known >= len(classes):
        raise ValueError(
            f"n_known={n_known} must be smaller than the number of classes "
            f"({len(classes)})"
        )
    if n_known < 2:
        raise ValueError("need at least 2 known classes")
    rng = np.random.default_rng(seed)
    picked = rng.permutation(len(classes))[:n_known]
    known = tuple(sorted(classes[i] for i in picked))
    unknown = frozenset(classes) - set(known)
    return LabelSplit(known_classes=known, unknown_classes=unknown, seed=seed)


def split_trials(
    windows: list[WindowSample],
    train_trials,
    test_trials,
    label_split: LabelSplit | None = None,
) -> DatasetPartition:
    """Route windows into train/test by trial id.

    Windows whose trial id is in neither set are dropped. When a label split
    is given, unknown-class windows are removed from the train side (they
    stay in test).
    """
    train_trials = set(train_trials)
    test_trials = set(test_trials)
    if train_trials & test_trials:
        raise ValueError(f"train and test trials overlap: {sorted(train_trials & test_trials)}")
    train: list[WindowSample] = []
    test: list[WindowSample] = []
    known = set(label_split.known_classes) if label_split is not None else None
    for w in windows:
        if w.trial_id in train_trials:
            if known is None or w.label in known:
                train.append(w)
        elif w.trial_id in test_trials:
            test.append(w)
    return DatasetPartition(train_windows=train, test_windows=test, label_split=label_split)


def standardize(partition: DatasetPartition) -> DatasetPartition:
    """Channel-wise standardization with statistics from the train side only.

    The same per-channel mean/std is applied to train and test windows, so
    nothing about the test distribution leaks into the transform. Channels
    whose training std falls below STD_FLOOR are scaled by the floor and a
    warning is emitted.
    """
    if not partition.train_windows:
        raise ValueError("cannot standardize: training partition is empty")
    stacked = np.concatenate([w.x for w in partition.train_windows], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    floored = np.nonzero(std < STD_FLOOR)[0]
    if floored.size:
        warnings.warn(
            f"channels {floored.tolist()} are (near-)constant in training data; "
            f"std floored at {STD_FLOOR}",
            stacklevel=2,
        )
        std = np.where(std < STD_FLOOR, STD_FLOOR, std)
    stats = StandardizationStats(mean=mean, std=std, floored_channels=tuple(floored.tolist()))

    def apply(w: WindowSample) -> WindowSample:
        return replace(w, x=(w.x - mean[:, None]) / std[:, None])

    return DatasetPartition(
        train_windows=[apply(w) for w in partition.train_windows],
        test_windows=[apply(w) for w in partition.test_windows],
        label_split=partition.label_split,
        stats=stats,
    )


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for the synthetic multichannel dataset.

    Class signatures are per-channel offset patterns assembled from two
    small pools, one per channel group: every class is a distinct
    (pattern, pattern) pair, so classes share each half-signature with
    other classes and are only identified by the combination. A held-out
    class therefore resembles one class on the first channel group and a
    different class on the second, which is exactly the kind of ambiguity
    open-set rejection has to handle. On top of the offsets sit a
    class-independent per-channel oscillation (random phase per trial) and
    band-limited noise. Signature scales are proportional to
    ``separation``; separation=0 collapses every class into pure noise.
    """

    n_classes: int = 10
    channels: int = 4
    trials: int = 3
    recording_ms: float = 1200.0
    sampling_rate_hz: float = 2000.0
    separation: float = 1.0
    osc_scale: float = 0.5
    noise_scale: float = 0.5
    smooth_samples: int = 51


def _smooth_rows(noise: np.ndarray, width: int) -> np.ndarray:
    """Moving-average each row, rescaled to keep unit per-sample variance."""
    if width <= 1:
        return noise
    kernel = np.ones(width) / width
    out = np.empty_like(noise)
    for i in range(noise.shape[0]):
        out[i] = np.convolve(noise[i], kernel, mode="same")
    return out * math.sqrt(width)


def _class_offsets(config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-class channel offsets: distinct pattern pairs from two pools."""
    c_half = config.channels // 2
    if c_half == 0:
        # single channel: plain per-class offsets, no pair structure
        return config.separation * rng.standard_normal((config.n_classes, config.channels))
    pool = max(2, math.ceil(math.sqrt(config.n_classes)))
    pool_a = config.separation * rng.standard_normal((pool, c_half))
    pool_b = config.separation * rng.standard_normal((pool, config.channels - c_half))
    pairs = rng.permutation(pool * pool)[: config.n_classes]
    return np.concatenate([pool_a[pairs // pool], pool_b[pairs % pool]], axis=1)


def generate_synthetic(config: SyntheticConfig, seed: int):
    """Build one recording per (class, trial), deterministic per seed.

    Returns (recordings, class_ids) with classes labeled 1..n_classes and
    trials labeled 1..trials.
    """
    if config.n_classes < 3:
        raise ValueError("need at least 3 classes (known plus unknown)")
    rng = np.random.default_rng(seed)
    n = int(round(config.recording_ms * config.sampling_rate_hz / 1000.0))
    offsets = _class_offsets(config, rng)
    freqs = rng.uniform(5.0, 45.0, size=config.channels)
    phases = rng.uniform(0.0, 2 * np.pi, size=config.channels)
    t = np.arange(n) / config.sampling_rate_hz
    recordings: list[SignalRecording] = []
    for c in range(config.n_classes):
        for trial in range(1, config.trials + 1):
            trial_phase = rng.uniform(0.0, 2 * np.pi)
            osc = np.sin(
                2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None] + trial_phase
            )
            noise = _smooth_rows(
                rng.standard_normal((config.channels, n)), config.smooth_samples
            )
            samples = (
                offsets[c][:, None]
                + config.separation * config.osc_scale * osc
                + config.noise_scale * noise
            )
            recordings.append(
                SignalRecording(
                    samples=samples,
                    sampling_rate=config.sampling_rate_hz,
                    gesture_label=c + 1,
                    trial_id=trial,
                    subject_id=1,
                )
            )
    return recordings, set(range(1, config.n_classes + 1))


def _parse_int(row: dict, key: str, lineno: int, path) -> int:
    try:
        return int(row[key])
    except (KeyError, TypeError):
        raise ParseError(f"{path}: metadata line {lineno}: missing column {key!r}") from None
    except ValueError:
        raise ParseError(
            f"{path}: metadata line {lineno}: non-integer {key}={row[key]!r}"
        ) from None


def load_csv(data_path, meta_path) -> list[SignalRecording]:
    """Read recordings from a signal CSV plus a metadata CSV.

    The metadata file assigns each 0-based, end-exclusive row range of the
    signal file to one recording. Malformed rows raise ParseError naming the
    file, line, and column.
    """
    rows: list[list[float]] = []
    n_channels: int | None = None
    with open(data_path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if n_channels is None:
                n_channels = len(row)
            if len(row) != n_channels:
                raise ParseError(
                    f"{data_path}: row {lineno}: expected {n_channels} values, "
                    f"got {len(row)}"
                )
            parsed = []
            for col, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{data_path}: row {lineno}, column {col}: "
                        f"non-numeric value {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        return []
    data = np.asarray(rows, dtype=np.float64)

    recordings: list[SignalRecording] = []
    with open(meta_path, newline="") as f:
        reader = csv.DictReader(f)
        for lineno, row in enumerate(reader, start=2):  # line 1 is the header
            start = _parse_int(row, "start_row", lineno, meta_path)
            end = _parse_int(row, "end_row", lineno, meta_path)
            if not (0 <= start < end <= len(data)):
                raise ParseError(
                    f"{meta_path}: metadata line {lineno}: range [{start}, {end}) "
                    f"outside the {len(data)} data rows"
                )
            try:
                rate = float(row["sampling_rate_hz"])
            except (KeyError, TypeError):
                raise ParseError(
                    f"{meta_path}: metadata line {lineno}: missing column 'sampling_rate_hz'"
                ) from None
            except ValueError:
                raise ParseError(
                    f"{meta_path}: metadata line {lineno}: non-numeric "
                    f"sampling_rate_hz={row['sampling_rate_hz']!r}"
                ) from None
            recordings.append(
                SignalRecording(
                    samples=data[start:end].T.copy(),
                    sampling_rate=rate,
                    gesture_label=_parse_int(row, "label", lineno, meta_path),
                    trial_id=_parse_int(row, "trial", lineno, meta_path),
                    subject_id=_parse_int(row, "subject", lineno, meta_path),
                )
            )
    return recordings
