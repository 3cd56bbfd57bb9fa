"""Synthetic multi-subject recordings and the windowing pipeline.

A Recording is a multichannel time series plus seizure events.  The
timeline rules turn events into labeled intervals: a seizure is "lead"
when enough seizure-free time precedes its onset (counted from the
recording start for the first one).  Preictal is the prediction window
before a lead onset, ending one horizon short of it; interictal starts a
guard period after any offset and ends where the next seizure's
preictal buffer begins.  Everything else (ictal, the horizon gap, the
guard, non-lead buildup) stays unlabeled.

Windows are fixed-length slices of labeled intervals: interictal windows
tile without overlap, preictal windows advance by a fraction of the
window so the rarer class is sampled more densely.  Each window is
z-scored per channel and stored as float32, which is also the payload
type of the dataset file format ("DBDS": magic, u16 version, u32 record
count, then per record u8 label, u32 subject id, f64 start time, u32
channels, u32 length, float32 LE samples; a CRC32 of all preceding
bytes closes the file).

The synthetic cohort plants subject-specific mixtures of shared
oscillatory mechanisms into the span before each onset, on top of
1/f-shaped noise, so a classifier has a real (and parametrically
controllable) signal to find, and subjects genuinely share structure.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .trainer import TrainingSet

INTERICTAL = 0
PREICTAL = 1

DATASET_MAGIC = b"DBDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class TimelineParams:
    """Timing rules for labeling; defaults follow the clinical convention
    of a 5 minute horizon, 30 minute preictal window, 4 hour lead gap and
    30 minute post-seizure guard.  All values are seconds."""
    sph_s: float = 300.0
    pil_s: float = 1800.0
    lead_gap_s: float = 14400.0
    interictal_guard_s: float = 1800.0
    window_s: float = 20.0
    preictal_overlap: float = 0.25

    def validate(self) -> "TimelineParams":
        for name in ("sph_s", "pil_s", "lead_gap_s", "interictal_guard_s", "window_s"):
            if getattr(self, name) <= 0:
                raise ConfigError("%s must be positive" % name)
        if not (0.0 <= self.preictal_overlap < 1.0):
            raise ConfigError("preictal_overlap must be in [0, 1)")
        if self.lead_gap_s < self.pil_s + self.sph_s + self.interictal_guard_s:
            raise ConfigError("lead_gap_s must cover pil + sph + guard, otherwise "
                              "preictal and guard intervals can collide")
        return self

    @property
    def preictal_stride_s(self) -> float:
        return self.window_s * (1.0 - self.preictal_overlap)


@dataclass
class Recording:
    subject_id: int
    fs: float
    samples: np.ndarray                      # (channels, n_samples)
    events: List[Tuple[float, float]]        # (onset_s, offset_s), sorted

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.fs <= 0:
            raise DataError("sampling rate must be positive")
        if self.samples.ndim != 2:
            raise DataError("samples must be (channels, n), got %r" % (self.samples.shape,))
        last = 0.0
        for on, off in self.events:
            if on >= off:
                raise DataError("event onset %g not before offset %g" % (on, off))
            if on < last:
                raise DataError("events overlap or are unsorted at onset %g" % on)
            if off > self.duration_s + 1e-9:
                raise DataError("event offset %g beyond recording end %g"
                                % (off, self.duration_s))
            last = off

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.fs


@dataclass(frozen=True)
class LabeledInterval:
    start_s: float
    end_s: float
    label: int


def lead_flags(events: Sequence[Tuple[float, float]], params: TimelineParams) -> List[bool]:
    """Which seizures have at least lead_gap_s seizure-free time before onset.

    The first seizure counts its gap from the recording start.
    """
    flags = []
    prev_off = 0.0
    for on, off in events:
        flags.append(on - prev_off >= params.lead_gap_s)
        prev_off = off
    return flags


def label_timeline(recording: Recording, params: TimelineParams) -> List[LabeledInterval]:
    """Labeled preictal and interictal intervals for one recording.

    Intervals are clipped to the recording and dropped when empty; the
    output is sorted by start time and non-overlapping.
    """
    params.validate()
    T = recording.duration_s
    events = recording.events
    leads = lead_flags(events, params)
    out: List[LabeledInterval] = []

    for (on, off), lead in zip(events, leads):
        if lead:
            start = max(0.0, on - params.pil_s - params.sph_s)
            end = min(T, on - params.sph_s)
            if start < end:
                out.append(LabeledInterval(start, end, PREICTAL))

    for i, (on, off) in enumerate(events):
        start = off + params.interictal_guard_s
        if i + 1 < len(events):
            end = events[i + 1][0] - params.pil_s - params.sph_s
        else:
            end = T
        start, end = max(0.0, start), min(T, end)
        if start < end:
            out.append(LabeledInterval(start, end, INTERICTAL))

    return sorted(out, key=lambda iv: iv.start_s)


@dataclass
class WindowedSample:
    window: np.ndarray      # (channels, length) float32, z-scored per channel
    label: int
    subject_id: int
    start_s: float


def normalize(window: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std each channel (population std), in float64.

    A constant channel has no scale and is refused.
    """
    arr = np.asarray(window, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("window must be (channels, length), got %r" % (arr.shape,))
    mean = arr.mean(axis=1, keepdims=True)
    std = arr.std(axis=1, keepdims=True)
    flat = np.where(std.reshape(-1) == 0.0)[0]
    if flat.size:
        raise DataError("channel %d is constant; cannot normalize" % int(flat[0]))
    return (arr - mean) / std


def segment_windows(recording: Recording, intervals: Sequence[LabeledInterval],
                    params: TimelineParams) -> List[WindowedSample]:
    """Cut labeled intervals into normalized fixed-length windows.

    Interictal windows tile with stride = window_s; preictal windows use
    stride = window_s * (1 - overlap).  A window is kept only when it
    fits inside its interval entirely.
    """
    params.validate()
    wlen = int(round(params.window_s * recording.fs))
    n = recording.samples.shape[1]
    out: List[WindowedSample] = []
    for iv in intervals:
        stride = params.window_s if iv.label == INTERICTAL else params.preictal_stride_s
        t0 = iv.start_s
        while t0 + params.window_s <= iv.end_s + 1e-9:
            i0 = int(round(t0 * recording.fs))
            if i0 + wlen > n:
                break
            win = normalize(recording.samples[:, i0:i0 + wlen]).astype(np.float32)
            out.append(WindowedSample(window=win, label=iv.label,
                                      subject_id=recording.subject_id, start_s=t0))
            t0 += stride
    return out


@dataclass
class SubjectDataset:
    """All windows of one subject as arrays, ordered by start time."""
    subject_id: int
    X: np.ndarray          # (n, channels, length) float32
    y: np.ndarray          # (n,) int64
    start_s: np.ndarray    # (n,) float64

    @classmethod
    def from_samples(cls, samples: Sequence[WindowedSample]) -> "SubjectDataset":
        if not samples:
            raise DataError("no windows to build a dataset from")
        sids = {s.subject_id for s in samples}
        if len(sids) != 1:
            raise DataError("windows come from several subjects: %s" % sorted(sids))
        order = np.argsort([s.start_s for s in samples], kind="stable")
        X = np.stack([samples[i].window for i in order]).astype(np.float32)
        y = np.array([samples[i].label for i in order], dtype=np.int64)
        t = np.array([samples[i].start_s for i in order], dtype=np.float64)
        return cls(subject_id=sids.pop(), X=X, y=y, start_s=t)

    def to_samples(self) -> List[WindowedSample]:
        return [WindowedSample(self.X[i], int(self.y[i]), self.subject_id,
                               float(self.start_s[i])) for i in range(len(self))]

    def as_training_set(self) -> TrainingSet:
        return TrainingSet.from_arrays(
            self.X, self.y, np.full(len(self), self.subject_id, dtype=np.int64))

    def split(self, fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
              ) -> Tuple["SubjectDataset", "SubjectDataset", "SubjectDataset"]:
        """Contiguous-in-time train/val/test split (no shuffling)."""
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        n = len(self)
        n_train = int(n * fractions[0])
        n_val = int(n * fractions[1])
        cuts = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)]
        parts = []
        for name, (a, b) in zip(("train", "val", "test"), cuts):
            if a >= b:
                raise DataError("subject %d has an empty %s split (%d windows total)"
                                % (self.subject_id, name, n))
            parts.append(SubjectDataset(self.subject_id, self.X[a:b],
                                        self.y[a:b], self.start_s[a:b]))
        return tuple(parts)

    def __len__(self):
        return self.X.shape[0]


def windows_for_recording(recording: Recording, params: TimelineParams) -> SubjectDataset:
    """Label, window, and pack one recording."""
    intervals = label_timeline(recording, params)
    samples = segment_windows(recording, intervals, params)
    if not samples:
        raise DataError("subject %d yields no windows under these timeline rules"
                        % recording.subject_id)
    return SubjectDataset.from_samples(samples)


# -- dataset file format ------------------------------------------------------

def write_dataset(samples: Sequence[WindowedSample], path: str) -> None:
    blob = bytearray()
    blob += DATASET_MAGIC
    blob += struct.pack("<H", DATASET_VERSION)
    blob += struct.pack("<I", len(samples))
    for s in samples:
        if s.label not in (INTERICTAL, PREICTAL):
            raise DataError("window label %r is not 0/1" % (s.label,))
        win = np.asarray(s.window, dtype="<f4")
        if win.ndim != 2:
            raise DataError("window must be 2-D, got %r" % (win.shape,))
        C, L = win.shape
        blob += struct.pack("<BIdII", s.label, s.subject_id, float(s.start_s), C, L)
        blob += win.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as f:
        f.write(bytes(blob))


def _need(buf: bytes, offset: int, n: int, what: str) -> Tuple[bytes, int]:
    if offset + n > len(buf):
        raise FormatError("dataset truncated in %s" % what)
    return buf[offset:offset + n], offset + n


def read_dataset(path: str) -> List[WindowedSample]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4:
        raise FormatError("dataset truncated in magic")
    if buf[:4] != DATASET_MAGIC:
        raise FormatError("bad magic %r; not a window dataset" % buf[:4])
    if len(buf) < 4 + 4:
        raise FormatError("dataset truncated in checksum")
    body, stored = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(body) != stored:
        raise FormatError("dataset checksum mismatch; file is corrupted")

    off = 4
    raw, off = _need(body, off, 2, "version")
    (version,) = struct.unpack("<H", raw)
    if version > DATASET_VERSION:
        raise FormatError("dataset version %d is newer than supported %d"
                          % (version, DATASET_VERSION))
    raw, off = _need(body, off, 4, "record count")
    (count,) = struct.unpack("<I", raw)
    out: List[WindowedSample] = []
    for i in range(count):
        raw, off = _need(body, off, struct.calcsize("<BIdII"), "record %d header" % i)
        label, sid, t0, C, L = struct.unpack("<BIdII", raw)
        if label not in (INTERICTAL, PREICTAL):
            raise FormatError("record %d label %d is not 0/1" % (i, label))
        raw, off = _need(body, off, 4 * C * L, "record %d samples" % i)
        win = np.frombuffer(raw, dtype="<f4").reshape(C, L).copy()
        out.append(WindowedSample(window=win, label=int(label),
                                  subject_id=int(sid), start_s=float(t0)))
    if off != len(body):
        raise FormatError("dataset has %d trailing bytes" % (len(body) - off))
    return out


def read_subject_dataset(path: str) -> SubjectDataset:
    return SubjectDataset.from_samples(read_dataset(path))


# -- synthetic cohort ---------------------------------------------------------

@dataclass(frozen=True)
class Mechanism:
    """A band-limited oscillatory source: bursts of a single frequency
    under a Hann envelope.  amplitude 0 makes it a null (silent) source."""
    freq_hz: float
    amplitude: float = 1.0
    burst_s: float = 3.0
    duty: float = 0.6

    def validate(self):
        if self.freq_hz <= 0 or self.burst_s <= 0:
            raise ConfigError("mechanism needs positive frequency and burst length")
        if self.amplitude < 0 or not (0.0 < self.duty <= 1.0):
            raise ConfigError("mechanism amplitude/duty out of range")


@dataclass(frozen=True)
class SyntheticSpec:
    """Layout and content of a generated cohort.

    Seizure onsets are placed deterministically: the first at head_s,
    then every (seizure_s + gap_s).  The active_span_s seconds before
    each onset carry that subject's mechanism mixture; everything else is
    1/f^noise_exponent shaped noise.  subject_weights rows (one per
    subject, one column per mechanism) default to 0.7 on mechanism
    (s mod M) and 0.3 on mechanism ((s+1) mod M), which gives every
    subject company on its mechanisms.  Channel mixing defaults to
    seeded signed gains per (subject, channel, mechanism).
    """
    n_subjects: int = 10
    fs: float = 64.0
    n_channels: int = 8
    duration_s: float = 7000.0
    n_seizures: int = 5
    seizure_s: float = 40.0
    gap_s: float = 1200.0
    head_s: float = 1250.0
    active_span_s: float = 175.0
    mechanisms: Tuple[Mechanism, ...] = (
        Mechanism(5.0), Mechanism(7.5), Mechanism(10.0), Mechanism(12.5))
    subject_weights: Optional[Tuple[Tuple[float, ...], ...]] = None
    mixing: Optional[Tuple] = None    # (n_subjects, n_channels, n_mechanisms)
    noise_sigma: float = 1.0
    noise_exponent: float = 0.5
    mechanism_snr: float = 2.0        # burst amplitude scale relative to noise
    seed: int = 0

    def onsets(self) -> List[float]:
        return [self.head_s + i * (self.seizure_s + self.gap_s)
                for i in range(self.n_seizures)]

    def validate(self) -> "SyntheticSpec":
        if self.n_subjects < 1 or self.n_channels < 1 or self.n_seizures < 1:
            raise ConfigError("cohort dimensions must be positive")
        if self.fs <= 0 or self.duration_s <= 0:
            raise ConfigError("fs and duration must be positive")
        if not self.mechanisms:
            raise ConfigError("need at least one mechanism")
        for m in self.mechanisms:
            m.validate()
            if m.freq_hz >= self.fs / 2:
                raise ConfigError("mechanism at %g Hz exceeds Nyquist for fs=%g"
                                  % (m.freq_hz, self.fs))
        last_off = self.onsets()[-1] + self.seizure_s
        if last_off > self.duration_s:
            raise ConfigError("duration %gs cannot hold %d seizures ending at %gs"
                              % (self.duration_s, self.n_seizures, last_off))
        if self.head_s < self.active_span_s:
            raise ConfigError("head_s must leave room for the first active span")
        if self.subject_weights is not None:
            if len(self.subject_weights) != self.n_subjects:
                raise ConfigError("subject_weights needs one row per subject")
            for row in self.subject_weights:
                if len(row) != len(self.mechanisms):
                    raise ConfigError("each weight row needs one entry per mechanism")
        if self.mixing is not None:
            ok = len(self.mixing) == self.n_subjects and all(
                len(subj) == self.n_channels and all(
                    len(row) == len(self.mechanisms) for row in subj)
                for subj in self.mixing)
            if not ok:
                raise ConfigError(
                    "mixing table must be (n_subjects, n_channels, n_mechanisms)"
                    " = (%d, %d, %d)" % (self.n_subjects, self.n_channels,
                                         len(self.mechanisms)))
        return self

    def weights_for(self, subject: int) -> np.ndarray:
        if self.subject_weights is not None:
            return np.asarray(self.subject_weights[subject], dtype=np.float64)
        M = len(self.mechanisms)
        w = np.zeros(M)
        w[subject % M] += 0.7
        w[(subject + 1) % M] += 0.3
        return w


def _shaped_noise(rng: np.random.Generator, C: int, n: int, fs: float,
                  sigma: float, exponent: float) -> np.ndarray:
    """Per-channel noise with amplitude spectrum ~ 1/f^exponent, unit std."""
    white = rng.standard_normal((C, n))
    F = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    scale = np.ones_like(freqs)
    nonzero = freqs > 0
    scale[nonzero] = freqs[nonzero] ** (-exponent)
    scale[0] = 0.0  # no DC drift
    x = np.fft.irfft(F * scale, n=n, axis=1)
    std = x.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return sigma * x / std


def _mechanism_trace(rng: np.random.Generator, mech: Mechanism, span_s: float,
                     fs: float) -> np.ndarray:
    """One active span's worth of bursts for a single mechanism."""
    n = int(round(span_s * fs))
    trace = np.zeros(n)
    if mech.amplitude == 0.0:
        return trace
    burst_n = int(round(mech.burst_s * fs))
    if burst_n < 2 or burst_n > n:
        burst_n = min(max(burst_n, 2), n)
    count = max(1, int(round(mech.duty * span_s / mech.burst_s)))
    env = np.hanning(burst_n)
    t = np.arange(burst_n) / fs
    for _ in range(count):
        start = int(rng.integers(0, max(1, n - burst_n + 1)))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        trace[start:start + burst_n] += env * np.sin(
            2.0 * np.pi * mech.freq_hz * t + phase)
    return mech.amplitude * trace


def generate_cohort(spec: SyntheticSpec) -> List[Recording]:
    """Deterministic synthetic recordings, one per subject.

    The same spec (seed included) always produces identical sample
    streams.
    """
    spec.validate()
    n = int(round(spec.duration_s * spec.fs))
    onsets = spec.onsets()
    events = [(on, on + spec.seizure_s) for on in onsets]
    M = len(spec.mechanisms)

    recordings = []
    for s in range(spec.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(s,)))
        x = _shaped_noise(rng, spec.n_channels, n, spec.fs,
                          spec.noise_sigma, spec.noise_exponent)
        if spec.mixing is not None:
            mix = np.asarray(spec.mixing[s], dtype=np.float64)
        else:
            gain = rng.uniform(0.5, 1.0, size=(spec.n_channels, M))
            sign = np.where(rng.random((spec.n_channels, M)) < 0.5, -1.0, 1.0)
            mix = gain * sign
        weights = spec.weights_for(s)

        span_n = int(round(spec.active_span_s * spec.fs))
        for on in onsets:
            a0 = int(round((on - spec.active_span_s) * spec.fs))
            for m, mech in enumerate(spec.mechanisms):
                if weights[m] == 0.0:
                    continue
                trace = _mechanism_trace(rng, mech, spec.active_span_s, spec.fs)
                contribution = spec.mechanism_snr * weights[m] * trace
                x[:, a0:a0 + span_n] += mix[:, m:m + 1] * contribution
            # give the ictal stretch visible rhythmic content too
            i0 = int(round(on * spec.fs))
            i1 = min(n, i0 + int(round(spec.seizure_s * spec.fs)))
            t = np.arange(i1 - i0) / spec.fs
            x[:, i0:i1] += 3.0 * spec.noise_sigma * np.sin(2.0 * np.pi * 4.0 * t)

        recordings.append(Recording(subject_id=s, fs=spec.fs, samples=x,
                                    events=list(events)))
    return recordings
