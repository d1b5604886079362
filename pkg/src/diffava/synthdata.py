"""Synthetic audio-video-text triplets with a known event timeline.

Each clip has ``T`` one-second rows. Audio is a mel-like ``T x F`` energy
matrix: a per-clip ambient texture near ``noise_floor`` plus band-limited
energy for every scripted event. Video is a ``T x D_v`` matrix of pre-encoded
frame features carrying the same events (class prototype directions) and
the same ambient "scene" vector. Text is the ordered list of event classes
wrapped in BOS/EOS tokens; it says *what* happens but not *when*.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataFormatError, InvalidArgumentError
from .numerics import Rng

BOS, EOS = 0, 1
MAGIC = b"DAVADATA"
VERSION = 1
_HEADER = struct.Struct("<8s6I")


class Event(NamedTuple):
    onset: float
    duration: float
    class_id: int


@dataclass(frozen=True)
class DataConfig:
    T: int = 10
    F: int = 64
    D_v: int = 32
    K: int = 8
    max_events: int = 2
    max_duration: int = 3
    noise_floor: float = 0.1
    scene_dim: int = 4
    scene_strength: float = 0.6
    ambient_jitter: float = 0.05
    event_gain: tuple = (5.0, 7.0)
    world_seed: int = 1234
    n_train: int = 4096
    n_val: int = 512
    n_test: int = 256

    @property
    def vocab_size(self) -> int:
        return self.K + 2


@dataclass
class TripletSample:
    mel: np.ndarray  # (T, F) float32, nonnegative
    frame_features: np.ndarray  # (T, D_v) float32
    token_ids: np.ndarray  # uint32
    script: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, TripletSample):
            return NotImplemented
        return (np.array_equal(self.mel, other.mel)
                and np.array_equal(self.frame_features, other.frame_features)
                and np.array_equal(self.token_ids, other.token_ids)
                and list(self.script) == list(other.script))


def generate_script(rng: Rng, clip_len: int, max_events: int, n_classes: int = 8,
                    max_duration: int = 3) -> list[Event]:
    """Random non-overlapping events with integer onsets/durations, sorted by onset."""
    if clip_len < 1 or max_events < 1:
        raise InvalidArgumentError("clip_len and max_events must be >= 1")
    clip_len = int(clip_len)
    n = min(1 + rng.integers(0, max_events), clip_len)
    budget = clip_len
    durations = []
    for j in range(n):
        hi = min(max_duration, budget - (n - j - 1))
        d = rng.integers(1, hi + 1)
        durations.append(d)
        budget -= d
    free = clip_len - sum(durations)
    # stars and bars: n event blocks among `free` unit gaps
    slots = np.sort(rng.permutation(free + n)[:n])
    if n <= n_classes:
        classes = rng.permutation(n_classes)[:n]
    else:
        classes = rng.integers(0, n_classes, n)
    events, used = [], 0
    for j in range(n):
        onset = int(slots[j]) - j + used
        events.append(Event(float(onset), float(durations[j]), int(classes[j])))
        used += durations[j]
    return events


def validate_script(script, clip_len: float, n_classes: int) -> None:
    prev = -np.inf
    for ev in script:
        if not (0 <= ev.onset and ev.duration > 0 and ev.onset + ev.duration <= clip_len):
            raise InvalidArgumentError(f"event {ev} outside clip of length {clip_len}")
        if not 0 <= ev.class_id < n_classes:
            raise InvalidArgumentError(f"class id {ev.class_id} outside [0, {n_classes})")
        if ev.onset < prev:
            raise InvalidArgumentError("events must be sorted by onset")
        prev = ev.onset


def tokens_for_script(script) -> np.ndarray:
    return np.array([BOS] + [2 + ev.class_id for ev in script] + [EOS], dtype=np.uint32)


def script_activity(script, T: int) -> np.ndarray:
    """Boolean per-row mask of rows covered by any event."""
    mask = np.zeros(T, dtype=bool)
    for ev in script:
        mask[int(np.floor(ev.onset)):int(np.ceil(ev.onset + ev.duration))] = True
    return mask


def mel_activity(mel, noise_floor: float) -> np.ndarray:
    """Rows whose mean energy exceeds three times the noise floor."""
    return np.asarray(mel, dtype=np.float64).mean(axis=-1) > 3.0 * noise_floor


class _World:
    """Fixed per-config constants: class band profiles, prototypes, scene basis."""

    def __init__(self, cfg: DataConfig):
        rng = Rng(cfg.world_seed)
        band = cfg.F // cfg.K
        j = np.arange(band)
        self.band = band
        self.profiles = np.stack([
            0.6 + 0.4 * np.sin(np.pi * (j + 0.5) / band) ** (1 + c % 3) for c in range(cfg.K)
        ])
        bins = np.arange(cfg.F)
        self.ambient_basis = np.stack([
            np.cos(np.pi * (k + 1) * (bins + 0.5) / cfg.F) for k in range(cfg.scene_dim)
        ])
        n_dirs = cfg.K + cfg.scene_dim
        if n_dirs > cfg.D_v:
            raise InvalidArgumentError(f"D_v={cfg.D_v} too small for {n_dirs} orthogonal directions")
        q, _ = np.linalg.qr(rng.normal((cfg.D_v, n_dirs)))
        self.prototypes = 3.0 * q[:, :cfg.K].T  # (K, D_v)
        self.scene_dirs = q[:, cfg.K:].T  # (scene_dim, D_v)


_WORLDS: dict = {}


def _world(cfg: DataConfig) -> _World:
    if cfg not in _WORLDS:
        _WORLDS[cfg] = _World(cfg)
    return _WORLDS[cfg]


def video_activity(frame_features, cfg: DataConfig) -> np.ndarray:
    """Rows whose projection onto some class prototype exceeds half its length."""
    w = _world(cfg)
    proj = np.asarray(frame_features, dtype=np.float64) @ w.prototypes.T / 9.0
    return proj.max(axis=-1) > 0.5


def render_triplet(script, rng: Rng, cfg: DataConfig) -> TripletSample:
    validate_script(script, cfg.T, cfg.K)
    w = _world(cfg)
    scene = rng.uniform(-1.0, 1.0, cfg.scene_dim)
    ambient = cfg.noise_floor * (1.0 + (cfg.scene_strength / cfg.scene_dim) * scene @ w.ambient_basis)
    mel = ambient * (1.0 + rng.uniform(-cfg.ambient_jitter, cfg.ambient_jitter, (cfg.T, cfg.F)))
    frames = np.tile(scene @ w.scene_dirs, (cfg.T, 1)) + 0.05 * rng.normal((cfg.T, cfg.D_v))
    lo_gain, hi_gain = cfg.event_gain
    for ev in script:
        gain = rng.uniform(lo_gain, hi_gain)
        rows = slice(int(ev.onset), int(ev.onset + ev.duration))
        n_rows = rows.stop - rows.start
        band = slice(ev.class_id * w.band, (ev.class_id + 1) * w.band)
        jitter = rng.uniform(0.9, 1.1, (n_rows, w.band))
        mel[rows, band] += gain * w.profiles[ev.class_id] * jitter
        frames[rows] += (gain / np.mean(cfg.event_gain)) * w.prototypes[ev.class_id]
    return TripletSample(
        mel=mel.astype(np.float32),
        frame_features=frames.astype(np.float32),
        token_ids=tokens_for_script(script),
        script=[Event(float(np.float32(e.onset)), float(np.float32(e.duration)), int(e.class_id))
                for e in script],
    )


def generate_dataset(cfg: DataConfig, n: int, seed: int) -> list[TripletSample]:
    """Sample ``n`` triplets; sample ``i`` depends only on ``(seed, i, cfg)``."""
    base = Rng(seed)
    out = []
    for i in range(n):
        rng = base.spawn(i)
        script = generate_script(rng, cfg.T, cfg.max_events, cfg.K, cfg.max_duration)
        out.append(render_triplet(script, rng, cfg))
    return out


def dominant_class(script) -> int:
    """Class of the longest event; earliest wins ties."""
    best = max(script, key=lambda ev: (ev.duration, -ev.onset))
    return best.class_id


def stack(samples):
    """Batch arrays: (mel[B,T,F], frames[B,T,D_v]) as float64."""
    mel = np.stack([s.mel for s in samples]).astype(np.float64)
    frames = np.stack([s.frame_features for s in samples]).astype(np.float64)
    return mel, frames


# --- binary file format -------------------------------------------------------

def write_dataset(path, samples, cfg: DataConfig | None = None, dims=None) -> None:
    """Write samples in the little-endian ``DAVADATA`` v1 layout.

    ``dims`` = (T, F, D_v, K) is required when ``samples`` is empty and no cfg is given.
    """
    if dims is None:
        if cfg is not None:
            dims = (cfg.T, cfg.F, cfg.D_v, cfg.K)
        elif samples:
            s = samples[0]
            k = 1 + max((e.class_id for x in samples for e in x.script), default=0)
            dims = (s.mel.shape[0], s.mel.shape[1], s.frame_features.shape[1], k)
        else:
            raise InvalidArgumentError("dims or cfg required to write an empty dataset")
    T, F, D_v, K = dims
    parts = [_HEADER.pack(MAGIC, VERSION, len(samples), T, F, D_v, K)]
    for s in samples:
        if s.mel.shape != (T, F) or s.frame_features.shape != (T, D_v):
            raise InvalidArgumentError("sample shape does not match dataset header")
        parts.append(struct.pack("<I", len(s.script)))
        for ev in s.script:
            parts.append(struct.pack("<ffI", ev.onset, ev.duration, ev.class_id))
        parts.append(np.ascontiguousarray(s.mel, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(s.frame_features, dtype="<f4").tobytes())
        tokens = np.asarray(s.token_ids)
        parts.append(struct.pack("<I", tokens.size))
        parts.append(np.ascontiguousarray(tokens, dtype="<u4").tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf, self.pos, self.name = buf, 0, name

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataFormatError(f"{self.name}: truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype=dtype).copy()


def read_header(path):
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise DataFormatError(f"{path}: file shorter than header", len(buf))
    magic, version, count, T, F, D_v, K = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}", 0)
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}", 8)
    return {"count": count, "T": T, "F": F, "D_v": D_v, "K": K}


def read_dataset(path) -> list[TripletSample]:
    buf = Path(path).read_bytes()
    hdr = read_header(path)
    T, F, D_v = hdr["T"], hdr["F"], hdr["D_v"]
    r = _Reader(buf, str(path))
    r.pos = _HEADER.size
    samples = []
    for _ in range(hdr["count"]):
        n_ev = r.u32("event count")
        script = []
        for _ in range(n_ev):
            onset, dur, cls = struct.unpack("<ffI", r.take(12, "event"))
            script.append(Event(onset, dur, cls))
        mel = r.array("<f4", T * F, "mel").reshape(T, F).astype(np.float32)
        frames = r.array("<f4", T * D_v, "frame features").reshape(T, D_v).astype(np.float32)
        n_tok = r.u32("token count")
        tokens = r.array("<u4", n_tok, "tokens").astype(np.uint32)
        samples.append(TripletSample(mel, frames, tokens, script))
    if r.pos != len(buf):
        raise DataFormatError(f"{path}: {len(buf) - r.pos} trailing bytes", r.pos)
    return samples
