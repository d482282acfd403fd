"""Audio ingestion, weak-label training sample generation, inference chunking.

Songs arrive as a PCM WAV plus a JSON-lines annotation file with one
``{"text": ..., "start": ..., "end": ...}`` record per lyrical line.
Training samples are cut by sliding the model's output window across the
song in half-window steps: every lyrical line fully contained in a window
becomes one CTC sample (target + frame slice), and windows overlapping no
line at all become empty-target samples that teach the model to emit
blanks over instrumental sections.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import ctc, net
from .alphabet import normalize_lyrics

TARGET_SAMPLE_RATE = 22050

#: Windowed-sinc taps per polyphase branch.
RESAMPLE_TAPS_PER_PHASE = 64


@dataclass(frozen=True)
class Line:
    text: str
    start: float
    end: float


@dataclass
class Song:
    id: str
    audio: np.ndarray
    lines: list[Line] = field(default_factory=list)
    sample_rate: int = TARGET_SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.audio) / self.sample_rate

    def validate(self) -> None:
        for line in self.lines:
            if not line.start < line.end:
                raise ValueError(
                    f"song {self.id}: line interval {line.start}..{line.end}")
            if line.start < 0 or line.end > self.duration + 1e-6:
                raise ValueError(
                    f"song {self.id}: line outside [0, {self.duration:.2f}]")


@dataclass(frozen=True)
class TrainingSample:
    """One CTC training unit: input chunk position, target, loss slice."""

    song_id: str
    chunk_start_sample: int          # start of the output window in the song
    target: np.ndarray               # character indices, may be empty
    loss_slice: tuple[int, int]      # [start, end) frames within the window


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise ValueError(f"unsupported WAV sample format {data.dtype}")


def load_audio(path, target_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Read a PCM WAV, average channels to mono, resample to 22.05 kHz."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise ValueError(f"cannot read WAV file {path}: {exc}") from exc
    mono = _to_float(data)
    if mono.ndim == 2:
        mono = mono.mean(axis=1)
    elif mono.ndim != 1:
        raise ValueError(f"unsupported channel layout in {path}")
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        up, down = target_rate // g, rate // g
        mono = resample_poly(mono, up, down,
                             padtype="constant",
                             window=("kaiser", 8.0))
    return np.clip(mono, -1.0, 1.0)


def load_annotations(path) -> list[Line]:
    """Parse a JSON-lines annotation file of line-level lyrics timings."""
    lines: list[Line] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
                lines.append(Line(text=str(rec["text"]),
                                  start=float(rec["start"]),
                                  end=float(rec["end"])))
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValueError) as exc:
                raise ValueError(
                    f"{path}:{lineno}: bad annotation record: {exc}") from exc
    return lines


def extract_chunk(audio: np.ndarray, window_start: int,
                  cfg: net.NetConfig) -> np.ndarray:
    """Zero-padded input chunk whose output window starts at window_start."""
    geo = net.compute_geometry(cfg)
    begin = window_start - geo.context_left
    chunk = np.zeros(cfg.input_samples, dtype=np.float64)
    src_lo = max(begin, 0)
    src_hi = min(begin + cfg.input_samples, len(audio))
    if src_hi > src_lo:
        chunk[src_lo - begin:src_hi - begin] = audio[src_lo:src_hi]
    return chunk


def generate_training_samples(song: Song,
                              cfg: net.NetConfig) -> list[TrainingSample]:
    """Half-window-shifted sample generation from line-level annotations.

    Lines longer than the output window can never be contained and are
    discarded outright.  Contained lines yield one sample each; windows
    with no overlapping line yield one empty-target sample.  Targets that
    are CTC-infeasible within their frame slice are dropped with a warning.
    """
    song.validate()
    geo = net.compute_geometry(cfg)
    sr = cfg.sample_rate
    window = cfg.output_samples
    shift = window // 2
    window_secs = window / sr

    if len(song.audio) < cfg.input_samples:
        warnings.warn(
            f"song {song.id} shorter than one input window; zero-padding")

    kept = [ln for ln in song.lines if ln.end - ln.start <= window_secs]
    samples: list[TrainingSample] = []
    start = 0
    while start < max(len(song.audio), 1):
        win_lo = start / sr
        win_hi = (start + window) / sr
        contained = [ln for ln in kept
                     if ln.start >= win_lo and ln.end <= win_hi]
        overlapping = any(ln.start < win_hi and ln.end > win_lo
                          for ln in song.lines)
        if not overlapping:
            samples.append(TrainingSample(
                song.id, start, np.array([], dtype=np.int64),
                (0, geo.output_frames)))
        for ln in contained:
            target = normalize_lyrics(ln.text)
            lo = int((ln.start - win_lo) * sr) // geo.hop
            hi = -(-int((ln.end - win_lo) * sr) // geo.hop)
            lo = max(lo, 0)
            hi = min(hi, geo.output_frames)
            if hi <= lo or not ctc.is_feasible(hi - lo, target):
                warnings.warn(
                    f"song {song.id}: line {ln.text!r} infeasible in its "
                    f"{hi - lo}-frame slice; skipped")
                continue
            samples.append(TrainingSample(song.id, start, target, (lo, hi)))
        start += shift
    return samples


def chunk_for_inference(waveform: np.ndarray,
                        cfg: net.NetConfig) -> tuple[list[np.ndarray], int]:
    """Split a song into input chunks tiling it at output-window steps.

    Returns the padded input chunks plus the number of frames to keep
    after concatenating the per-chunk predictions.
    """
    if len(waveform) == 0:
        raise ValueError("empty waveform")
    geo = net.compute_geometry(cfg)
    n_chunks = -(-len(waveform) // cfg.output_samples)
    chunks = [extract_chunk(waveform, c * cfg.output_samples, cfg)
              for c in range(n_chunks)]
    frames = min(-(-len(waveform) // geo.hop), n_chunks * geo.output_frames)
    return chunks, frames


def song_probabilities(waveform: np.ndarray, params,
                       cfg: net.NetConfig) -> np.ndarray:
    """Concatenated frame/character probabilities for a whole song."""
    chunks, frames = chunk_for_inference(waveform, cfg)
    parts = [net.probabilities(params, cfg, chunk) for chunk in chunks]
    return np.concatenate(parts, axis=0)[:frames]


@dataclass
class DatasetStats:
    line_count: int
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    frac_under_half_window: float | None
    frac_under_window: float | None

    def report(self) -> str:
        out = [f"lines: {self.line_count}"]
        if self.line_count == 0:
            out.append("fraction under half window: N/A")
            out.append("fraction under full window: N/A")
            return "\n".join(out)
        out.append(
            f"fraction under half window: {100 * self.frac_under_half_window:.1f}%")
        out.append(
            f"fraction under full window: {100 * self.frac_under_window:.1f}%")
        for lo, hi, c in zip(self.histogram_edges[:-1],
                             self.histogram_edges[1:],
                             self.histogram_counts):
            out.append(f"{lo:6.2f}s - {hi:6.2f}s  {int(c)}")
        return "\n".join(out)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bin_start_s,bin_end_s,count\n")
            for lo, hi, c in zip(self.histogram_edges[:-1],
                                 self.histogram_edges[1:],
                                 self.histogram_counts):
                fh.write(f"{lo},{hi},{int(c)}\n")


def dataset_stats(songs: list[Song], cfg: net.NetConfig,
                  bin_seconds: float = 1.0) -> DatasetStats:
    """Line-length histogram plus containment fractions.

    Reports the fraction of lines shorter than half the output window and
    shorter than the full window (the two values governing how many lines
    survive half-window-shifted sampling).
    """
    durations = np.array([ln.end - ln.start
                          for song in songs for ln in song.lines])
    window_secs = cfg.output_samples / cfg.sample_rate
    if len(durations) == 0:
        return DatasetStats(0, np.array([0.0]), np.array([]), None, None)
    top = max(float(durations.max()), window_secs) + bin_seconds
    edges = np.arange(0.0, top + bin_seconds, bin_seconds)
    counts, edges = np.histogram(durations, bins=edges)
    return DatasetStats(
        line_count=len(durations),
        histogram_edges=edges,
        histogram_counts=counts,
        frac_under_half_window=float(np.mean(durations <= window_secs / 2)),
        frac_under_window=float(np.mean(durations <= window_secs)),
    )
