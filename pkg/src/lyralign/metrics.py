"""Alignment and transcription metrics: AE, Perc, WER, CER.

AE is the mean absolute deviation of predicted word start times from the
reference, averaged per song; Perc is the percentage of evaluated time
during which the predicted current-word index matches the reference.
WER/CER are edit distances normalized by reference length.  Corpus
aggregates are means over songs.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .align import WordTiming, WordTimings


def levenshtein(hyp, ref) -> int:
    """Unit-cost edit distance between two sequences."""
    hyp = list(hyp)
    ref = list(ref)
    if not hyp:
        return len(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1,          # deletion of h
                         cur[j - 1] + 1,       # insertion of r
                         prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def cer(hyp: str, ref: str) -> float:
    """Character error rate: edit distance / reference length."""
    if len(ref) == 0:
        raise ValueError("empty reference")
    return levenshtein(hyp, ref) / len(ref)


def wer(hyp_words, ref_words) -> float:
    """Word error rate over token sequences."""
    hyp_words = list(hyp_words)
    ref_words = list(ref_words)
    if not ref_words:
        raise ValueError("empty reference")
    return levenshtein(hyp_words, ref_words) / len(ref_words)


def alignment_error(pred: WordTimings, ref: WordTimings) -> float:
    """Mean |predicted start - reference start| over index-paired words."""
    if len(pred) != len(ref):
        raise ValueError(
            f"word count mismatch: {len(pred)} predicted vs {len(ref)} reference")
    if len(ref) == 0:
        raise ValueError("no words to evaluate")
    return float(np.mean(np.abs(pred.starts() - ref.starts())))


def absolute_start_errors(pred: WordTimings, ref: WordTimings) -> np.ndarray:
    if len(pred) != len(ref):
        raise ValueError("word count mismatch")
    return np.abs(pred.starts() - ref.starts())


def _position_function(timings: WordTimings):
    """Piecewise-constant word index over time.

    Word i is current from its own start until the next word's start; the
    last word ends at its end time.  Outside those bounds the position is
    undefined (None).
    """
    starts = timings.starts()
    last_end = timings.words[-1].end

    def index_at(t: float):
        if t < starts[0] or t >= last_end:
            return None
        return int(np.searchsorted(starts, t, side="right")) - 1

    return index_at, starts, last_end


def perc_correct(pred: WordTimings, ref: WordTimings,
                 span: tuple[float, float] | None = None) -> float:
    """Percentage of span time with matching predicted/reference word index."""
    if len(pred) != len(ref):
        raise ValueError("word count mismatch")
    if len(ref) == 0:
        raise ValueError("no words to evaluate")
    ref_at, ref_starts, ref_last_end = _position_function(ref)
    pred_at, pred_starts, pred_last_end = _position_function(pred)
    if span is None:
        span = (float(ref_starts[0]), float(ref_last_end))
    lo, hi = span
    if hi <= lo:
        raise ValueError("empty evaluation span")

    points = {lo, hi}
    for v in np.concatenate([ref_starts, pred_starts,
                             [ref_last_end, pred_last_end]]):
        if lo < v < hi:
            points.add(float(v))
    points = sorted(points)
    correct = 0.0
    for a, b in zip(points[:-1], points[1:]):
        mid = (a + b) / 2
        if ref_at(mid) is not None and ref_at(mid) == pred_at(mid):
            correct += b - a
    return 100.0 * correct / (hi - lo)


def load_reference_timings(path) -> WordTimings:
    """Read a tab-separated ``word start end`` timing file.

    Non-monotonic starts are real-world annotation jitter: they produce a
    warning, not an error.
    """
    words: list[WordTiming] = []
    jitter = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: malformed line {line!r}")
            try:
                start, end = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad number") from exc
            if words and start < words[-1].start:
                jitter += 1
            words.append(WordTiming(parts[0], start, end))
    if jitter:
        warnings.warn(f"{path}: {jitter} non-monotonic start time(s)")
    return WordTimings(words)


@dataclass
class EvalResult:
    """Per-song metric values plus the corpus mean."""

    song_ids: list[str] = field(default_factory=list)
    per_song: dict[str, dict[str, float]] = field(default_factory=dict)

    def add(self, song_id: str, **values: float) -> None:
        self.song_ids.append(song_id)
        self.per_song[song_id] = dict(values)

    @property
    def song_count(self) -> int:
        return len(self.song_ids)

    def aggregate(self) -> dict[str, float]:
        if not self.song_ids:
            return {}
        keys = self.per_song[self.song_ids[0]].keys()
        return {k: float(np.mean([self.per_song[s][k] for s in self.song_ids]))
                for k in keys}

    def write_csv(self, path) -> None:
        keys = sorted({k for v in self.per_song.values() for k in v})
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["song"] + keys)
            for song in self.song_ids:
                row = self.per_song[song]
                writer.writerow([song] + [row.get(k, "") for k in keys])
            agg = self.aggregate()
            writer.writerow(["AGGREGATE"] + [agg.get(k, "") for k in keys])

    def summary(self) -> str:
        agg = self.aggregate()
        parts = [f"{k}={v:.4g}" for k, v in sorted(agg.items())]
        return f"{self.song_count} song(s): " + ", ".join(parts)
