"""Forced alignment: Viterbi over the blank-expanded target, word timings.

Given frame/character probabilities and known lyrics, finds the
maximum-probability frame labelling whose collapse equals the lyrics,
then reads word start/end times off the labelled frames.  A small uniform
noise floor is added to the probabilities beforehand so that a character
with all-zero probability cannot zero out every candidate path, and a
constant delay (default 180 ms) is added to all emitted times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ctc
from .alphabet import (BLANK, DEFAULT_ALPHABET, SPACE_INDEX, TimeGrid,
                       check_prob_matrix, normalize_lyrics)


@dataclass(frozen=True)
class AlignConfig:
    delay_seconds: float = 0.180
    noise_low: float = 1e-11
    noise_high: float = 1e-10
    noise_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.noise_low <= self.noise_high):
            raise ValueError("need 0 <= noise_low <= noise_high")


@dataclass(frozen=True)
class AlignedSequence:
    """A length-T frame labelling whose collapse equals the lyrics."""

    labels: np.ndarray
    log_prob: float


@dataclass(frozen=True)
class WordTiming:
    word: str
    start: float
    end: float


@dataclass
class WordTimings:
    words: list[WordTiming] = field(default_factory=list)

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def starts(self) -> np.ndarray:
        return np.array([w.start for w in self.words])

    def ends(self) -> np.ndarray:
        return np.array([w.end for w in self.words])


def inject_noise(P: np.ndarray, cfg: AlignConfig) -> np.ndarray:
    """Add independent uniform noise in [noise_low, noise_high) to P.

    The result is used for argmax path scoring only and is deliberately
    not re-normalized.  Deterministic given ``cfg.noise_seed``.
    """
    P = np.asarray(P, dtype=np.float64)
    if cfg.noise_low == cfg.noise_high == 0.0:
        return P.copy()
    rng = np.random.default_rng(cfg.noise_seed)
    return P + rng.uniform(cfg.noise_low, cfg.noise_high, size=P.shape)


def force_align(P: np.ndarray, y, cfg: AlignConfig | None = None) -> AlignedSequence:
    """Maximum-probability frame labelling that collapses to ``y``.

    Viterbi over the blank-expanded target (2*O+1 states, left-to-right
    with skips between distinct non-blank symbols only), O(T*O) time.
    Ties prefer the earliest emission: during backtracking an equal-scoring
    later lattice state wins, so characters are emitted as early as
    possible and trailing frames fall to the final blank.

    ``P`` is taken as given (already noise-adjusted by the caller);
    ``log_prob`` is the path log-probability under this matrix.
    """
    del cfg  # noise is injected by the caller; kept for signature symmetry
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("P must be 2-D")
    blank = P.shape[1] - 1
    y = np.asarray(y, dtype=np.int64)
    if len(y) and (y.min() < 0 or y.max() >= blank):
        raise ValueError("target indices out of range for this matrix")
    T = P.shape[0]
    if not ctc.is_feasible(T, y):
        raise ValueError(
            f"infeasible: {T} frames cannot carry a target of length "
            f"{len(y)} with {ctc.repeat_count(y)} repeats")

    labels = ctc.expand_target(y, blank)
    S = len(labels)
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    with np.errstate(divide="ignore"):
        logP = np.log(P)

    delta = np.full((T, S), ctc.NEG_INF)
    back = np.zeros((T, S), dtype=np.int64)
    delta[0, 0] = logP[0, labels[0]]
    if S > 1:
        delta[0, 1] = logP[0, labels[1]]
    back[0, :] = np.arange(S)
    for t in range(1, T):
        prev = delta[t - 1]
        # Preference order on ties: stay (s), then s-1, then s-2; staying
        # means the state was entered earlier, i.e. earliest emission.
        best = prev.copy()
        argbest = np.arange(S)
        cand = np.full(S, ctc.NEG_INF)
        cand[1:] = prev[:-1]
        better = cand > best
        best = np.where(better, cand, best)
        argbest = np.where(better, np.arange(S) - 1, argbest)
        if S > 2:
            cand = np.full(S, ctc.NEG_INF)
            cand[2:] = np.where(skip_ok[2:], prev[:-2], ctc.NEG_INF)
            better = cand > best
            best = np.where(better, cand, best)
            argbest = np.where(better, np.arange(S) - 2, argbest)
        delta[t] = best + logP[t, labels]
        back[t] = argbest

    if S == 1:
        state = 0
    else:
        # Prefer the final blank on ties (last character is not stretched).
        state = S - 1 if delta[T - 1, S - 1] >= delta[T - 1, S - 2] else S - 2
    log_prob = delta[T - 1, state]
    if log_prob == ctc.NEG_INF:
        raise ValueError("target has zero probability under P")

    states = np.zeros(T, dtype=np.int64)
    states[T - 1] = state
    for t in range(T - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return AlignedSequence(labels=labels[states], log_prob=float(log_prob))


def timings_from_path(aligned: AlignedSequence, lyrics, grid: TimeGrid,
                      cfg: AlignConfig, blank: int = BLANK) -> WordTimings:
    """Word start/end times from an aligned frame labelling.

    Word start = start time of the first frame emitting the word's first
    character; word end = start time of the last frame emitting any of the
    word's characters; both shifted by the configured delay.
    """
    lyrics = np.asarray(lyrics, dtype=np.int64)
    labels = np.asarray(aligned.labels)
    blank_idx = blank
    collapsed = ctc.collapse(labels, blank_idx)
    if list(collapsed) != list(lyrics):
        raise ValueError("aligned path does not collapse to the lyrics")

    # Runs of identical labels; each non-blank run is one emitted character.
    emissions = []  # (char_index, first_frame, last_frame)
    t = 0
    T = len(labels)
    while t < T:
        u = t
        while u + 1 < T and labels[u + 1] == labels[t]:
            u += 1
        if labels[t] != blank_idx:
            emissions.append((int(labels[t]), t, u))
        t = u + 1

    words: list[WordTiming] = []
    delay = cfg.delay_seconds
    current_chars: list[int] = []
    start_frame = end_frame = None
    for char, first, last in emissions:
        if char == SPACE_INDEX:
            if current_chars:
                words.append(WordTiming(
                    DEFAULT_ALPHABET.decode(current_chars),
                    grid.frame_to_time(start_frame) + delay,
                    grid.frame_to_time(end_frame) + delay))
                current_chars = []
            start_frame = end_frame = None
            continue
        if not current_chars:
            start_frame = first
        current_chars.append(char)
        end_frame = last
    if current_chars:
        words.append(WordTiming(
            DEFAULT_ALPHABET.decode(current_chars),
            grid.frame_to_time(start_frame) + delay,
            grid.frame_to_time(end_frame) + delay))
    return WordTimings(words)


def align_probs(P: np.ndarray, lyrics, grid: TimeGrid,
                cfg: AlignConfig) -> WordTimings:
    """Noise-inject, force-align and extract timings from a full-song P."""
    check_prob_matrix(P)
    noisy = inject_noise(P, cfg)
    aligned = force_align(noisy, lyrics)
    return timings_from_path(aligned, lyrics, grid, cfg)


def align_song(audio: np.ndarray, lyrics_text: str, params, net_cfg,
               cfg: AlignConfig | None = None) -> WordTimings:
    """End-to-end alignment: chunked inference, noise, Viterbi, timings.

    Times are clamped into [0, song duration] after the delay is applied.
    """
    from . import datapipe, net  # local import to avoid a cycle

    cfg = cfg or AlignConfig()
    lyrics = normalize_lyrics(lyrics_text)
    if len(lyrics) == 0:
        return WordTimings([])
    P = datapipe.song_probabilities(audio, params, net_cfg)
    geo = net.compute_geometry(net_cfg)
    grid = TimeGrid(net_cfg.sample_rate, geo.hop, 0)
    timings = align_probs(P, lyrics, grid, cfg)
    duration = len(audio) / net_cfg.sample_rate
    clamped = [WordTiming(w.word,
                          min(max(w.start, 0.0), duration),
                          min(max(w.end, 0.0), duration))
               for w in timings]
    return WordTimings(clamped)


def write_timing_file(timings: WordTimings, path) -> None:
    """One line per word: ``word<TAB>start<TAB>end`` in decimal seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        for w in timings:
            fh.write(f"{w.word}\t{w.start:.3f}\t{w.end:.3f}\n")
