"""Transcription decoders: greedy, prefix beam search, LM-weighted search.

The beam search keeps hypotheses keyed by their collapsed prefix with the
usual blank/non-blank probability split, so paths collapsing to the same
text merge.  A word-level tri-gram language model can be mixed in with
weight ``alpha`` plus a per-word insertion bonus ``beta``; LM scores are
applied whenever a word boundary (whitespace or end of sequence) completes
a word.  All tie-breaking is by lexicographic order of the collapsed
prefix so results are reproducible.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import ctc
from .alphabet import DEFAULT_ALPHABET, SPACE_INDEX, check_prob_matrix

NEG_INF = -math.inf

UNK = "<unk>"
BOS = "<s>"

#: Interpolation weight given to the next-lower order model.
BACKOFF_WEIGHT = 0.4


@dataclass(frozen=True)
class BeamConfig:
    width: int = 1024
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("beam width must be >= 1")


def greedy_decode(P: np.ndarray) -> np.ndarray:
    """Collapse of the per-frame argmax (ties to the lowest class index)."""
    P = check_prob_matrix(P)
    blank = P.shape[1] - 1
    return ctc.collapse(np.argmax(P, axis=1), blank)


class NgramLm:
    """Word-level tri-gram model with interpolated lower-order smoothing.

    Scores interpolate each order with the next lower one at weight 0.4,
    bottoming out in an add-one unigram over the vocabulary plus an
    unknown-word token, so every history yields a properly normalized
    distribution and unseen words keep positive probability.
    """

    ORDER = 3
    VERSION = "lyralign-ngram v1"

    def __init__(self):
        self.unigrams: Counter[str] = Counter()
        self.bigrams: Counter[tuple[str, str]] = Counter()
        self.trigrams: Counter[tuple[str, str, str]] = Counter()
        self.context1: Counter[str] = Counter()
        self.context2: Counter[tuple[str, str]] = Counter()
        self.total = 0

    # -- training ---------------------------------------------------------

    @classmethod
    def train(cls, corpus: list[str]) -> "NgramLm":
        """Count n-grams over whitespace-tokenized, normalized lines."""
        lm = cls()
        seen_any = False
        for line in corpus:
            words = line.split()
            if not words:
                continue
            seen_any = True
            padded = [BOS, BOS] + words
            for w in words:
                lm.unigrams[w] += 1
                lm.total += 1
            for i in range(2, len(padded)):
                lm.bigrams[(padded[i - 1], padded[i])] += 1
                lm.context1[padded[i - 1]] += 1
                lm.trigrams[(padded[i - 2], padded[i - 1], padded[i])] += 1
                lm.context2[(padded[i - 2], padded[i - 1])] += 1
        if not seen_any:
            raise ValueError("empty corpus")
        return lm

    # -- scoring ----------------------------------------------------------

    def _known(self, word: str) -> str:
        return word if word in self.unigrams or word == BOS else UNK

    def prob(self, word: str, history: tuple[str, ...] = ()) -> float:
        """p(word | up to two history words), interpolated."""
        word = self._known(word)
        hist = tuple(self._known(w) for w in history[-2:])
        hist = (BOS,) * (2 - len(hist)) + hist

        vocab_size = len(self.unigrams) + 1  # + <unk>
        p1 = (self.unigrams.get(word, 0) + 1) / (self.total + vocab_size)

        c1 = self.context1.get(hist[1], 0)
        if c1 > 0:
            mle2 = self.bigrams.get((hist[1], word), 0) / c1
            p2 = (1 - BACKOFF_WEIGHT) * mle2 + BACKOFF_WEIGHT * p1
        else:
            p2 = p1

        c2 = self.context2.get(hist, 0)
        if c2 > 0:
            mle3 = self.trigrams.get((hist[0], hist[1], word), 0) / c2
            return (1 - BACKOFF_WEIGHT) * mle3 + BACKOFF_WEIGHT * p2
        return p2

    def logp(self, word: str, history: tuple[str, ...] = ()) -> float:
        return math.log(self.prob(word, history))

    def sentence_logp(self, words: list[str]) -> float:
        total = 0.0
        for i, w in enumerate(words):
            total += self.logp(w, tuple(words[max(0, i - 2):i]))
        return total

    def perplexity(self, lines: list[str]) -> float:
        logp = 0.0
        count = 0
        for line in lines:
            words = line.split()
            logp += self.sentence_logp(words)
            count += len(words)
        if count == 0:
            raise ValueError("no words in evaluation text")
        return math.exp(-logp / count)

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.VERSION + "\n")
            fh.write(f"\\total\t{self.total}\n")
            fh.write("\\1-grams\n")
            for w, c in sorted(self.unigrams.items()):
                fh.write(f"{w}\t{c}\n")
            fh.write("\\2-grams\n")
            for (a, b), c in sorted(self.bigrams.items()):
                fh.write(f"{a} {b}\t{c}\n")
            fh.write("\\3-grams\n")
            for (a, b, w), c in sorted(self.trigrams.items()):
                fh.write(f"{a} {b} {w}\t{c}\n")

    @classmethod
    def load(cls, path) -> "NgramLm":
        lm = cls()
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != cls.VERSION:
                raise ValueError(f"unsupported LM file version: {header!r}")
            section = None
            for raw in fh:
                line = raw.rstrip("\n")
                if not line:
                    continue
                if line.startswith("\\total"):
                    lm.total = int(line.split("\t")[1])
                    continue
                if line.startswith("\\"):
                    section = line
                    continue
                gram, count = line.split("\t")
                count = int(count)
                words = tuple(gram.split(" "))
                if section == "\\1-grams":
                    lm.unigrams[words[0]] = count
                elif section == "\\2-grams":
                    lm.bigrams[words] = count
                    lm.context1[words[0]] += count
                elif section == "\\3-grams":
                    lm.trigrams[words] = count
                    lm.context2[words[:2]] += count
                else:
                    raise ValueError(f"malformed LM file line: {line!r}")
        return lm


def train_lm(corpus: list[str]) -> NgramLm:
    return NgramLm.train(corpus)


# -- prefix beam search ---------------------------------------------------

def _words_of(prefix: tuple[int, ...]) -> list[str]:
    return DEFAULT_ALPHABET.decode(prefix).split() if prefix else []


def _lm_terms(prefix: tuple[int, ...], lm: NgramLm | None,
              space_index: int) -> tuple[float, int]:
    """(cumulative LM log-prob of completed words, completed-word count)."""
    if lm is None:
        return 0.0, _completed_word_count(prefix, space_index)
    text_words = _words_of(prefix)
    # A trailing non-space character means the last word is incomplete.
    if prefix and prefix[-1] != space_index and text_words:
        open_word = text_words.pop()
        del open_word
    logp = 0.0
    for i, w in enumerate(text_words):
        logp += lm.logp(w, tuple(text_words[max(0, i - 2):i]))
    return logp, len(text_words)


def _completed_word_count(prefix: tuple[int, ...], space_index: int) -> int:
    count = 0
    in_word = False
    for c in prefix:
        if c == space_index:
            if in_word:
                count += 1
            in_word = False
        else:
            in_word = True
    return count


def _final_score(prefix: tuple[int, ...], log_p: float, lm: NgramLm | None,
                 cfg: BeamConfig, space_index: int) -> float:
    """Total score with the trailing partial word completed at EOS."""
    lm_logp, nwords = _lm_terms(prefix, lm, space_index)
    words = _words_of(prefix)
    if prefix and prefix[-1] != space_index and words:
        # end-of-sequence completes the open word
        last = words[-1]
        if lm is not None:
            lm_logp += lm.logp(last, tuple(words[max(0, len(words) - 3):-1]))
        nwords += 1
    return log_p + cfg.alpha * lm_logp + cfg.beta * nwords


def _prefix_beam(P: np.ndarray, cfg: BeamConfig,
                 lm: NgramLm | None, space_index: int,
                 return_beams: bool = False):
    T, C = P.shape
    blank = C - 1
    with np.errstate(divide="ignore"):
        logP = np.log(np.asarray(P, dtype=np.float64))

    # prefix -> [log_p_blank, log_p_nonblank, lm_logp, completed_words]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF, 0.0, 0]}
    lm_cache: dict[tuple[int, ...], tuple[float, int]] = {(): (0.0, 0)}

    def lm_info(prefix: tuple[int, ...]) -> tuple[float, int]:
        cached = lm_cache.get(prefix)
        if cached is None:
            cached = _lm_terms(prefix, lm, space_index)
            lm_cache[prefix] = cached
        return cached

    for t in range(T):
        row = logP[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def entry(prefix):
            e = nxt.get(prefix)
            if e is None:
                e = [NEG_INF, NEG_INF]
                nxt[prefix] = e
            return e

        for prefix, (pb, pnb, _, _) in beams.items():
            total = np.logaddexp(pb, pnb)
            last = prefix[-1] if prefix else None
            # stay on the same prefix via blank
            e = entry(prefix)
            e[0] = np.logaddexp(e[0], total + row[blank])
            # repeat the last character within the same run
            if last is not None and pnb != NEG_INF:
                e[1] = np.logaddexp(e[1], pnb + row[last])
            # extend with each character
            for c in range(blank):
                ext = prefix + (c,)
                e2 = entry(ext)
                if c == last:
                    # needs a separating blank, so only from p_blank
                    if pb != NEG_INF:
                        e2[1] = np.logaddexp(e2[1], pb + row[c])
                else:
                    e2[1] = np.logaddexp(e2[1], total + row[c])

        scored = []
        for prefix, (pb, pnb) in nxt.items():
            lm_logp, nwords = lm_info(prefix)
            score = (np.logaddexp(pb, pnb)
                     + cfg.alpha * lm_logp + cfg.beta * nwords)
            scored.append((-score, prefix, pb, pnb, lm_logp, nwords))
        scored.sort(key=lambda item: (item[0], item[1]))
        beams = {prefix: [pb, pnb, lm_logp, nwords]
                 for _, prefix, pb, pnb, lm_logp, nwords in scored[:cfg.width]}

    best = None
    best_key = None
    for prefix, (pb, pnb, _, _) in beams.items():
        score = _final_score(prefix, float(np.logaddexp(pb, pnb)),
                             lm, cfg, space_index)
        key = (-score, prefix)
        if best_key is None or key < best_key:
            best_key = key
            best = prefix
    if return_beams:
        return best, beams
    return best


def beam_search(P: np.ndarray, cfg: BeamConfig | None = None) -> np.ndarray:
    """Acoustic-only prefix beam search (alpha and beta forced to 0)."""
    cfg = cfg or BeamConfig()
    cfg = BeamConfig(width=cfg.width, alpha=0.0, beta=0.0)
    P = check_prob_matrix(P)
    return np.array(_prefix_beam(P, cfg, None, SPACE_INDEX), dtype=np.int64)


def lm_beam_search(P: np.ndarray, lm: NgramLm | None,
                   cfg: BeamConfig | None = None) -> np.ndarray:
    """Beam search scored with an n-gram LM at word boundaries."""
    cfg = cfg or BeamConfig()
    P = check_prob_matrix(P)
    return np.array(_prefix_beam(P, lm=lm, cfg=cfg, space_index=SPACE_INDEX),
                    dtype=np.int64)


def grid_search_lm_weights(dev_set, alphas, betas, lm: NgramLm,
                           width: int = 1024) -> tuple[float, float]:
    """Pick (alpha, beta) minimizing dev-set WER; ties to smaller values.

    ``dev_set`` is a list of ``(P, reference_text)`` pairs.  WER is the
    corpus rate: total word edit distance over total reference words.
    """
    from .metrics import levenshtein

    alphas = sorted(alphas)
    betas = sorted(betas)
    if not alphas or not betas:
        raise ValueError("empty grid")
    if not dev_set:
        raise ValueError("empty dev set")
    refs = [text.split() for _, text in dev_set]
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("dev set references contain no words")

    best = None
    best_pair = None
    for alpha in alphas:
        for beta in betas:
            cfg = BeamConfig(width=width, alpha=alpha, beta=beta)
            errors = 0
            for (P, _), ref in zip(dev_set, refs):
                hyp = DEFAULT_ALPHABET.decode(lm_beam_search(P, lm, cfg))
                errors += levenshtein(hyp.split(), ref)
            wer = errors / total_ref
            if best is None or wer < best:
                best = wer
                best_pair = (alpha, beta)
    return best_pair
