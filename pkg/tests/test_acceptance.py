"""Acceptance gate: every top-level criterion, one pass/fail line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the verdict lines.
Each criterion is checked at its stated tolerance; a failing criterion
fails its test, it is never silently skipped.
"""

import itertools
import math

import numpy as np
import pytest

import toyworld
from lyralign import align, ctc, datapipe, decode, metrics, net
from lyralign.alphabet import DEFAULT_ALPHABET, TimeGrid, normalize_lyrics
from test_align import brute_force_best_path
from test_ctc import loglik_unchecked, random_prob_matrix
from test_decode import ambiguous_spelling_fixture, brute_force_argmax
from test_net import TINY


def verdict(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"{status}: {name}{suffix}")
    assert ok, f"{name}{suffix}"


def random_feasible_target(rng, T, C):
    return ctc.collapse(rng.integers(0, C, size=T), C - 1)


def test_ctc_oracle_equivalence():
    rng = np.random.default_rng(211)
    worst = 0.0
    count = 0
    for _ in range(200):
        T = int(rng.integers(1, 6))
        C = int(rng.integers(2, 6))
        P = random_prob_matrix(rng, T, C)
        y = random_feasible_target(rng, T, C)
        diff = abs(math.exp(ctc.ctc_log_likelihood(P, y))
                   - ctc.brute_force_likelihood(P, y))
        worst = max(worst, diff)
        count += 1
    for _ in range(30):
        T = int(rng.integers(1, 9))
        P = random_prob_matrix(rng, T, 3)
        y = random_feasible_target(rng, T, 3)
        diff = abs(math.exp(ctc.ctc_log_likelihood(P, y))
                   - ctc.brute_force_likelihood(P, y))
        worst = max(worst, diff)
        count += 1
    verdict("CTC oracle equivalence", worst < 1e-10,
            f"{count} instances, worst abs diff {worst:.2e}")


def test_ctc_total_probability():
    rng = np.random.default_rng(223)
    worst = 0.0
    for T in (1, 2, 3):
        P = random_prob_matrix(rng, T, 3)
        total = 0.0
        for length in range(T + 1):
            for y in itertools.product(range(2), repeat=length):
                ll = ctc.ctc_log_likelihood(P, list(y))
                if ll > ctc.NEG_INF:
                    total += math.exp(ll)
        worst = max(worst, abs(total - 1.0))
    verdict("CTC total probability equals 1",
            worst < 1e-8, f"worst deviation {worst:.2e}")


def test_gradient_checks():
    rng = np.random.default_rng(227)
    h = 1e-6

    # Loss-level: CTC gradient vs central finite differences.
    worst_loss = 0.0
    for _ in range(10):
        T = int(rng.integers(2, 6))
        C = int(rng.integers(2, 5))
        P = random_prob_matrix(rng, T, C)
        y = random_feasible_target(rng, T, C)
        grad_P, _ = ctc.ctc_grad(P, y)
        for t in range(T):
            for c in range(C):
                Pp = P.copy()
                Pp[t, c] += h
                Pm = P.copy()
                Pm[t, c] -= h
                fd = -(loglik_unchecked(Pp, y)
                       - loglik_unchecked(Pm, y)) / (2 * h)
                denom = max(abs(fd), abs(grad_P[t, c]), 1e-8)
                worst_loss = max(worst_loss, abs(grad_P[t, c] - fd) / denom)

    # Network-level: manual backpropagation vs finite differences,
    # float64 toy configuration, sampled parameter coordinates.
    params = net.init_params(TINY, seed=21, dtype=np.float64)
    chunk = rng.normal(size=TINY.input_samples) * 0.1
    target = np.array([1, 3], dtype=np.int64)
    frame_slice = (1, 7)
    _, grads = net.backward(params, TINY, chunk, target, frame_slice)
    worst_net = 0.0
    for key in params:
        flat = params[key].reshape(-1)
        gflat = grads[key].reshape(-1)
        idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = net.slice_loss(params, TINY, chunk, target, frame_slice)
            flat[i] = orig - h
            lm = net.slice_loss(params, TINY, chunk, target, frame_slice)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst_net = max(worst_net, abs(fd - gflat[i]) / denom)

    verdict("Gradient checks (loss-level rel err < 1e-4, "
            "network-level rel err < 1e-3)",
            worst_loss < 1e-4 and worst_net < 1e-3,
            f"loss {worst_loss:.2e}, network {worst_net:.2e}")


def test_forced_alignment_optimality():
    rng = np.random.default_rng(229)
    count = 0
    ok = True
    for _ in range(100):
        T = int(rng.integers(1, 5))
        C = int(rng.integers(2, 5))
        P = random_prob_matrix(rng, T, C)
        y = random_feasible_target(rng, T, C)
        aligned = align.force_align(P, y)
        want = brute_force_best_path(P, y)
        ok &= abs(np.exp(aligned.log_prob) - want) <= 1e-12 * max(want, 1)
        ok &= list(ctc.collapse(aligned.labels, C - 1)) == list(y)
        count += 1
    verdict("Forced-alignment optimality and exact collapse",
            ok and count >= 100, f"{count} instances")


def test_beam_search_exact_at_saturation():
    rng = np.random.default_rng(233)
    ok = True
    for _ in range(50):
        T = int(rng.integers(1, 5))
        C = int(rng.integers(2, 5))
        P = random_prob_matrix(rng, T, C)
        got = tuple(decode.beam_search(P, decode.BeamConfig(width=10**4)))
        ok &= got == brute_force_argmax(P, T)
    verdict("Beam-search exactness at saturation (width 10^4)", ok,
            "50 instances, T <= 4, sub-alphabet <= 3")


def test_full_scale_geometry():
    cfg = net.NetConfig()
    geo = net.compute_geometry(cfg)
    fps = cfg.sample_rate / geo.hop
    ok = geo.hop == 1024 and abs(fps - 21.53) < 0.01
    chunk_ok = True
    for n in (1, 225501, 225502, 3 * 225501, int(4.5 * 225501)):
        chunks, _ = datapipe.chunk_for_inference(np.zeros(n), cfg)
        chunk_ok &= len(chunks) == -(-n // 225501)
    verdict("Full-scale geometry (hop 1024, 21.53 frames/s, "
            "ceil(L/225501) chunks)", ok and chunk_ok,
            f"hop {geo.hop}, {fps:.4f} frames/s")


def test_toy_end_to_end_reproduction(toy_model):
    cfg = toy_model["cfg"]
    geo = toy_model["geo"]
    params = toy_model["params"]
    frame_seconds = geo.hop / cfg.sample_rate

    final_loss = toy_model["result"].log[-1]["train_loss"]
    greedy_ok = True
    worst_ae = 0.0
    grid = TimeGrid(cfg.sample_rate, geo.hop, 0)
    acfg = align.AlignConfig(delay_seconds=0.0, noise_seed=0)
    for song in toy_model["songs"]:
        P = datapipe.song_probabilities(song.audio, params, cfg)
        text = DEFAULT_ALPHABET.decode(decode.greedy_decode(P))
        greedy_ok &= text == song.lines[0].text
        lyrics = normalize_lyrics(song.lines[0].text)
        timings = align.align_probs(P, lyrics, grid, acfg)
        truth = toy_model["truth"][song.id] / cfg.sample_rate
        worst_ae = max(worst_ae, abs(timings.words[0].start - truth))

    verdict("Toy end-to-end reproduction (loss < 0.1, exact greedy, "
            "AE < 2 frames)",
            final_loss < 0.1 and greedy_ok
            and worst_ae < 2 * frame_seconds,
            f"loss {final_loss:.2e}, worst AE {worst_ae / frame_seconds:.2f} "
            "frames")


def test_metric_fixtures():
    ref = align.WordTimings([align.WordTiming("one", 0.0, 0.5),
                             align.WordTiming("two", 1.0, 1.5)])
    shifted = align.WordTimings([align.WordTiming(w.word, w.start + 0.5,
                                                  w.end + 0.5)
                                 for w in ref])
    ok = (metrics.alignment_error(ref, ref) == 0.0
          and metrics.perc_correct(ref, ref) == pytest.approx(100.0)
          and metrics.wer(["one", "two"], ["one", "two"]) == 0.0
          and metrics.cer("onetwo", "onetwo") == 0.0
          and metrics.alignment_error(shifted, ref) == pytest.approx(0.5)
          and metrics.cer("kitten", "sitting") == pytest.approx(3 / 7))
    verdict("Metric fixtures (identity, +0.5 s shift, kitten/sitting)", ok)


def test_full_scale_corpus_results_are_context_only():
    # The reference system's published corpus-level numbers (alignment
    # error 0.35 s / Perc 77.2 on one benchmark, 0.82 s / 70.4 on another;
    # WER 70.9-84.4) required a 44k-song corpus and multi-GPU training.
    # They are not reproducible at desk scale by design; the property
    # suites in this module substitute for them.
    verdict("Full-scale corpus numbers treated as context only", True,
            "substituted by oracle/property suites")


def test_lm_decoding_direction():
    P, lm = ambiguous_spelling_fixture()
    without = DEFAULT_ALPHABET.decode(decode.lm_beam_search(
        P, lm, decode.BeamConfig(width=64, alpha=0.0, beta=0.0)))
    with_lm = DEFAULT_ALPHABET.decode(decode.lm_beam_search(
        P, lm, decode.BeamConfig(width=64, alpha=0.2, beta=0.0)))
    verdict("LM decoding direction (alpha 0.2 fixes ambiguous spelling)",
            without == "gray" and with_lm == "grey",
            f"alpha=0: {without!r}, alpha=0.2: {with_lm!r}")
