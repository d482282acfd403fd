"""CTC loss core: collapse operator, forward/backward likelihood and gradient.

All probability accumulation happens in the log domain.  Impossible paths
carry the sentinel ``NEG_INF``; ``np.logaddexp`` treats it absorbingly so
no NaNs arise from summing impossible branches.

The functions are generic in the number of classes: the blank is always
the last column of the probability matrix, and target indices must stay
strictly below it.  This makes small sub-alphabet instances (used by the
enumeration oracle) first-class citizens.
"""

from __future__ import annotations

import itertools

import numpy as np

from .alphabet import check_prob_matrix

NEG_INF = -np.inf

#: Guard for the enumeration oracle: at most this many paths.
BRUTE_FORCE_MAX_PATHS = 10**7


def collapse(seq, blank: int) -> np.ndarray:
    """Apply the collapse operator: merge runs, then drop blanks."""
    out = []
    prev = None
    for s in seq:
        s = int(s)
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return np.array(out, dtype=np.int64)


def repeat_count(y) -> int:
    """Number of adjacent equal character pairs in a target."""
    y = np.asarray(y)
    if len(y) < 2:
        return 0
    return int(np.sum(y[:-1] == y[1:]))


def is_feasible(num_frames: int, y) -> bool:
    """CTC feasibility: T must fit the target plus separating blanks."""
    return num_frames >= len(y) + repeat_count(y)


def expand_target(y, blank: int) -> np.ndarray:
    """Blank-expanded target: eps y1 eps y2 ... eps (length 2*O+1)."""
    y = np.asarray(y, dtype=np.int64)
    expanded = np.full(2 * len(y) + 1, blank, dtype=np.int64)
    expanded[1::2] = y
    return expanded


def _check_inputs(P: np.ndarray, y) -> tuple[np.ndarray, np.ndarray, int]:
    P = check_prob_matrix(P)
    blank = P.shape[1] - 1
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("target must be a 1-D index sequence")
    if len(y) and (y.min() < 0 or y.max() >= blank):
        raise ValueError(
            f"target indices must be in [0, {blank}) (blank excluded)")
    return P, y, blank


def _log_probs(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(P)


def _forward(logP: np.ndarray, labels: np.ndarray, blank: int) -> np.ndarray:
    """Forward lattice over the blank-expanded target.

    ``alpha[t, s]`` includes the emission probability at frame ``t``.
    """
    T = logP.shape[0]
    S = len(labels)
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logP[0, labels[0]]
    if S > 1:
        alpha[0, 1] = logP[0, labels[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            acc[2:] = np.where(skip_ok[2:],
                               np.logaddexp(acc[2:], prev[:-2]),
                               acc[2:])
        alpha[t] = acc + logP[t, labels]
    return alpha


def _backward(logP: np.ndarray, labels: np.ndarray, blank: int) -> np.ndarray:
    """Backward lattice; ``beta[t, s]`` excludes the emission at frame ``t``.

    With this convention ``logsumexp(alpha[t] + beta[t])`` equals the total
    log-likelihood at every frame.
    """
    T = logP.shape[0]
    S = len(labels)
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logP[t + 1, labels]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            acc[:-2] = np.where(skip_ok[2:],
                                np.logaddexp(acc[:-2], nxt[2:]),
                                acc[:-2])
        beta[t] = acc
    return beta


def ctc_log_likelihood(P: np.ndarray, y) -> float:
    """Log-likelihood of target ``y`` under frame probabilities ``P``.

    Returns ``NEG_INF`` when no path of length T collapses to ``y``.
    """
    P, y, blank = _check_inputs(P, y)
    T = P.shape[0]
    if T < 1:
        raise ValueError("need at least one frame")
    if not is_feasible(T, y):
        return NEG_INF
    labels = expand_target(y, blank)
    alpha = _forward(_log_probs(P), labels, blank)
    terms = alpha[T - 1, -1:] if len(labels) == 1 else alpha[T - 1, -2:]
    return float(np.logaddexp.reduce(terms))


def ctc_grad(P: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the CTC loss ``-log p(y|x)``.

    Returns ``(grad_P, grad_logits)``: the gradient with respect to the
    probability entries, and with respect to pre-softmax logits whose
    softmax equals ``P`` (the posterior-minus-softmax form used by the
    training loop).

    Raises on infeasible targets.
    """
    P, y, blank = _check_inputs(P, y)
    T, C = P.shape
    if not is_feasible(T, y):
        raise ValueError("infeasible target: likelihood is zero")
    labels = expand_target(y, blank)
    logP = _log_probs(P)
    alpha = _forward(logP, labels, blank)
    beta = _backward(logP, labels, blank)

    log_lik = np.logaddexp.reduce(
        alpha[T - 1, -1:] if len(labels) == 1 else alpha[T - 1, -2:])
    if log_lik == NEG_INF:
        raise ValueError("target has zero probability under P")

    # Per-state contributions; alpha already contains the frame-t emission,
    # so divide it out for the dp/dP form and keep it for the posterior.
    emit = logP[:, labels]                      # (T, S)
    with np.errstate(invalid="ignore"):
        ab = alpha + beta                       # includes emission once
        ab_div = np.where(alpha == NEG_INF, NEG_INF, ab - emit)

    grad_P = np.zeros((T, C))
    gamma = np.zeros((T, C))
    for c in range(C):
        mask = labels == c
        if not mask.any():
            continue
        grad_P[:, c] = -np.exp(
            np.logaddexp.reduce(ab_div[:, mask], axis=1) - log_lik)
        gamma[:, c] = np.exp(
            np.logaddexp.reduce(ab[:, mask], axis=1) - log_lik)
    grad_logits = P - gamma
    return grad_P, grad_logits


def ctc_loss_and_logit_grad(P: np.ndarray, y) -> tuple[float, np.ndarray]:
    """Convenience for training: loss ``-log p`` and its logit gradient."""
    log_lik = ctc_log_likelihood(P, y)
    if log_lik == NEG_INF:
        raise ValueError("infeasible target: likelihood is zero")
    _, grad_logits = ctc_grad(P, y)
    return -log_lik, grad_logits


def brute_force_likelihood(P: np.ndarray, y) -> float:
    """Enumeration oracle: sum path products over all paths collapsing to y.

    Guarded to at most 10^7 paths; intended for tiny instances only.
    """
    P, y, blank = _check_inputs(P, y)
    T, C = P.shape
    if C**T > BRUTE_FORCE_MAX_PATHS:
        raise ValueError(f"instance too large: {C}^{T} paths")
    target = list(int(v) for v in y)
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if list(collapse(path, blank)) != target:
            continue
        prob = 1.0
        for t, c in enumerate(path):
            prob *= P[t, c]
        total += prob
    return total
