import numpy as np
import pytest

from covid_acoustics.model import Dims, NetworkParams, forward


def mann_whitney_auc(scores, labels):
    """Probability a random positive outscores a random negative, ties count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def brute_force_rates(scores, labels, thresholds):
    """Sensitivity and specificity at each threshold by direct recount."""
    sens, spec = [], []
    for t in thresholds:
        tp = fn = tn = fp = 0
        for s, y in zip(scores, labels):
            predicted = s >= t
            if y == 1:
                tp += predicted
                fn += not predicted
            else:
                fp += predicted
                tn += not predicted
        sens.append(tp / (tp + fn))
        spec.append(tn / (tn + fp))
    return np.array(sens), np.array(spec)


def random_score_set(rng, n_min=5, n_max=50):
    n = int(rng.integers(n_min, n_max + 1))
    while True:
        labels = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
        if 0 < labels.sum() < n:
            break
    # mix of continuous and coarse scores so ties occur
    scores = rng.random(n)
    if rng.random() < 0.3:
        scores = np.round(scores, 1)
    return scores, labels


GC_DIMS = Dims(6, 8, 8)


def grad_check_case(seed):
    """Random shrunk network with the head bias set so the logit is 0 at the input."""
    rng = np.random.default_rng(seed)
    p = NetworkParams(GC_DIMS)
    for name in p.names():
        v = p[name]
        if name == "head.w":
            v[...] = rng.choice([-1, 1], v.shape) * rng.uniform(2, 4, v.shape)
        else:
            v[...] = rng.uniform(-1, 1, v.shape)
    x = rng.standard_normal((6, 5))
    _, cache = forward(p, x)
    p["head.b"][...] -= cache.logit[0]
    return p, x, int(rng.random() < 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
