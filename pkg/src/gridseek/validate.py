"""Built-in oracle suites behind the CLI's self-check subcommand.

Each suite reruns one of the package's independently derivable checks on its
shipped defaults: closed-form posterior means against one-step denoising,
finite differences against the analytic score, the brute-force ranking
oracle against the exploration score, and finite differences against the
reward model's backward pass. Each returns (name, passed, detail).
"""

from __future__ import annotations

import numpy as np

from gridseek.belief import (
    BeliefConfig,
    ParticleBatch,
    entropy_rank_oracle,
    exploration_score,
)
from gridseek.diffusion import (
    GaussianMixturePrior,
    gmm_log_density,
    gmm_score,
    make_schedule,
    tweedie_denoise,
)
from gridseek.reward import LabeledPatch, RewardNet, deep_layout, default_layout, grad_check

__all__ = ["run_all", "SUITES"]


def check_tweedie(seed: int = 0):
    rng = np.random.default_rng(seed)
    sched = make_schedule(1000)
    worst = 0.0
    for _ in range(50):
        mu = float(rng.normal())
        v = float(rng.uniform(0.05, 2.0))
        tau = int(rng.integers(1, 1001))
        x = rng.normal(size=1)
        prior = GaussianMixturePrior.single([mu], v)
        score_fn = lambda xx, tt: gmm_score(xx, tt, prior, sched)
        abar = sched.alpha_bar[tau - 1]
        s = abar * v + (1.0 - abar)
        expected = (np.sqrt(abar) * v * x + (1.0 - abar) * mu) / s
        got = tweedie_denoise(x, tau, score_fn, sched)
        worst = max(worst, float(abs(got[0] - expected[0])))
    return worst < 1e-9, f"max abs err {worst:.2e} (tol 1e-9)"


def check_score_fd(seed: int = 1):
    rng = np.random.default_rng(seed)
    sched = make_schedule(200)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        k = int(rng.integers(1, 6))
        w = rng.uniform(0.2, 1.0, k)
        w /= w.sum()
        prior = GaussianMixturePrior(
            w, rng.normal(0.0, 2.0, (k, dim)), rng.uniform(0.05, 1.5, k)
        )
        x = rng.normal(0.0, 1.5, dim)
        tau = int(rng.integers(1, 201))
        an = gmm_score(x, tau, prior, sched)
        fd = np.empty(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            fd[i] = (
                gmm_log_density(x + e, tau, prior, sched)
                - gmm_log_density(x - e, tau, prior, sched)
            ) / (2.0 * h)
        rel = np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-6)
        worst = max(worst, float(rel))
    return worst < 1e-6, f"max rel err {worst:.2e} (tol 1e-6)"


def check_entropy_ranking(seed: int = 2):
    rng = np.random.default_rng(seed)
    cfg = BeliefConfig()
    agreed = 0
    total = 200
    for _ in range(total):
        n_b = int(rng.integers(2, 5))
        n_loc = int(rng.integers(2, 17))
        batch = ParticleBatch.of(rng.normal(size=(n_b, n_loc)))
        cands = list(range(n_loc))
        _, vals = entropy_rank_oracle(batch, cands, cfg, return_values=True)
        expl = np.array([exploration_score(batch, q, cfg) for q in cands])
        tied = set(np.flatnonzero(vals >= vals.max() - 1e-9))
        agreed += int(np.argmax(expl)) in tied
    return agreed == total, f"{agreed}/{total} instances agree"


def check_reward_gradients(seed: int = 3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for layout in (default_layout(4), deep_layout(4)):
        net = RewardNet.create(layout, seed=seed)
        data = [
            LabeledPatch(rng.uniform(0, 1, 4), float(rng.integers(0, 2)))
            for _ in range(6)
        ]
        worst = max(worst, grad_check(net, data))
    return worst < 1e-4, f"max rel err {worst:.2e} (tol 1e-4)"


SUITES = (
    ("tweedie-posterior-mean", check_tweedie),
    ("mixture-score-finite-difference", check_score_fd),
    ("entropy-ranking-equivalence", check_entropy_ranking),
    ("reward-gradient-check", check_reward_gradients),
)


def run_all():
    """Run every oracle suite; yields (name, passed, detail)."""
    for name, fn in SUITES:
        passed, detail = fn()
        yield name, passed, detail
