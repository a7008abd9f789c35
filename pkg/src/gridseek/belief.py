"""Belief quantities computed from a batch of denoised particles.

The batch's one-step denoised means define a mixture of isotropic Gaussians
over the hidden scene. Candidate measurement locations are ranked through
three per-location quantities built from pairwise particle deviations:

* exploration score: summed squared disagreement over ordered particle
  pairs, large where the belief is uncertain;
* likelihood score: summed Gaussian consensus kernel over ordered pairs,
  in (0, n_b^2], maximal when all particles agree;
* exploitation score: likelihood score times the summed reward-model
  output over the particles' predicted patches.

A location may be a single cell index or a set of cell indices (block
queries); per-location values aggregate by summing squared deviations over
the set. The batch-level ``marginal_entropy`` follows the printed ranking
surrogate with a positive exponent in the consensus kernel; it grows with
particle spread and is not a literal mixture entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ParticleBatch",
    "BeliefConfig",
    "ScoreField",
    "marginal_entropy",
    "exploration_score",
    "likelihood_score",
    "exploitation_score",
    "entropy_rank_oracle",
    "score_field",
]


class SizeLimitError(ValueError):
    """Raised when the brute-force oracle is asked for a non-toy instance."""


@dataclass
class ParticleBatch:
    """Particle states plus their denoised means at reverse step tau."""

    particles: np.ndarray
    denoised: np.ndarray
    tau: int = 0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.denoised = np.asarray(self.denoised, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape != self.denoised.shape:
            raise ValueError("particles and denoised must share shape (n_b, dim)")
        if self.n_b < 2:
            raise ValueError("need at least 2 particles for pairwise scores")

    @classmethod
    def of(cls, denoised, tau: int = 0) -> "ParticleBatch":
        denoised = np.asarray(denoised, dtype=float)
        return cls(denoised.copy(), denoised, tau)

    @property
    def n_b(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


@dataclass
class BeliefConfig:
    """Belief-mixture variance and component weights (uniform by default).

    sigma_x2 only rescales scores; min-max normalization downstream removes
    the dependence, so the default of 1.0 is rarely worth changing. Weights
    enter the marginal entropy only; pairwise scores assume equal weights.
    """

    sigma_x2: float = 1.0
    weights: np.ndarray | None = None

    def __post_init__(self):
        if not (self.sigma_x2 > 0.0):
            raise ValueError(f"sigma_x2 must be positive, got {self.sigma_x2}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("weights must be non-negative and sum to 1")
            self.weights = w

    def weights_for(self, n_b: int) -> np.ndarray:
        if self.weights is None:
            return np.full(n_b, 1.0 / n_b)
        if self.weights.shape != (n_b,):
            raise ValueError("weights length does not match batch size")
        return self.weights


@dataclass
class ScoreField:
    """Per-location score components over the candidate locations."""

    locations: list
    exploration: np.ndarray
    likelihood: np.ndarray
    reward: np.ndarray
    exploitation: np.ndarray
    combined: np.ndarray | None = field(default=None)

    def csv_rows(self):
        combined = self.combined
        for i, loc in enumerate(self.locations):
            yield (
                loc,
                float(self.exploration[i]),
                float(self.likelihood[i]),
                float(self.reward[i]),
                float(self.exploitation[i]),
                float(combined[i]) if combined is not None else float("nan"),
            )

    def write_csv(self, fh) -> None:
        fh.write("location,expl,likeli,reward,exploit,combined\n")
        for loc, e, l, r, x, c in self.csv_rows():
            fh.write(f"{loc},{e!r},{l!r},{r!r},{x!r},{c!r}\n")


def _coords(location, dim: int) -> np.ndarray:
    coords = np.atleast_1d(np.asarray(location, dtype=int))
    if coords.size == 0:
        raise IndexError("empty coordinate set")
    if coords.min() < 0 or coords.max() >= dim:
        raise IndexError(f"location {location} outside 0..{dim - 1}")
    return coords


def _pair_sq(batch: ParticleBatch, location) -> np.ndarray:
    """Squared deviation summed over the location's cells, per ordered pair."""
    vals = batch.denoised[:, _coords(location, batch.dim)]
    diff = vals[:, None, :] - vals[None, :, :]
    return np.sum(diff * diff, axis=-1)


def marginal_entropy(batch: ParticleBatch, cfg: BeliefConfig) -> float:
    """Batch-level ranking surrogate: sum_i a_i log sum_j a_j exp(d_ij)."""
    w = cfg.weights_for(batch.n_b)
    diff = batch.denoised[:, None, :] - batch.denoised[None, :, :]
    d = np.sum(diff * diff, axis=-1) / (2.0 * cfg.sigma_x2)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    terms = logw[None, :] + d
    m = terms.max(axis=1, keepdims=True)
    inner = np.squeeze(m, 1) + np.log(np.sum(np.exp(terms - m), axis=1))
    return float(np.dot(w, inner))


def exploration_score(batch: ParticleBatch, location, cfg: BeliefConfig) -> float:
    """Pairwise disagreement at the location; zero only at full consensus."""
    return float(np.sum(_pair_sq(batch, location)) / (2.0 * cfg.sigma_x2))


def likelihood_score(batch: ParticleBatch, location, cfg: BeliefConfig) -> float:
    """Pairwise consensus kernel at the location, in (0, n_b^2]."""
    return float(np.sum(np.exp(-_pair_sq(batch, location) / (2.0 * cfg.sigma_x2))))


def exploitation_score(
    batch: ParticleBatch, location, cfg: BeliefConfig, reward_fn: Callable
) -> float:
    """Likelihood score times the summed reward over predicted patches.

    ``reward_fn`` receives the (n_b, cells) matrix of predicted contents at
    the location and returns one probability in [0, 1] per particle.
    """
    patches = batch.denoised[:, _coords(location, batch.dim)]
    rewards = np.asarray(reward_fn(patches), dtype=float)
    return likelihood_score(batch, location, cfg) * float(rewards.sum())


def entropy_rank_oracle(
    batch: ParticleBatch,
    candidates: Sequence,
    cfg: BeliefConfig,
    return_values: bool = False,
):
    """Brute-force ranking of candidates by the per-location belief objective.

    Walks the objective exactly as the pairwise decomposition prescribes:
    equal particle weights, one log(exp(.)) term per ordered particle pair,
    restricted to the candidate's own cells. Test-only; guarded to toy sizes
    (n_b <= 4, <= 16 scalar candidates).
    """
    if batch.n_b > 4 or len(candidates) > 16:
        raise SizeLimitError("oracle limited to n_b <= 4 and <= 16 candidates")
    values = []
    for cand in candidates:
        coords = _coords(cand, batch.dim)
        if coords.size != 1:
            raise SizeLimitError("oracle limited to scalar (single-cell) candidates")
        total = 0.0
        for i in range(batch.n_b):
            for j in range(batch.n_b):
                dev = batch.denoised[i, coords[0]] - batch.denoised[j, coords[0]]
                total += math.log(math.exp(dev * dev / (2.0 * cfg.sigma_x2)))
        values.append(total)
    best = int(np.argmax(values))
    if return_values:
        return candidates[best], np.asarray(values)
    return candidates[best]


def score_field(
    batch: ParticleBatch,
    candidates: Sequence,
    coord_sets: np.ndarray,
    cfg: BeliefConfig,
    reward_fn: Callable | None = None,
) -> ScoreField:
    """Vectorized per-location scores for all candidates at once.

    ``coord_sets`` is an (L, cells) int array, one row of cell indices per
    candidate. With no reward_fn the reward column is zero (and so is the
    exploitation column).
    """
    coord_sets = np.asarray(coord_sets, dtype=int)
    if coord_sets.ndim != 2 or coord_sets.shape[0] != len(candidates):
        raise ValueError("coord_sets must be (n_candidates, cells)")
    if coord_sets.size and (coord_sets.min() < 0 or coord_sets.max() >= batch.dim):
        raise IndexError("coordinate set outside the state dimension")

    vals = batch.denoised[:, coord_sets]  # (n_b, L, cells)
    diff = vals[:, None, :, :] - vals[None, :, :, :]
    pair_sq = np.sum(diff * diff, axis=-1)  # (n_b, n_b, L)
    expl = pair_sq.sum(axis=(0, 1)) / (2.0 * cfg.sigma_x2)
    likeli = np.exp(-pair_sq / (2.0 * cfg.sigma_x2)).sum(axis=(0, 1))

    if reward_fn is None:
        reward = np.zeros(len(candidates))
    else:
        n_b, n_loc, cells = vals.shape
        flat = vals.transpose(1, 0, 2).reshape(n_loc * n_b, cells)
        preds = np.asarray(reward_fn(flat), dtype=float).reshape(n_loc, n_b)
        reward = preds.sum(axis=1)

    return ScoreField(
        locations=list(candidates),
        exploration=expl,
        likelihood=likeli,
        reward=reward,
        exploitation=likeli * reward,
    )
