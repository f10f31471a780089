"""Grid-based recursive filtering of the hidden channel state.

The filter maintains a normalized belief over grid cells.  Each update
multiplies the belief by the transition matrix, weights it by the per-cell
Gaussian observation likelihood and renormalizes; the state estimate is the
belief-weighted combination of cell centers pushed ``rho`` steps through
the chain.  Per-update work does not grow with time.

Cells whose kernel parameters coincide share a single observation-covariance
factorization; the factors are built once when the sensors are static.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .channel import (
    ChannelScene,
    ObservationBatch,
    _stable_unique_rows,
    build_obs_covariance,
)
from .grid import GridSpec, reconstruction_matrix
from .markov import TransitionMatrix, transition_power, uniform_belief
from .util import single_thread_blas

__all__ = ["GridFilter", "TrackRecord", "DegenerateLikelihoodError", "brute_force_posterior"]

SIMPLEX_TOL = 1e-12


class DegenerateLikelihoodError(RuntimeError):
    """All cell likelihoods vanished; carries the best log-likelihood seen."""

    def __init__(self, max_log: float):
        super().__init__(f"degenerate likelihood: maximum cell log-likelihood is {max_log!r}")
        self.max_log = max_log


class TrackRecord(NamedTuple):
    t: int
    belief: np.ndarray
    estimate: np.ndarray


def _normalized_update(likelihood: np.ndarray, prior: np.ndarray) -> np.ndarray | None:
    """Posterior weights, or None when the product has no mass left."""
    post = likelihood * prior
    total = post.sum()
    if not np.isfinite(total) or total <= 0.0:
        return None
    return post / total


class GridFilter:
    """Sequential tracking session over a fixed grid, chain and scene.

    Single-owner mutable state: one caller drives ``step``; read-only
    ``estimate`` queries between steps are safe.  With ``use_cache=False``
    the observation-covariance factors are rebuilt on every update, which
    is only useful for verifying cache transparency.
    """

    def __init__(
        self,
        grid: GridSpec,
        transition: TransitionMatrix,
        scene: ChannelScene,
        initial_belief: np.ndarray,
        rho: int = 0,
        use_cache: bool = True,
    ):
        if transition.n_cells != grid.n_cells:
            raise ValueError("transition matrix size does not match the grid")
        if scene.state_map.state_dim_required > grid.ndim:
            raise ValueError("state map binds coordinates beyond the grid dimension")
        if rho < 0:
            raise ValueError("rho must be >= 0")
        belief = np.asarray(initial_belief, dtype=float).copy()
        if belief.shape != (grid.n_cells,):
            raise ValueError("initial belief length must equal the cell count")
        if np.any(belief < 0.0) or abs(belief.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("initial belief must be a probability vector")

        self.grid = grid
        self.transition = transition
        self.scene = scene
        self.rho = int(rho)
        self.X = reconstruction_matrix(grid)
        self.P = transition.matrix
        self.P_rho = transition_power(transition, rho)
        self.belief = belief
        self.initial_belief = belief.copy()
        self.t = -1
        self.reset_events: list[int] = []

        self.mus = self.X[scene.state_map.mu_index]
        thetas = scene.state_map.theta_of(self.X.T)
        self.group_thetas, self.group_index = _stable_unique_rows(thetas)
        self.group_cells = [np.flatnonzero(self.group_index == u) for u in range(len(self.group_thetas))]
        self._use_cache = use_cache and scene.static
        self._cached_factors = self._build_factors(0) if self._use_cache else None

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def reset_count(self) -> int:
        return len(self.reset_events)

    def _build_factors(self, t: int) -> list[tuple[np.ndarray, float]]:
        factors = []
        for theta in self.group_thetas:
            cov = build_obs_covariance(self.scene, t, theta)
            factor = np.linalg.cholesky(cov)
            logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
            factors.append((factor, logdet))
        return factors

    def factors_at(self, t: int) -> list[tuple[np.ndarray, float]]:
        """Cholesky factor and log-determinant of the observation covariance per parameter group."""
        if self._use_cache:
            return self._cached_factors
        return self._build_factors(t)

    def likelihood_vector(self, obs: ObservationBatch) -> np.ndarray:
        """Per-cell observation likelihoods rescaled so the largest entry is 1.

        The rescaling happens in the log domain, so any constant factor in
        the underlying density cancels exactly.
        """
        if obs.n_sensors != self.scene.n_sensors:
            raise ValueError("observation dimension does not match the scene")
        loglam = np.empty(self.n_cells)
        factors = self.factors_at(obs.t)
        for cells, (factor, logdet) in zip(self.group_cells, factors):
            resid = obs.y[:, None] - obs.alpha[:, None] * self.mus[cells][None, :]
            z = solve_triangular(factor, resid, lower=True, check_finite=False)
            loglam[cells] = -0.5 * np.einsum("ij,ij->j", z, z) - 0.5 * logdet
        top = loglam.max()
        if not np.isfinite(top):
            raise DegenerateLikelihoodError(top)
        return np.exp(loglam - top)

    def step(self, obs: ObservationBatch) -> np.ndarray:
        """Advance the belief by one observation; returns a belief snapshot.

        If the likelihood annihilates every cell the prior supports (an
        outlier observation), the belief resets to uniform and the event is
        recorded rather than aborting the run.
        """
        likelihood = self.likelihood_vector(obs)
        prior = self.P @ self.belief
        belief = _normalized_update(likelihood, prior)
        if belief is None:
            warnings.warn(f"belief reset to uniform at t={obs.t}: observation killed all supported cells", stacklevel=2)
            self.reset_events.append(obs.t)
            belief = uniform_belief(self.n_cells)
        if abs(belief.sum() - 1.0) > SIMPLEX_TOL:
            belief = belief / belief.sum()
        self.belief = belief
        self.t = obs.t
        return belief.copy()

    def _propagated_belief(self) -> np.ndarray:
        # rho = 0 keeps P_rho = identity; its matvec is skipped (bitwise no-op).
        return self.P_rho @ self.belief if self.rho else self.belief

    def estimate(self) -> np.ndarray:
        """State estimate ``rho`` steps ahead of the last processed observation."""
        return self.X @ self._propagated_belief()

    def functional_estimate(self, profile: np.ndarray) -> np.ndarray:
        """Estimate of any per-cell profile: column ``l`` holds the functional at center ``l``."""
        profile = np.asarray(profile, dtype=float)
        if profile.shape[-1] != self.n_cells:
            raise ValueError("profile must have one column per cell")
        return profile @ self._propagated_belief()

    def run_tracking(self, observations: Sequence[ObservationBatch], on_record=None) -> list[TrackRecord]:
        """Process time-ordered observations; one record per observation.

        An empty sequence yields the single record available before any
        data: the initial belief and its estimate, at ``t = -1``.  When
        given, ``on_record(session, obs, record)`` runs after each update,
        e.g. to evaluate gain maps at selected timesteps.
        """
        if not len(observations):
            return [TrackRecord(-1, self.belief.copy(), self.estimate())]
        records = []
        last_t = None
        with single_thread_blas():
            for obs in observations:
                if last_t is not None and obs.t <= last_t:
                    raise ValueError("observations must be strictly time-ordered")
                last_t = obs.t
                belief = self.step(obs)
                record = TrackRecord(obs.t, belief, self.estimate())
                records.append(record)
                if on_record is not None:
                    on_record(self, obs, record)
        return records


def _dense_likelihood_table(
    grid: GridSpec, scene: ChannelScene, observations: Sequence[ObservationBatch]
) -> np.ndarray:
    """Likelihood of each observation at each cell via explicit inverse/determinant.

    This is the independent dense route used by the enumeration oracle; each
    row is rescaled by its maximum, a per-timestep constant that cancels in
    any normalized posterior.
    """
    centers = reconstruction_matrix(grid)
    table = np.empty((len(observations), grid.n_cells))
    for k, obs in enumerate(observations):
        for j in range(grid.n_cells):
            x = centers[:, j]
            cov = build_obs_covariance(scene, obs.t, scene.state_map.theta_of(x))
            resid = obs.y - obs.alpha * scene.state_map.mu_of(x)
            quad = resid @ np.linalg.inv(cov) @ resid
            table[k, j] = np.exp(-0.5 * quad) / np.sqrt(np.linalg.det(cov))
        table[k] /= table[k].max()
    return table


def brute_force_posterior(
    grid: GridSpec,
    transition: TransitionMatrix,
    scene: ChannelScene,
    observations: Sequence[ObservationBatch],
    initial_belief: np.ndarray,
    budget: float = 1e6,
) -> np.ndarray:
    """Exact filtering posteriors by exhaustive path enumeration.

    Maintains the full joint weight tensor over cell paths (including the
    pre-observation cell) instead of collapsing it recursively: entry
    ``[j, l_0, ..., l_t]`` is the product of the initial weight, the
    transition probabilities along the path and the likelihood of every
    observation.  Row ``t`` of the result is the marginal of the terminal
    cell given observations up to ``t``.  Refuses runs whose path count
    exceeds ``budget``.
    """
    n_obs = len(observations)
    if n_obs < 1:
        raise ValueError("need at least one observation")
    n = grid.n_cells
    if float(n) ** n_obs > budget:
        raise ValueError(f"path enumeration budget exceeded: {n}^{n_obs} > {budget:g}")
    initial = np.asarray(initial_belief, dtype=float)
    with single_thread_blas():
        table = _dense_likelihood_table(grid, scene, observations)
        jump = transition.matrix.T  # jump[j, i] = P(next = i | current = j)

        joint = initial[:, None] * jump * table[0]
        posteriors = np.empty((n_obs, n))
        for k in range(n_obs):
            if k:
                joint = joint[..., None] * jump * table[k]
            marg = joint.sum(axis=tuple(range(joint.ndim - 1)))
            posteriors[k] = marg / marg.sum()
    return posteriors
