"""Sequential channel-gain prediction at arbitrary spatial points.

For the filtering horizon (``rho = 0``) the predicted gain at a query point
is the belief-weighted average, over grid cells, of the Gaussian
conditional mean of the gain given that cell's state and the current
observations.  For ``rho >= 1`` the observation carries no extra
information beyond the propagated state belief, so the prediction reduces
to the query's path-loss coefficient times the predicted path-loss
exponent.

A gain map evaluates many query points against one observation: the
per-cell covariance solves are done once and shared across queries, so
only the query-to-sensor cross-covariances vary per point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .channel import (
    ObservationBatch,
    build_obs_covariance,
    cross_covariance,
    kernel_eval,
    point_path_loss,
)
from .filtering import GridFilter
from .markov import transition_power
from .util import single_thread_blas

__all__ = ["QuerySpec", "kriging_mean", "gain_profile", "predict_gain", "predict_gain_map"]


@dataclass(frozen=True)
class QuerySpec:
    """A batch of spatial query points and the prediction horizon."""

    points: np.ndarray
    rho: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"query points must have shape (Q >= 1, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("query points must be finite")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def kriging_mean(x, obs: ObservationBatch, query, scene) -> float:
    """Conditional mean of the gain at ``query`` given state ``x`` and observations.

    Reference single-point route: factorizes the observation covariance of
    this one state and solves against the innovation (never an explicit
    inverse).
    """
    x = np.asarray(x, dtype=float)
    theta = scene.state_map.theta_of(x)
    mu = float(scene.state_map.mu_of(x))
    alpha_q = float(point_path_loss(scene.ref_pos, np.asarray(query, dtype=float)[None, :], label="query point")[0])
    cov = build_obs_covariance(scene, obs.t, theta)
    factor = np.linalg.cholesky(cov)
    cross = cross_covariance(scene, obs.t, query, theta)
    innovation = obs.y - obs.alpha * mu
    return alpha_q * mu + float(cross @ cho_solve((factor, True), innovation, check_finite=False))


def _cell_solves(session: GridFilter, obs: ObservationBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per parameter group, the covariance solves against ``y`` and ``alpha``.

    The cell residual is affine in the cell's path-loss exponent, so solving
    for ``y`` and ``alpha`` once per group covers every cell and every query.
    """
    n_groups = len(session.group_thetas)
    v_y = np.empty((n_groups, obs.n_sensors))
    v_alpha = np.empty_like(v_y)
    for u, (factor, _) in enumerate(session.factors_at(obs.t)):
        key = (factor, True)
        v_y[u] = cho_solve(key, obs.y, check_finite=False)
        v_alpha[u] = cho_solve(key, obs.alpha, check_finite=False)
    return v_y, v_alpha


def _gain_profile(session: GridFilter, obs: ObservationBatch, query, solves) -> np.ndarray:
    """Conditional gain mean at ``query`` for every grid cell, from shared solves."""
    scene = session.scene
    alpha_q = float(point_path_loss(scene.ref_pos, np.asarray(query, dtype=float)[None, :], label="query point")[0])
    d = np.linalg.norm(scene.sensors_at(obs.t) - np.asarray(query, dtype=float), axis=-1)
    cross = kernel_eval(scene.kernel, d[None, :], session.group_thetas[:, None, :])
    v_y, v_alpha = solves
    s_y = np.einsum("un,un->u", cross, v_y)[session.group_index]
    s_alpha = np.einsum("un,un->u", cross, v_alpha)[session.group_index]
    mu = session.mus
    return alpha_q * mu + (s_y - mu * s_alpha)


def gain_profile(session: GridFilter, obs: ObservationBatch, query) -> np.ndarray:
    """Conditional gain mean at ``query`` evaluated at every reconstruction point."""
    if obs.n_sensors != session.scene.n_sensors:
        raise ValueError("observation dimension does not match the scene")
    with single_thread_blas():
        return _gain_profile(session, obs, query, _cell_solves(session, obs))


def _propagated_estimate(session: GridFilter, rho: int) -> np.ndarray:
    if rho == session.rho:
        return session.estimate()
    return session.X @ (transition_power(session.transition, rho) @ session.belief)


def predict_gain(session: GridFilter, obs: ObservationBatch, query, rho: int | None = None) -> float:
    """Predicted gain at ``query``, ``rho`` steps past the last observation.

    ``rho = 0`` averages the per-cell conditional means under the current
    belief; ``rho >= 1`` uses only the propagated state estimate (the
    current observation is conditionally irrelevant at future times).
    """
    rho = session.rho if rho is None else int(rho)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if rho == 0:
        with single_thread_blas():
            return float(_gain_profile(session, obs, query, _cell_solves(session, obs)) @ session.belief)
    alpha_q = float(point_path_loss(session.scene.ref_pos, np.asarray(query, dtype=float)[None, :], label="query point")[0])
    estimate = _propagated_estimate(session, rho)
    return float(alpha_q * estimate[session.scene.state_map.mu_index])


def predict_gain_map(session: GridFilter, obs: ObservationBatch, queries: QuerySpec) -> np.ndarray:
    """Predicted gain at every query point of a :class:`QuerySpec`."""
    if obs.n_sensors != session.scene.n_sensors:
        raise ValueError("observation dimension does not match the scene")
    alpha_q = point_path_loss(session.scene.ref_pos, queries.points, label="query point")
    if queries.rho == 0:
        with single_thread_blas():
            solves = _cell_solves(session, obs)
            return np.array(
                [_gain_profile(session, obs, q, solves) @ session.belief for q in queries.points]
            )
    estimate = _propagated_estimate(session, queries.rho)
    return alpha_q * estimate[session.scene.state_map.mu_index]
