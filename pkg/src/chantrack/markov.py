"""Hidden-state dynamics and Monte-Carlo estimation of quantized transition matrices.

A :class:`StateDynamics` bundles a stationary transition mapping
``x_next = step(x, w)`` with white driving noise and an initial law.  Two
estimators turn such dynamics into a column-stochastic transition matrix
over the cells of a :class:`~chantrack.grid.GridSpec`:

* ``estimate_transition_markovian`` re-seeds the chain at every cell center
  and quantizes one-step images (requires the transition mapping),
* ``estimate_transition_marginal`` quantizes long trajectories of the true
  state and counts cell-to-cell transitions (needs realizations only).

Noise draws use per-cell / per-path sub-streams spawned from the caller's
generator, so a parallel implementation over cells or paths would reproduce
the sequential result bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .grid import GridSpec, cell_index, reconstruction_matrix
from .util import as_rng

__all__ = [
    "StateDynamics",
    "TransitionMatrix",
    "coupled_tanh_dynamics",
    "finite_chain_dynamics",
    "estimate_transition_markovian",
    "estimate_transition_marginal",
    "initial_belief",
    "one_hot_belief",
    "uniform_belief",
    "transition_power",
    "simulate_trajectory",
]

COLUMN_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateDynamics:
    """Stationary Markov dynamics ``x_next = step(x, w)`` with white noise.

    ``step`` must be a pure function, deterministic given ``(x, w)`` and
    vectorized over leading axes: it receives states of shape ``(..., dim)``
    together with noise draws of shape ``(...)`` (or ``(..., noise_dim)``)
    and returns states of shape ``(..., dim)``.  ``noise_sampler(rng, size)``
    draws i.i.d. noise with that shape convention.  ``initial`` is either a
    fixed state vector or a sampler ``rng -> state``.
    """

    dim: int
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise_sampler: Callable[[np.random.Generator, Union[int, tuple]], np.ndarray]
    initial: Union[np.ndarray, Callable[[np.random.Generator], np.ndarray]]

    @property
    def deterministic_initial(self) -> bool:
        return not callable(self.initial)

    def initial_state(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if callable(self.initial):
            if rng is None:
                raise ValueError("random initial law requires an rng")
            return np.asarray(self.initial(rng), dtype=float)
        return np.asarray(self.initial, dtype=float).copy()


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic cell transition matrix: ``matrix[i, j] = P(next=i | current=j)``."""

    matrix: np.ndarray
    mode: str
    patched_columns: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {m.shape}")
        if self.mode not in ("markovian", "marginal"):
            raise ValueError(f"unknown quantization mode {self.mode!r}")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("transition entries must lie in [0, 1]")
        colsum_err = np.max(np.abs(m.sum(axis=0) - 1.0))
        if colsum_err > COLUMN_SUM_TOL:
            raise ValueError(f"columns must sum to 1 within {COLUMN_SUM_TOL}, max error {colsum_err:.3e}")
        object.__setattr__(self, "matrix", m)

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[0]


def coupled_tanh_dynamics(gamma: float = 1.6, initial=(2.0, 25.3)) -> StateDynamics:
    """Built-in two-dimensional benchmark dynamics.

    The first coordinate (the path-loss exponent) drifts slowly inside
    [0, 4]; the second (the shadowing power) oscillates rapidly inside
    [25, 25.6].  Both updates consume the *same* scalar noise draw per step,
    a standard normal hard-limited to [-1, 1], which couples the two
    coordinates strongly.
    """
    g = float(gamma)

    def step(x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        x1 = x[..., 0]
        x2 = x[..., 1]
        n1 = np.tanh(g * (x1 - 2.0)) + w + 2.0
        n2 = 0.3 * np.abs(np.tanh(np.sin(g * x2 * w) + x2 * w) + w) + 25.0
        return np.stack([n1, n2], axis=-1)

    def noise(rng, size):
        return np.clip(rng.standard_normal(size), -1.0, 1.0)

    return StateDynamics(dim=2, step=step, noise_sampler=noise, initial=np.asarray(initial, dtype=float))


def finite_chain_dynamics(points, matrix, initial_index: int = 0) -> StateDynamics:
    """A finite Markov chain embedded at the given state-space points.

    ``points`` has one chain state per row; ``matrix`` is the column-stochastic
    transition matrix between them.  ``step`` snaps its input to the nearest
    point, then jumps by inverting the column CDF at a uniform noise draw.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array with one state per row")
    p = np.asarray(matrix, dtype=float)
    if p.shape != (len(pts), len(pts)):
        raise ValueError("matrix shape must match the number of points")
    if np.max(np.abs(p.sum(axis=0) - 1.0)) > 1e-9:
        raise ValueError("matrix columns must sum to 1")
    cdf_rows = np.cumsum(p, axis=0).T  # row j = CDF of the jump law out of state j

    def step(x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        d2 = ((x[..., None, :] - pts) ** 2).sum(axis=-1)
        cur = np.argmin(d2, axis=-1)
        nxt = np.clip((cdf_rows[cur] < w[..., None]).sum(axis=-1), 0, len(pts) - 1)
        return pts[nxt]

    def noise(rng, size):
        return rng.random(size)

    return StateDynamics(dim=pts.shape[1], step=step, noise_sampler=noise, initial=pts[initial_index].copy())


def estimate_transition_markovian(
    dyn: StateDynamics,
    grid: GridSpec,
    samples_per_cell: int = 10_000,
    rng=None,
) -> TransitionMatrix:
    """Estimate the transition matrix of the chain re-seeded at cell centers.

    Column ``j`` is the empirical distribution of the quantized one-step
    image of cell center ``j`` over ``samples_per_cell`` independent noise
    draws.  The source state is always the reconstruction point itself.
    """
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    rng = as_rng(rng)
    centers = reconstruction_matrix(grid)
    n = grid.n_cells
    cols = np.empty((n, n))
    for j, sub in enumerate(rng.spawn(n)):
        w = dyn.noise_sampler(sub, samples_per_cell)
        src = np.broadcast_to(centers[:, j], (samples_per_cell, grid.ndim))
        nxt = dyn.step(src, w)
        counts = np.bincount(cell_index(grid, nxt), minlength=n)
        cols[:, j] = counts / samples_per_cell
    cols /= cols.sum(axis=0)
    return TransitionMatrix(cols, mode="markovian")


def estimate_transition_marginal(
    dyn: StateDynamics,
    grid: GridSpec,
    n_paths: int = 100,
    path_length: int = 10_000,
    rng=None,
) -> TransitionMatrix:
    """Estimate the transition matrix of the quantized true-state trajectory.

    Simulates ``n_paths`` independent trajectories of ``path_length`` states,
    quantizes them, and normalizes the cell-to-cell transition counts.
    Columns of never-visited cells are patched with the uniform distribution;
    their count is stored on the result and reported as a warning.
    """
    if n_paths < 1 or path_length < 2:
        raise ValueError("need n_paths >= 1 and path_length >= 2")
    rng = as_rng(rng)
    n = grid.n_cells
    states = np.empty((n_paths, dyn.dim))
    noises = []
    for p, sub in enumerate(rng.spawn(n_paths)):
        states[p] = dyn.initial_state(sub)
        noises.append(dyn.noise_sampler(sub, path_length - 1))
    noises = np.stack(noises)

    idx = np.empty((n_paths, path_length), dtype=np.int64)
    idx[:, 0] = cell_index(grid, states)
    for t in range(path_length - 1):
        states = dyn.step(states, noises[:, t])
        idx[:, t + 1] = cell_index(grid, states)

    counts = np.zeros((n, n))
    np.add.at(counts, (idx[:, 1:].ravel(), idx[:, :-1].ravel()), 1.0)
    visits = counts.sum(axis=0)
    unvisited = visits == 0
    patched = int(unvisited.sum())
    if patched:
        warnings.warn(
            f"marginal estimation left {patched}/{n} cells unvisited; their columns were patched uniform",
            stacklevel=2,
        )
        counts[:, unvisited] = 1.0
        visits = counts.sum(axis=0)
    return TransitionMatrix(counts / visits, mode="marginal", patched_columns=patched)


def one_hot_belief(n_cells: int, l: int) -> np.ndarray:
    b = np.zeros(n_cells)
    b[l] = 1.0
    return b


def uniform_belief(n_cells: int) -> np.ndarray:
    return np.full(n_cells, 1.0 / n_cells)


def initial_belief(dyn: StateDynamics, grid: GridSpec, n_samples: int = 10_000, rng=None) -> np.ndarray:
    """Belief over cells induced by the initial law of the dynamics.

    A deterministic initial state yields an exact one-hot vector; otherwise
    the belief is the empirical mean of one-hot embeddings of ``n_samples``
    sampled initial states.
    """
    if dyn.deterministic_initial:
        return one_hot_belief(grid.n_cells, cell_index(grid, dyn.initial_state()))
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = as_rng(rng)
    draws = np.stack([dyn.initial_state(rng) for _ in range(n_samples)])
    counts = np.bincount(cell_index(grid, draws), minlength=grid.n_cells)
    return counts / n_samples


def transition_power(transition: TransitionMatrix | np.ndarray, rho: int) -> np.ndarray:
    """``rho``-step transition matrix; the identity for ``rho = 0``."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    m = transition.matrix if isinstance(transition, TransitionMatrix) else np.asarray(transition)
    return np.linalg.matrix_power(m, rho)


def simulate_trajectory(dyn: StateDynamics, T: int, rng=None) -> np.ndarray:
    """Simulate ``T`` steps of the true state; returns ``T + 1`` rows.

    Row 0 is the initial state; row ``t`` is reached after ``t`` steps with
    fresh independent noise.  Deterministic given the generator state.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    rng = as_rng(rng)
    out = np.empty((T + 1, dyn.dim))
    x = dyn.initial_state(rng)
    out[0] = x
    if T:
        w = dyn.noise_sampler(rng, T)
        for t in range(T):
            x = dyn.step(x, w[t])
            out[t + 1] = x
    return out
