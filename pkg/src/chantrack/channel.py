"""Wireless observation layer: path loss, shadowing kernel, covariances, sampling.

Every sensor measures the channel magnitude relative to a fixed reference
antenna, in dB.  Conditionally on the hidden state, a measurement is the
sum of a path-loss term ``alpha_i * mu`` with ``alpha_i = -10 log10(d_i)``,
a zero-mean jointly Gaussian shadowing field with an isotropic exponential
spatial kernel, and white multipath noise.  All gains are in dB and all
distances in meters; no unit conversion happens inside these functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .util import as_rng

__all__ = [
    "D_MIN",
    "NumericsWarning",
    "KernelSpec",
    "StateCoord",
    "StateToChannelMap",
    "ChannelScene",
    "ObservationBatch",
    "kernel_eval",
    "path_loss_coeffs",
    "point_path_loss",
    "build_covariance",
    "build_obs_covariance",
    "cross_covariance",
    "gaussian_unnormalized_loglik",
    "sample_observation",
    "sample_joint_field",
    "observation_conditioning",
]

# Guard against the log10 singularity at the reference antenna.
D_MIN = 1e-6


class NumericsWarning(UserWarning):
    """Raised when a covariance factorization needed diagonal jitter."""


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic spatial autocorrelation kernel of the shadowing field.

    Only the exponential form ships: ``k(d) = theta1 * exp(-d / theta2)``
    with ``theta1`` the shadowing power (dB^2) and ``theta2`` the
    correlation distance (m).
    """

    form: str = "exponential-isotropic"
    n_params: int = 2

    def __post_init__(self):
        if self.form != "exponential-isotropic":
            raise ValueError(f"unsupported kernel form {self.form!r}")
        if self.n_params != 2:
            raise ValueError("exponential-isotropic kernel takes exactly 2 parameters")


def kernel_eval(kernel: KernelSpec, d, theta) -> np.ndarray:
    """Kernel value at distance ``d`` (broadcasts over ``d`` and ``theta``).

    ``theta`` carries the parameter vector on its last axis.
    """
    d = np.asarray(d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t1 = theta[..., 0]
    t2 = theta[..., 1]
    if np.any(t2 <= 0.0):
        raise ValueError("correlation distance theta2 must be > 0")
    if np.any(t1 < 0.0):
        raise ValueError("shadowing power theta1 must be >= 0")
    return t1 * np.exp(-d / t2)


@dataclass(frozen=True)
class StateCoord:
    """Marks a kernel parameter as bound to a state coordinate."""

    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("state coordinate index must be >= 0")


Binding = Union[StateCoord, float]


@dataclass(frozen=True)
class StateToChannelMap:
    """How the hidden state feeds the observation layer.

    ``mu_index`` names the state coordinate holding the path-loss exponent;
    each kernel parameter is either bound to a state coordinate or fixed to
    a constant.
    """

    mu_index: int
    theta_bindings: tuple[Binding, ...]

    def __post_init__(self):
        if self.mu_index < 0:
            raise ValueError("mu_index must be >= 0")
        bindings = tuple(
            b if isinstance(b, StateCoord) else float(b) for b in self.theta_bindings
        )
        bound = [self.mu_index] + [b.index for b in bindings if isinstance(b, StateCoord)]
        if len(set(bound)) != len(bound):
            raise ValueError("bound state coordinates must be distinct")
        object.__setattr__(self, "theta_bindings", bindings)

    @property
    def state_dim_required(self) -> int:
        bound = [self.mu_index] + [b.index for b in self.theta_bindings if isinstance(b, StateCoord)]
        return max(bound) + 1

    def mu_of(self, x) -> np.ndarray:
        """Path-loss exponent of state(s) ``x`` (state on the last axis)."""
        return np.asarray(x, dtype=float)[..., self.mu_index]

    def theta_of(self, x) -> np.ndarray:
        """Kernel parameter vector(s) of state(s) ``x``; parameters on the last axis."""
        x = np.asarray(x, dtype=float)
        parts = []
        for b in self.theta_bindings:
            if isinstance(b, StateCoord):
                parts.append(x[..., b.index])
            else:
                parts.append(np.broadcast_to(b, x.shape[:-1]))
        return np.stack(parts, axis=-1)


@dataclass(frozen=True)
class ChannelScene:
    """Geometry and noise model shared by all observation-layer operations.

    ``sensors`` is either a static ``(N, 2)`` position array or a scripted
    ``(T, N, 2)`` sequence for known sensor mobility.  ``sigma_xi_sq`` is the
    multipath noise variance in dB^2; zero is permitted only for analytic
    test modes (the observation covariance then loses its diagonal loading).
    """

    ref_pos: np.ndarray
    sensors: np.ndarray
    sigma_xi_sq: float
    kernel: KernelSpec
    state_map: StateToChannelMap

    def __post_init__(self):
        ref = np.asarray(self.ref_pos, dtype=float).reshape(2)
        sens = np.asarray(self.sensors, dtype=float)
        if sens.ndim not in (2, 3) or sens.shape[-1] != 2:
            raise ValueError(f"sensors must have shape (N, 2) or (T, N, 2), got {sens.shape}")
        if not np.all(np.isfinite(sens)) or not np.all(np.isfinite(ref)):
            raise ValueError("positions must be finite")
        if self.sigma_xi_sq < 0.0:
            raise ValueError("sigma_xi_sq must be >= 0")
        if len(self.state_map.theta_bindings) != self.kernel.n_params:
            raise ValueError("state map must bind exactly the kernel's parameters")
        d = np.linalg.norm(sens - ref, axis=-1)
        if np.any(d < D_MIN):
            i = int(np.argwhere(d.reshape(-1, d.shape[-1]) < D_MIN)[0][-1])
            raise ValueError(f"sensor {i} is closer than {D_MIN} m to the reference antenna")
        object.__setattr__(self, "ref_pos", ref)
        object.__setattr__(self, "sensors", sens)
        object.__setattr__(self, "sigma_xi_sq", float(self.sigma_xi_sq))

    @property
    def n_sensors(self) -> int:
        return self.sensors.shape[-2]

    @property
    def static(self) -> bool:
        return self.sensors.ndim == 2

    def sensors_at(self, t: int) -> np.ndarray:
        if self.static:
            return self.sensors
        if not 0 <= t < self.sensors.shape[0]:
            raise ValueError(f"no scripted sensor positions for time {t}")
        return self.sensors[t]


@dataclass(frozen=True)
class ObservationBatch:
    """One timestep of dB-scale measurements with their path-loss coefficients."""

    t: int
    y: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        if y.shape != a.shape:
            raise ValueError("y and alpha must have the same length")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(a))):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "alpha", a)

    @property
    def n_sensors(self) -> int:
        return self.y.shape[0]


def point_path_loss(ref_pos, points, label: str = "point") -> np.ndarray:
    """Path-loss coefficients ``-10 log10 ||p - ref||`` for arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.linalg.norm(pts - np.asarray(ref_pos, dtype=float), axis=-1)
    if np.any(d < D_MIN):
        i = int(np.argmin(d))
        raise ValueError(f"{label} {i} is closer than {D_MIN} m to the reference antenna")
    return -10.0 * np.log10(d)


def path_loss_coeffs(scene: ChannelScene, t: int = 0) -> np.ndarray:
    """Per-sensor path-loss coefficients at time ``t``."""
    return point_path_loss(scene.ref_pos, scene.sensors_at(t), label="sensor")


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b)


def build_covariance(scene: ChannelScene, t: int, theta) -> np.ndarray:
    """Conditional shadowing covariance over the sensors at time ``t``."""
    pts = scene.sensors_at(t)
    return kernel_eval(scene.kernel, _pairwise_distances(pts, pts), theta)


def build_obs_covariance(scene: ChannelScene, t: int, theta) -> np.ndarray:
    """Observation covariance: shadowing covariance plus multipath loading."""
    c = build_covariance(scene, t, theta)
    return c + scene.sigma_xi_sq * np.eye(scene.n_sensors)


def cross_covariance(scene: ChannelScene, t: int, q, theta) -> np.ndarray:
    """Shadowing covariance between an arbitrary point ``q`` and each sensor."""
    q = np.asarray(q, dtype=float).reshape(2)
    d = np.linalg.norm(scene.sensors_at(t) - q, axis=-1)
    return kernel_eval(scene.kernel, d, theta)


def gaussian_unnormalized_loglik(y, mean, cov) -> float:
    """Log of the Gaussian density without its ``(2 pi)^(-N/2)`` constant.

    Computed through a Cholesky factorization (triangular solves, never an
    explicit inverse); factorization failure raises ``LinAlgError``.
    """
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    factor = np.linalg.cholesky(np.asarray(cov, dtype=float))
    z = solve_triangular(factor, y - mean, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(factor)))
    return float(-0.5 * (z @ z) - 0.5 * logdet)


def _chol_psd(sigma: np.ndarray, theta1: float) -> np.ndarray:
    """Cholesky factor of a shadowing covariance, tolerating semidefiniteness.

    An all-zero matrix (no shadowing) factors to zero.  Otherwise a failed
    factorization is retried once with ``1e-10 * theta1`` diagonal jitter,
    which is reported as a :class:`NumericsWarning`.
    """
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        if not sigma.any():
            return np.zeros_like(sigma)
        jitter = 1e-10 * float(theta1)
        if jitter <= 0.0:
            raise
        warnings.warn(
            f"shadowing covariance is not positive definite; retrying with {jitter:.3e} diagonal jitter",
            NumericsWarning,
            stacklevel=3,
        )
        return np.linalg.cholesky(sigma + jitter * np.eye(sigma.shape[0]))


def _shadow_draws(factor: np.ndarray, rng: np.random.Generator, size: int | None) -> np.ndarray:
    n = factor.shape[0]
    if size is None:
        return factor @ rng.standard_normal(n)
    return rng.standard_normal((size, n)) @ factor.T


def sample_observation(scene: ChannelScene, t: int, x, rng, size: int | None = None) -> ObservationBatch | tuple:
    """Draw sensor observations conditional on state ``x``.

    With ``size=None`` returns a single :class:`ObservationBatch`; with an
    integer ``size`` returns ``(y, alpha)`` where ``y`` has shape
    ``(size, N)`` (batched draws share one factorization).
    """
    rng = as_rng(rng)
    theta = scene.state_map.theta_of(x)
    mu = scene.state_map.mu_of(x)
    alpha = path_loss_coeffs(scene, t)
    sigma = build_covariance(scene, t, theta)
    factor = _chol_psd(sigma, theta[0])
    shadow = _shadow_draws(factor, rng, size)
    noise_scale = np.sqrt(scene.sigma_xi_sq)
    if size is None:
        xi = noise_scale * rng.standard_normal(scene.n_sensors)
        return ObservationBatch(t=t, y=alpha * mu + shadow + xi, alpha=alpha)
    xi = noise_scale * rng.standard_normal((size, scene.n_sensors))
    return alpha * mu + shadow + xi, alpha


def _stable_unique_rows(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate rows preserving first-occurrence order."""
    seen: dict[bytes, int] = {}
    inverse = np.empty(len(points), dtype=np.int64)
    keep = []
    for i, row in enumerate(points):
        key = row.tobytes()
        j = seen.get(key)
        if j is None:
            j = len(keep)
            seen[key] = j
            keep.append(i)
        inverse[i] = j
    return points[keep], inverse


def sample_joint_field(scene: ChannelScene, t: int, x, query_points, rng, size: int | None = None):
    """One coherent draw of sensor observations and the noiseless gain field.

    The shadowing field is drawn jointly over the stacked sensor and query
    positions (coincident points share a single draw), multipath noise is
    added at the sensors only, and query values are the noiseless channel
    gain ``alpha_q * mu + shadowing``.  Returns ``(observations, field)``;
    with integer ``size`` the observation part is the raw ``(size, N)``
    array and the field has shape ``(size, Q)``.
    """
    rng = as_rng(rng)
    q = np.asarray(query_points, dtype=float).reshape(-1, 2)
    theta = scene.state_map.theta_of(x)
    mu = scene.state_map.mu_of(x)
    alpha = path_loss_coeffs(scene, t)
    alpha_q = point_path_loss(scene.ref_pos, q, label="query point") if len(q) else np.empty(0)

    stacked = np.vstack([scene.sensors_at(t), q])
    uniq, inverse = _stable_unique_rows(stacked)
    sigma = kernel_eval(scene.kernel, _pairwise_distances(uniq, uniq), theta)
    factor = _chol_psd(sigma, theta[0])
    shadow = _shadow_draws(factor, rng, size)[..., inverse]

    n = scene.n_sensors
    noise_scale = np.sqrt(scene.sigma_xi_sq)
    if size is None:
        xi = noise_scale * rng.standard_normal(n)
        y = alpha * mu + shadow[:n] + xi
        field = alpha_q * mu + shadow[n:]
        return ObservationBatch(t=t, y=y, alpha=alpha), field
    xi = noise_scale * rng.standard_normal((size, n))
    y = alpha * mu + shadow[:, :n] + xi
    field = alpha_q * mu + shadow[:, n:]
    return y, field


def observation_conditioning(scene: ChannelScene, t: int, thetas) -> float:
    """Smallest observation-covariance eigenvalue over the given parameter rows.

    A value at or below 1 is reported as a warning (the filter tolerates it;
    rescaling the observations restores the margin).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    lam = np.inf
    for th in np.unique(thetas, axis=0):
        c = build_obs_covariance(scene, t, th)
        lam = min(lam, float(np.linalg.eigvalsh(c)[0]))
    if lam <= 1.0:
        warnings.warn(
            f"observation covariance eigenvalue floor {lam:.4g} <= 1; consider rescaling observations",
            NumericsWarning,
            stacklevel=2,
        )
    return lam

