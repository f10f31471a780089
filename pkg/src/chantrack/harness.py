"""Scenario configuration, the bundled benchmark experiment, metrics and file IO.

A scenario is described by a single hierarchical JSON document (all fields
snake_case, unknown fields rejected).  ``run_experiment`` drives the whole
pipeline: simulate the hidden state and its observations, estimate the
transition matrix offline, run the tracking filter, predict gain maps at
snapshot times and write the artifacts:

* ``state_trace.csv``   -- ``t, true_x1, ..., est_x1, ...`` per observation
* ``map_t<k>.csv``      -- ``qx_m, qy_m, true_gain_db, pred_gain_db``
* ``metrics.json``      -- RMSEs, resets, phase runtimes, resolved seed, config echo
* ``config_echo.json``  -- the resolved configuration

Identical configurations produce byte-identical CSV artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (
    ChannelScene,
    KernelSpec,
    ObservationBatch,
    StateCoord,
    StateToChannelMap,
    observation_conditioning,
    sample_joint_field,
    sample_observation,
)
from .filtering import GridFilter, brute_force_posterior
from .grid import GridSpec, reconstruction_matrix
from .kriging import QuerySpec, predict_gain_map
from .util import single_thread_blas
from .markov import (
    StateDynamics,
    TransitionMatrix,
    coupled_tanh_dynamics,
    estimate_transition_marginal,
    estimate_transition_markovian,
    finite_chain_dynamics,
    initial_belief,
    simulate_trajectory,
    transition_power,
)

__all__ = [
    "ConfigError",
    "PhaseFailure",
    "GridConfig",
    "DynamicsConfig",
    "TransitionBudget",
    "SensorConfig",
    "KernelConfig",
    "SceneConfig",
    "QueryGridConfig",
    "ScenarioConfig",
    "RunMetrics",
    "benchmark_config",
    "config_from_dict",
    "config_from_json",
    "config_to_dict",
    "build_grid",
    "build_dynamics",
    "build_scene",
    "query_points",
    "estimate_transition",
    "run_experiment",
    "prior_baseline",
    "l_sweep",
    "save_transition",
    "load_transition",
    "random_small_scenario",
    "oracle_check",
]


class ConfigError(ValueError):
    """A scenario configuration failed validation; the message names the field."""


class PhaseFailure(RuntimeError):
    """A pipeline phase failed; carries the phase name for diagnostics."""

    def __init__(self, phase: str, original: BaseException):
        super().__init__(f"phase {phase!r} failed: {original}")
        self.phase = phase


def _require(data, path: str, allowed: dict):
    """Check ``data`` is a dict whose keys are all known, with required ones present."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field {key!r} in {path}")
    for key, required in allowed.items():
        if required and key not in data:
            raise ConfigError(f"missing field {key!r} in {path}")


@dataclass(frozen=True)
class GridConfig:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    @staticmethod
    def from_dict(data, path="grid"):
        _require(data, path, {"lower": True, "upper": True, "cells": True})
        return GridConfig(tuple(data["lower"]), tuple(data["upper"]), tuple(data["cells"]))


@dataclass(frozen=True)
class DynamicsConfig:
    kind: str
    gamma: float = 1.6
    initial_state: tuple[float, ...] = (2.0, 25.3)
    points: tuple | None = None
    matrix: tuple | None = None
    initial_index: int = 0

    @staticmethod
    def from_dict(data, path="dynamics"):
        _require(
            data,
            path,
            {"kind": True, "gamma": False, "initial_state": False, "points": False, "matrix": False, "initial_index": False},
        )
        kind = data["kind"]
        if kind not in ("coupled_tanh", "finite_chain"):
            raise ConfigError(f"{path}.kind must be 'coupled_tanh' or 'finite_chain', got {kind!r}")
        if kind == "finite_chain" and ("points" not in data or "matrix" not in data):
            raise ConfigError(f"{path}: finite_chain dynamics need 'points' and 'matrix'")
        return DynamicsConfig(
            kind=kind,
            gamma=float(data.get("gamma", 1.6)),
            initial_state=tuple(data.get("initial_state", (2.0, 25.3))),
            points=tuple(tuple(r) for r in data["points"]) if "points" in data else None,
            matrix=tuple(tuple(r) for r in data["matrix"]) if "matrix" in data else None,
            initial_index=int(data.get("initial_index", 0)),
        )


@dataclass(frozen=True)
class TransitionBudget:
    samples_per_cell: int = 10_000
    n_paths: int = 100
    path_length: int = 10_000

    @staticmethod
    def from_dict(data, path="transition"):
        _require(data, path, {"samples_per_cell": False, "n_paths": False, "path_length": False})
        return TransitionBudget(
            samples_per_cell=int(data.get("samples_per_cell", 10_000)),
            n_paths=int(data.get("n_paths", 100)),
            path_length=int(data.get("path_length", 10_000)),
        )


@dataclass(frozen=True)
class SensorConfig:
    kind: str
    n: int = 30
    positions: tuple | None = None

    @staticmethod
    def from_dict(data, path="scene.sensors"):
        _require(data, path, {"kind": True, "n": False, "positions": False})
        kind = data["kind"]
        if kind not in ("lattice", "fixed"):
            raise ConfigError(f"{path}.kind must be 'lattice' or 'fixed', got {kind!r}")
        if kind == "fixed" and "positions" not in data:
            raise ConfigError(f"{path}: fixed sensors need 'positions'")
        return SensorConfig(
            kind=kind,
            n=int(data.get("n", 30)),
            positions=tuple(tuple(r) for r in data["positions"]) if "positions" in data else None,
        )


@dataclass(frozen=True)
class KernelConfig:
    form: str = "exponential-isotropic"
    params: tuple = ()

    @staticmethod
    def from_dict(data, path="scene.kernel"):
        _require(data, path, {"form": False, "params": True})
        params = []
        for i, binding in enumerate(data["params"]):
            _require(binding, f"{path}.params[{i}]", {"state": False, "const": False})
            if ("state" in binding) == ("const" in binding):
                raise ConfigError(f"{path}.params[{i}] must set exactly one of 'state' or 'const'")
            params.append(("state", int(binding["state"])) if "state" in binding else ("const", float(binding["const"])))
        return KernelConfig(form=data.get("form", "exponential-isotropic"), params=tuple(params))


@dataclass(frozen=True)
class SceneConfig:
    ref_pos: tuple[float, float]
    sensors: SensorConfig
    sigma_xi_sq: float
    kernel: KernelConfig
    mu_index: int = 0

    @staticmethod
    def from_dict(data, path="scene"):
        _require(data, path, {"ref_pos": True, "sensors": True, "sigma_xi_sq": True, "kernel": True, "mu_index": False})
        return SceneConfig(
            ref_pos=tuple(data["ref_pos"]),
            sensors=SensorConfig.from_dict(data["sensors"]),
            sigma_xi_sq=float(data["sigma_xi_sq"]),
            kernel=KernelConfig.from_dict(data["kernel"]),
            mu_index=int(data.get("mu_index", 0)),
        )


@dataclass(frozen=True)
class QueryGridConfig:
    nx: int
    ny: int
    region: tuple[tuple[float, float], tuple[float, float]]

    @staticmethod
    def from_dict(data, path="query_grid"):
        _require(data, path, {"nx": True, "ny": True, "region": True})
        region = tuple(tuple(float(v) for v in axis) for axis in data["region"])
        return QueryGridConfig(nx=int(data["nx"]), ny=int(data["ny"]), region=region)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridConfig
    dynamics: DynamicsConfig
    quantization: str
    transition: TransitionBudget
    scene: SceneConfig
    timesteps: int
    horizon: int
    query_grid: QueryGridConfig
    map_snapshots: tuple[int, ...]
    seed: int
    out_dir: str | None = None

    def validate(self) -> "ScenarioConfig":
        try:
            grid = build_grid(self)
        except ValueError as e:
            raise ConfigError(f"grid: {e}") from e
        if self.quantization not in ("markovian", "marginal"):
            raise ConfigError(f"quantization must be 'markovian' or 'marginal', got {self.quantization!r}")
        d = self.dynamics
        if d.kind == "coupled_tanh":
            if grid.ndim != 2:
                raise ConfigError("dynamics.kind 'coupled_tanh' needs a 2-dimensional grid")
            if len(d.initial_state) != 2:
                raise ConfigError("dynamics.initial_state must have 2 entries for coupled_tanh")
        else:
            pts = np.asarray(d.points, dtype=float)
            mat = np.asarray(d.matrix, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != grid.ndim:
                raise ConfigError("dynamics.points must be rows of grid-dimensional states")
            if mat.shape != (len(pts), len(pts)):
                raise ConfigError("dynamics.matrix must be square over dynamics.points")
            if np.max(np.abs(mat.sum(axis=0) - 1.0)) > 1e-9:
                raise ConfigError("dynamics.matrix columns must sum to 1")
            if not 0 <= d.initial_index < len(pts):
                raise ConfigError("dynamics.initial_index out of range")
        sc = self.scene
        if not 0 <= sc.mu_index < grid.ndim:
            raise ConfigError("scene.mu_index must index a grid dimension")
        for i, (tag, value) in enumerate(sc.kernel.params):
            if tag == "state" and not 0 <= int(value) < grid.ndim:
                raise ConfigError(f"scene.kernel.params[{i}] binds a state coordinate outside the grid")
        if sc.sigma_xi_sq < 0:
            raise ConfigError("scene.sigma_xi_sq must be >= 0")
        if sc.sensors.kind == "lattice":
            if sc.sensors.n < 1:
                raise ConfigError("scene.sensors.n must be >= 1")
            if sc.sensors.n > self.query_grid.nx * self.query_grid.ny:
                raise ConfigError("scene.sensors.n exceeds the number of lattice points")
        if self.timesteps < 0:
            raise ConfigError("timesteps must be >= 0")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.query_grid.nx < 1 or self.query_grid.ny < 1:
            raise ConfigError("query_grid.nx and query_grid.ny must be >= 1")
        for axis, (lo, hi) in enumerate(self.query_grid.region):
            if not lo < hi:
                raise ConfigError(f"query_grid.region[{axis}] must satisfy lower < upper")
        for k in self.map_snapshots:
            if not 0 <= k < self.timesteps:
                raise ConfigError(f"map_snapshots entry {k} outside [0, timesteps)")
        if len(set(self.map_snapshots)) != len(self.map_snapshots):
            raise ConfigError("map_snapshots entries must be distinct")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        return self


def config_from_dict(data: dict) -> ScenarioConfig:
    _require(
        data,
        "config",
        {
            "grid": True,
            "dynamics": True,
            "quantization": True,
            "transition": False,
            "scene": True,
            "timesteps": True,
            "horizon": False,
            "query_grid": True,
            "map_snapshots": False,
            "seed": True,
            "out_dir": False,
        },
    )
    cfg = ScenarioConfig(
        grid=GridConfig.from_dict(data["grid"]),
        dynamics=DynamicsConfig.from_dict(data["dynamics"]),
        quantization=str(data["quantization"]),
        transition=TransitionBudget.from_dict(data.get("transition", {})),
        scene=SceneConfig.from_dict(data["scene"]),
        timesteps=int(data["timesteps"]),
        horizon=int(data.get("horizon", 0)),
        query_grid=QueryGridConfig.from_dict(data["query_grid"]),
        map_snapshots=tuple(int(k) for k in data.get("map_snapshots", ())),
        seed=int(data["seed"]),
        out_dir=data.get("out_dir"),
    )
    return cfg.validate()


def config_from_json(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-JSON echo of a configuration (inverse of ``config_from_dict``)."""
    out = dataclasses.asdict(cfg)
    out["scene"]["kernel"]["params"] = [
        {tag: value} for tag, value in cfg.scene.kernel.params
    ]
    for key in ("points", "matrix"):
        if out["dynamics"][key] is None:
            del out["dynamics"][key]
    if cfg.scene.sensors.positions is None:
        del out["scene"]["sensors"]["positions"]
    if out["out_dir"] is None:
        del out["out_dir"]
    out["map_snapshots"] = list(out["map_snapshots"])
    return out


def benchmark_config(out_dir=None, seed: int = 20260810) -> ScenarioConfig:
    """The default synthetic benchmark scenario at full scale.

    30 sensors sampled from a 60x60 lattice over [0, 40]^2 m, reference
    antenna at (25, 10), multipath variance 2 dB^2, exponential kernel with
    the correlation distance fixed at 10 m and the shadowing power bound to
    the second state coordinate, coupled-tanh dynamics on a 30x30 grid over
    [0, 4] x [25, 25.6], 250 tracking steps at horizon 0, with two gain-map
    snapshots.
    """
    cfg = ScenarioConfig(
        grid=GridConfig(lower=(0.0, 25.0), upper=(4.0, 25.6), cells=(30, 30)),
        dynamics=DynamicsConfig(kind="coupled_tanh", gamma=1.6, initial_state=(2.0, 25.3)),
        quantization="markovian",
        transition=TransitionBudget(),
        scene=SceneConfig(
            ref_pos=(25.0, 10.0),
            sensors=SensorConfig(kind="lattice", n=30),
            sigma_xi_sq=2.0,
            kernel=KernelConfig(params=(("state", 1), ("const", 10.0))),
            mu_index=0,
        ),
        timesteps=250,
        horizon=0,
        query_grid=QueryGridConfig(nx=60, ny=60, region=((0.0, 40.0), (0.0, 40.0))),
        map_snapshots=(124, 249),
        seed=seed,
        out_dir=str(out_dir) if out_dir is not None else None,
    )
    return cfg.validate()


def build_grid(cfg: ScenarioConfig) -> GridSpec:
    return GridSpec(cfg.grid.lower, cfg.grid.upper, cfg.grid.cells)


def build_dynamics(cfg: ScenarioConfig) -> StateDynamics:
    d = cfg.dynamics
    if d.kind == "coupled_tanh":
        return coupled_tanh_dynamics(gamma=d.gamma, initial=d.initial_state)
    return finite_chain_dynamics(d.points, d.matrix, initial_index=d.initial_index)


def query_points(cfg: ScenarioConfig) -> np.ndarray:
    """Evaluation lattice: cell centers of the query region, x varying fastest."""
    (x0, x1), (y0, y1) = cfg.query_grid.region
    nx, ny = cfg.query_grid.nx, cfg.query_grid.ny
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _state_map(cfg: ScenarioConfig) -> StateToChannelMap:
    bindings = tuple(
        StateCoord(int(value)) if tag == "state" else float(value)
        for tag, value in cfg.scene.kernel.params
    )
    return StateToChannelMap(mu_index=cfg.scene.mu_index, theta_bindings=bindings)


def build_scene(cfg: ScenarioConfig, rng) -> ChannelScene:
    """Realize the scene; lattice sensors are sampled without replacement from the query lattice."""
    sc = cfg.scene
    if sc.sensors.kind == "fixed":
        positions = np.asarray(sc.sensors.positions, dtype=float)
    else:
        lattice = query_points(cfg)
        choice = rng.choice(len(lattice), size=sc.sensors.n, replace=False)
        positions = lattice[choice]
    return ChannelScene(
        ref_pos=np.asarray(sc.ref_pos, dtype=float),
        sensors=positions,
        sigma_xi_sq=sc.sigma_xi_sq,
        kernel=KernelSpec(form=sc.kernel.form),
        state_map=_state_map(cfg),
    )


def estimate_transition(cfg: ScenarioConfig, dyn: StateDynamics, grid: GridSpec, rng) -> TransitionMatrix:
    if cfg.quantization == "markovian":
        return estimate_transition_markovian(dyn, grid, samples_per_cell=cfg.transition.samples_per_cell, rng=rng)
    return estimate_transition_marginal(
        dyn, grid, n_paths=cfg.transition.n_paths, path_length=cfg.transition.path_length, rng=rng
    )


@dataclass
class RunMetrics:
    """Per-run results: estimates paired with their truth targets and summary metrics."""

    timesteps: np.ndarray
    estimates: np.ndarray
    truths: np.ndarray
    rmse_state: np.ndarray
    rmse_map: dict[int, float]
    resets: int
    runtime_s: dict[str, float]
    resolved_seed: int
    out_dir: Path | None = None
    artifacts: list[Path] = field(default_factory=list)


def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _write_state_trace(path: Path, times, truths, estimates):
    m = truths.shape[1]
    header = (
        "t,"
        + ",".join(f"true_x{i + 1}" for i in range(m))
        + ","
        + ",".join(f"est_x{i + 1}" for i in range(m))
    )
    lines = [header]
    for t, tru, est in zip(times, truths, estimates):
        lines.append(f"{int(t)}," + _format_row(tru) + "," + _format_row(est))
    path.write_text("\n".join(lines) + "\n")


def _write_map(path: Path, points, true_gain, pred_gain):
    lines = ["qx_m,qy_m,true_gain_db,pred_gain_db"]
    for (qx, qy), tg, pg in zip(points, true_gain, pred_gain):
        lines.append(_format_row((qx, qy, tg, pg)))
    path.write_text("\n".join(lines) + "\n")


class _PhaseSpan:
    def __init__(self, timer: "_PhaseTimer", name: str):
        self._timer = timer
        self._name = name

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._start
        self._timer.runtime_s[self._name] = self._timer.runtime_s.get(self._name, 0.0) + elapsed
        if exc is not None and not isinstance(exc, PhaseFailure):
            raise PhaseFailure(self._name, exc) from exc
        return False


class _PhaseTimer:
    def __init__(self):
        self.runtime_s: dict[str, float] = {}

    def __call__(self, name: str) -> _PhaseSpan:
        return _PhaseSpan(self, name)


def run_experiment(
    cfg: ScenarioConfig,
    transition: TransitionMatrix | None = None,
    write_trace: bool = True,
    write_maps: bool = True,
) -> RunMetrics:
    """Run the full pipeline for a validated configuration.

    Passing a precomputed ``transition`` skips the offline estimation phase
    (its budget settings are then ignored).  Artifacts are written only when
    ``cfg.out_dir`` is set; metric computation happens regardless.
    """
    cfg.validate()
    timer = _PhaseTimer()
    # Stream layout: one child per consumer, in this fixed order.
    sensor_ss, transition_ss, initial_ss, truth_ss, obs_ss = np.random.SeedSequence(cfg.seed).spawn(5)

    with timer("setup"):
        grid = build_grid(cfg)
        dyn = build_dynamics(cfg)
        scene = build_scene(cfg, np.random.default_rng(sensor_ss))
        queries = query_points(cfg)
        observation_conditioning(scene, 0, scene.state_map.theta_of(reconstruction_matrix(grid).T))

    with timer("transition"):
        if transition is None:
            transition = estimate_transition(cfg, dyn, grid, np.random.default_rng(transition_ss))
        elif transition.n_cells != grid.n_cells:
            raise ValueError("provided transition matrix does not match the grid")

    with timer("simulate"), single_thread_blas():
        T, rho = cfg.timesteps, cfg.horizon
        trajectory = simulate_trajectory(dyn, T + rho, np.random.default_rng(truth_ss))
        field_times = {k + rho: k for k in cfg.map_snapshots}
        obs_rng = np.random.default_rng(obs_ss)
        observations: list[ObservationBatch] = []
        true_fields: dict[int, np.ndarray] = {}
        for t in range(T + rho):
            x_t = trajectory[t + 1]
            if t in field_times:
                obs, fld = sample_joint_field(scene, t, x_t, queries, obs_rng)
                true_fields[field_times[t]] = fld
            elif t < T:
                obs = sample_observation(scene, t, x_t, obs_rng)
            else:
                continue
            if t < T:
                observations.append(obs)

    pred_maps: dict[int, np.ndarray] = {}
    snapshot_set = set(cfg.map_snapshots)
    spec = QuerySpec(queries, rho=rho) if snapshot_set else None

    def snapshot_maps(session_, obs_, record_):
        if obs_.t in snapshot_set:
            with timer("predict"):
                pred_maps[obs_.t] = predict_gain_map(session_, obs_, spec)

    track_start = time.perf_counter()
    with timer("track"):
        prior = initial_belief(dyn, grid, rng=np.random.default_rng(initial_ss))
        session = GridFilter(grid, transition, scene, prior, rho=rho)
        records = session.run_tracking(observations, on_record=snapshot_maps)
    timer.runtime_s["track"] = time.perf_counter() - track_start - timer.runtime_s.get("predict", 0.0)
    timer.runtime_s.setdefault("predict", 0.0)

    times = np.array([r.t for r in records])
    estimates = np.stack([r.estimate for r in records])
    truths = np.stack([trajectory[t + 1 + rho] for t in times])
    rmse_state = np.sqrt(np.mean((estimates - truths) ** 2, axis=0))
    rmse_map = {
        k: float(np.sqrt(np.mean((pred_maps[k] - true_fields[k]) ** 2))) for k in sorted(pred_maps)
    }
    metrics = RunMetrics(
        timesteps=times,
        estimates=estimates,
        truths=truths,
        rmse_state=rmse_state,
        rmse_map=rmse_map,
        resets=session.reset_count,
        runtime_s=timer.runtime_s,
        resolved_seed=cfg.seed,
    )

    if cfg.out_dir is not None:
        with timer("write"):
            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            metrics.out_dir = out
            echo = config_to_dict(cfg)
            if write_trace:
                trace = out / "state_trace.csv"
                _write_state_trace(trace, times, truths, estimates)
                metrics.artifacts.append(trace)
            if write_maps:
                for k in sorted(pred_maps):
                    map_path = out / f"map_t{k}.csv"
                    _write_map(map_path, queries, true_fields[k], pred_maps[k])
                    metrics.artifacts.append(map_path)
            payload = {
                "rmse_state": [float(v) for v in rmse_state],
                "rmse_map": {str(k): v for k, v in rmse_map.items()},
                "resets": metrics.resets,
                "runtime_s": timer.runtime_s,
                "resolved_seed": cfg.seed,
                "config": echo,
            }
            (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
            (out / "config_echo.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
            metrics.artifacts += [out / "metrics.json", out / "config_echo.json"]
    return metrics


def prior_baseline(cfg: ScenarioConfig, transition: TransitionMatrix | None = None) -> np.ndarray:
    """Observation-free estimates: the prior chain pushed through time.

    Row ``t`` is the estimate a filter would produce at observation time
    ``t`` had it never seen data.  Uses the same derived transition stream
    as ``run_experiment``, so a paired run shares the transition matrix.
    """
    cfg.validate()
    _, transition_ss, initial_ss, _, _ = np.random.SeedSequence(cfg.seed).spawn(5)
    grid = build_grid(cfg)
    dyn = build_dynamics(cfg)
    if transition is None:
        transition = estimate_transition(cfg, dyn, grid, np.random.default_rng(transition_ss))
    X = reconstruction_matrix(grid)
    p_rho = transition_power(transition, cfg.horizon)
    belief = initial_belief(dyn, grid, rng=np.random.default_rng(initial_ss))
    if cfg.timesteps == 0:
        return (X @ (p_rho @ belief))[None, :]
    out = np.empty((cfg.timesteps, grid.ndim))
    with single_thread_blas():
        for t in range(cfg.timesteps):
            belief = transition.matrix @ belief
            out[t] = X @ (p_rho @ belief) if cfg.horizon else X @ belief
    return out


def l_sweep(cfg: ScenarioConfig, L_values, n_seeds: int = 20) -> list[tuple[int, float]]:
    """Tracking error of filters built at several grid resolutions.

    For each seed, one truth/observation stream is generated and replayed
    against a filter per resolution ``L`` (uniform ``L`` cells per axis);
    transition matrices are estimated once per resolution.  Returns rows
    ``(L, median RMSE of the first state coordinate over seeds)``.
    """
    cfg.validate()
    L_values = [int(L) for L in L_values]
    master = np.random.SeedSequence(cfg.seed)
    trans_ss, *seed_ss = master.spawn(1 + n_seeds)

    dyn = build_dynamics(cfg)
    grids, transitions, priors = {}, {}, {}
    for L, sub in zip(L_values, trans_ss.spawn(len(L_values))):
        grid_l = GridSpec(cfg.grid.lower, cfg.grid.upper, (L,) * len(cfg.grid.cells))
        grids[L] = grid_l
        transitions[L] = estimate_transition(cfg, dyn, grid_l, np.random.default_rng(sub))
        priors[L] = initial_belief(dyn, grid_l, rng=np.random.default_rng(sub))

    errors = {L: [] for L in L_values}
    T, rho = cfg.timesteps, cfg.horizon
    for ss in seed_ss:
        sensor_ss, truth_ss, obs_ss = ss.spawn(3)
        scene = build_scene(cfg, np.random.default_rng(sensor_ss))
        trajectory = simulate_trajectory(dyn, T + rho, np.random.default_rng(truth_ss))
        obs_rng = np.random.default_rng(obs_ss)
        with single_thread_blas():
            observations = [sample_observation(scene, t, trajectory[t + 1], obs_rng) for t in range(T)]
        targets = np.stack([trajectory[t + 1 + rho] for t in range(T)]) if T else trajectory[[rho]]
        for L in L_values:
            session = GridFilter(grids[L], transitions[L], scene, priors[L], rho=rho)
            records = session.run_tracking(observations)
            estimates = np.stack([r.estimate for r in records])
            errors[L].append(float(np.sqrt(np.mean((estimates[:, 0] - targets[:, 0]) ** 2))))
    return [(L, float(np.median(errors[L]))) for L in L_values]


TRANSITION_MAGIC = b"CGRIDP1\x00"
_MODE_TAGS = {"markovian": 1, "marginal": 2}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


def save_transition(path, transition: TransitionMatrix) -> None:
    """Persist a transition matrix: 16-byte header then row-major little-endian f64."""
    header = TRANSITION_MAGIC + struct.pack("<II", transition.n_cells, _MODE_TAGS[transition.mode])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(transition.matrix, dtype="<f8").tobytes())


def load_transition(path) -> TransitionMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != TRANSITION_MAGIC:
        raise ValueError(f"{path}: not a transition matrix file (bad magic)")
    n, tag = struct.unpack("<II", blob[8:16])
    if tag not in _TAG_MODES:
        raise ValueError(f"{path}: unknown quantization mode tag {tag}")
    expected = 16 + 8 * n * n
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {n} cells, got {len(blob)}")
    matrix = np.frombuffer(blob, dtype="<f8", offset=16).reshape(n, n).astype(float)
    return TransitionMatrix(matrix, mode=_TAG_MODES[tag])


def random_small_scenario(rng, n_cells: int, n_sensors: int, n_obs: int):
    """A randomized small tracking scenario for oracle comparisons.

    Returns ``(grid, transition, scene, observations, initial_belief)`` with
    a random column-stochastic chain, random sensor geometry and observations
    sampled from the channel model at random in-box states.
    """
    if rng.random() < 0.5:
        grid = GridSpec((0.0,), (4.0,), (n_cells,))
        bindings = (float(rng.uniform(5.0, 30.0)), float(rng.uniform(4.0, 15.0)))
    else:
        grid = GridSpec((0.0, 20.0), (4.0, 30.0), (n_cells, 1))
        bindings = (StateCoord(1), float(rng.uniform(4.0, 15.0)))
    state_map = StateToChannelMap(mu_index=0, theta_bindings=bindings)
    scene = ChannelScene(
        ref_pos=np.array([25.0, 10.0]),
        sensors=rng.uniform(0.0, 40.0, size=(n_sensors, 2)),
        sigma_xi_sq=float(rng.uniform(0.5, 3.0)),
        kernel=KernelSpec(),
        state_map=state_map,
    )
    cols = rng.random((n_cells, n_cells)) + 0.1
    transition = TransitionMatrix(cols / cols.sum(axis=0), mode="markovian")
    prior = rng.random(n_cells) + 0.05
    prior /= prior.sum()
    observations = []
    for t in range(n_obs):
        x = rng.uniform(np.asarray(grid.lower), np.asarray(grid.upper))
        observations.append(sample_observation(scene, t, x, rng))
    return grid, transition, scene, observations, prior


def oracle_check(n_scenarios: int = 50, seed: int = 0) -> float:
    """Max belief discrepancy between the recursion and path enumeration.

    Runs randomized small scenarios and compares ``run_tracking`` beliefs
    against ``brute_force_posterior`` in the sup norm; returns the worst
    error over all scenarios and timesteps.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_scenarios):
        n_cells = int(rng.integers(2, 5))
        n_sensors = int(rng.integers(1, 4))
        n_obs = int(rng.integers(4, 8))
        grid, transition, scene, observations, prior = random_small_scenario(rng, n_cells, n_sensors, n_obs)
        session = GridFilter(grid, transition, scene, prior)
        records = session.run_tracking(observations)
        reference = brute_force_posterior(grid, transition, scene, observations, prior)
        beliefs = np.stack([r.belief for r in records])
        worst = max(worst, float(np.max(np.abs(beliefs - reference))))
    return worst
