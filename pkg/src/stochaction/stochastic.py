"""Random action scales, exponential action-deviation sampling, segment
weights, microscopic/effective velocities, and guided-ensemble transport.

Randomness comes from the counter streams in `kernels`: every draw is a
pure function of (seed, domain, step, particle, slot), so results are
bitwise reproducible and independent of scheduling or worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ShapeError
from .evolution import WaveState, propagate_crank_nicolson
from .hamiltonian import (ClassicalSpec, QuantumOperator, hamiltonian_value,
                          require_node_free, theta_of_S)
from .kernels import (DOMAIN_DEVIATION, DOMAIN_INIT, DOMAIN_SOURCE,
                      SRC_BINARY, SRC_SMEARED, SRC_SPHERE, counter_uniform,
                      run_ensemble_window)
from .lattice import (GridSpec, check_field, gradient, integrate,
                      interp_linear)

SOURCE_KINDS = ("binary", "sphere", "smeared")

_KIND_INDEX = {"binary": SRC_BINARY, "sphere": SRC_SPHERE, "smeared": SRC_SMEARED}

# uniform on +-width*sqrt(3) has standard deviation `width`
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class LambdaSource:
    kind: str
    hbar: float = 1.0
    width: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigurationError(
                f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        if not (self.hbar > 0 and np.isfinite(self.hbar)):
            raise ConfigurationError(f"hbar must be positive, got {self.hbar}")
        if self.width < 0 or not np.isfinite(self.width):
            raise ConfigurationError(f"width must be >= 0, got {self.width}")
        if self.width > 0 and self.kind != "smeared":
            raise ConfigurationError("width applies to the smeared kind only")
        # keep |lambda| > 0: the uniform perturbation spans width*sqrt(3)
        if self.kind == "smeared" and self.width * _SQRT3 >= self.hbar:
            raise ConfigurationError(
                f"width {self.width} too large: magnitude could reach zero "
                f"(need width < hbar/sqrt(3) = {self.hbar / _SQRT3:.6g})")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")

    @property
    def kind_index(self) -> int:
        return _KIND_INDEX[self.kind]

    @property
    def mean_abs(self) -> float:
        return self.hbar


def sample_lambda(source: LambdaSource, n: int | None = None,
                  step: int = 0) -> float | np.ndarray:
    """Draw signed action scales from the source's counter stream.

    binary: +-hbar with equal probability.  sphere: the z-coordinate of a
    uniform point on the radius-hbar sphere picks the hemisphere, the
    magnitude is hbar always.  smeared: +-(hbar + uniform perturbation of
    standard deviation width), sign unbiased.
    """
    count = 1 if n is None else int(n)
    if count < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    pids = np.arange(count, dtype=np.uint64)
    u1 = counter_uniform(source.seed, DOMAIN_SOURCE, step, pids, slot=0)
    if source.kind == "binary":
        lam = np.where(u1 < 0.5, source.hbar, -source.hbar)
    elif source.kind == "sphere":
        z = 2.0 * u1 - 1.0
        lam = np.where(z >= 0.0, source.hbar, -source.hbar)
    else:
        u2 = counter_uniform(source.seed, DOMAIN_SOURCE, step, pids, slot=1)
        mag = source.hbar + source.width * _SQRT3 * (2.0 * u2 - 1.0)
        lam = np.where(u1 < 0.5, mag, -mag)
    if n is None:
        return float(lam[0])
    return lam


def sample_action_deviation(lam: float | np.ndarray, n: int | None = None,
                            seed: int = 0, step: int = 0) -> float | np.ndarray:
    """Signed exponential action deviation: sign(lam) * Exp(mean |lam|/2).

    The deviation never crosses zero against the sign of lam, and its
    magnitude is memoryless with mean |lam|/2.
    """
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr == 0) or not np.all(np.isfinite(lam_arr)):
        raise ConfigurationError("lam must be nonzero and finite")
    if n is None:
        count = lam_arr.size if lam_arr.ndim else 1
    else:
        count = int(n)
        if lam_arr.ndim and lam_arr.size != count:
            raise ShapeError(f"lam has size {lam_arr.size}, expected {count}")
    pids = np.arange(count, dtype=np.uint64)
    u = counter_uniform(seed, DOMAIN_DEVIATION, step, pids, slot=0)
    # inverse CDF; log1p(-u) is exact near u = 0 and u < 1 always
    mag = -0.5 * np.abs(lam_arr) * np.log1p(-u)
    dev = np.sign(lam_arr) * mag
    if n is None and np.ndim(lam) == 0:
        return float(dev[0])
    return dev


def classical_action_increment(q: float, p: float, spec: ClassicalSpec,
                               dt: float) -> float:
    """Stationary-path action over a short segment: p*qdot*dt - H*dt."""
    if dt <= 0 or not np.isfinite(dt):
        raise ConfigurationError(f"dt must be positive and finite, got {dt}")
    g = float(spec.g(q))
    A = float(spec.A(q))
    qdot = g * (p - A)
    return p * qdot * dt - hamiltonian_value(q, p, spec) * dt


def segment_weight(S: np.ndarray, spec: ClassicalSpec, grid: GridSpec,
                   dt: float, q: float | np.ndarray) -> float | np.ndarray:
    """exp(-theta(S)(q) dt): > 1 where the S-flow converges, < 1 where it
    spreads."""
    if dt < 0 or not np.isfinite(dt):
        raise ConfigurationError(f"dt must be >= 0 and finite, got {dt}")
    theta = theta_of_S(S, spec, grid)
    return np.exp(-interp_linear(theta, grid, q) * dt)


@dataclass(frozen=True)
class ActionSegment:
    dS: float
    dS_classical: float
    lam: float
    weight: float

    def __post_init__(self):
        if (self.dS - self.dS_classical) * np.sign(self.lam) < 0:
            raise ConfigurationError(
                "segment violates the sign constraint "
                f"(dS - dS_classical = {self.dS - self.dS_classical!r}, "
                f"lam = {self.lam!r})")
        if not (self.weight > 0):
            raise ConfigurationError(f"weight must be > 0, got {self.weight}")

    @property
    def deviation(self) -> float:
        return self.dS - self.dS_classical


def draw_segments(q: float, p: float, spec: ClassicalSpec, grid: GridSpec,
                  S: np.ndarray, dt: float, source: LambdaSource, n: int,
                  seed: int = 0, step: int = 0) -> list[ActionSegment]:
    """Sample n action segments at phase point (q, p)."""
    lams = sample_lambda(source, n, step=step)
    devs = sample_action_deviation(lams, n, seed=seed, step=step)
    base = classical_action_increment(q, p, spec, dt)
    w = float(segment_weight(S, spec, grid, dt, q))
    return [ActionSegment(dS=base + float(d), dS_classical=base,
                          lam=float(l), weight=w)
            for d, l in zip(devs, lams)]


def microscopic_velocity(q: float | np.ndarray, S: np.ndarray,
                         Omega: np.ndarray, lam: float, spec: ClassicalSpec,
                         grid: GridSpec) -> float | np.ndarray:
    """Scale-dependent particle velocity
    g(q) (dS/dq - A) + (lam/2) g(q) (dOmega/dq)/Omega
    with the fields linearly interpolated to q.
    """
    S = check_field(S, grid, "S")
    Omega = check_field(Omega, grid, "Omega")
    require_node_free(Omega, "Omega")
    dS_q = interp_linear(gradient(S, grid), grid, q)
    dOm_q = interp_linear(gradient(Omega, grid), grid, q)
    Om_q = interp_linear(Omega, grid, q)
    g = spec.g(q)
    A = spec.A(q)
    return g * (dS_q - A) + 0.5 * lam * g * dOm_q / Om_q


def effective_velocity(v_plus, v_minus):
    """Mean of the +lam and -lam microscopic velocities; the lam-odd
    osmotic parts cancel, leaving g(dS/dq - A)."""
    return 0.5 * (v_plus + v_minus)


def bohmian_velocity(state: WaveState, spec: ClassicalSpec,
                     grid: GridSpec) -> np.ndarray:
    """Guidance velocity field g (dS_Q/dq - A) from the unwrapped phase."""
    if grid != state.grid:
        raise ShapeError("grid does not match the state's grid")
    density = np.abs(state.psi) ** 2
    require_node_free(density, "|psi|^2")
    S_Q = state.hbar_eff * np.unwrap(np.angle(state.psi))
    pts = grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    A = np.asarray(spec.A(pts), dtype=float)
    return g * (gradient(S_Q, grid) - A)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleState:
    positions: np.ndarray
    lambdas: np.ndarray
    tau_Q: float
    t: float
    seed: int
    frozen: np.ndarray       # uint8 flags: 1 = hit the domain edge, stopped
    log_weights: np.ndarray  # accumulated -theta dt per particle

    def __post_init__(self):
        n = self.positions.shape[0]
        for name in ("lambdas", "frozen", "log_weights"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ShapeError(f"{name} shape {arr.shape} != ({n},)")
        if self.tau_Q <= 0 or not np.isfinite(self.tau_Q):
            raise ConfigurationError(f"tau_Q must be positive, got {self.tau_Q}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def frozen_fraction(self) -> float:
        return float(np.mean(self.frozen != 0))


def sample_positions_from_density(density: np.ndarray, grid: GridSpec, n: int,
                                  seed: int, step: int = 0) -> np.ndarray:
    """Inverse-CDF sampling of a gridded density (trapezoid CDF)."""
    density = check_field(density, grid, "density")
    if np.any(density < 0):
        raise ShapeError("density must be nonnegative")
    cdf = np.concatenate(
        ([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * grid.dq)))
    total = cdf[-1]
    if total <= 0:
        raise ShapeError("density integrates to zero")
    cdf /= total
    pids = np.arange(n, dtype=np.uint64)
    u = counter_uniform(seed, DOMAIN_INIT, step, pids, slot=0)
    return np.interp(u, cdf, grid.points())


def init_ensemble(state: WaveState, n: int, tau_Q: float, seed: int,
                  source: LambdaSource | None = None) -> EnsembleState:
    """Positions sampled from |psi|^2; lambdas drawn from the source (they
    are refreshed again at the first micro step)."""
    if n < 1:
        raise ConfigurationError(f"ensemble size must be >= 1, got {n}")
    density = np.abs(state.psi) ** 2
    positions = sample_positions_from_density(density, state.grid, n, seed)
    if source is not None:
        lambdas = np.asarray(sample_lambda(source, n, step=0), dtype=float)
    else:
        lambdas = np.zeros(n)
    return EnsembleState(positions=positions, lambdas=lambdas, tau_Q=tau_Q,
                         t=state.t, seed=seed, frozen=np.zeros(n, dtype=np.uint8),
                         log_weights=np.zeros(n))


@dataclass(frozen=True)
class WaveFrames:
    """Gridded guidance fields sampled along a wave trajectory.

    Velocity/weight tables (vb, osm, theta) are taken at window midpoints
    so a whole window of micro steps sees second-order-centered fields;
    densities are taken at window boundaries for equivariance checks.
    """
    times: np.ndarray       # window boundary times, shape (W+1,)
    dens: np.ndarray        # |psi|^2 at boundaries, shape (W+1, n)
    vb: np.ndarray          # g (dS/dq - A) at midpoints, shape (W, n)
    osm: np.ndarray         # 0.5 g (dOmega/dq)/Omega at midpoints
    theta: np.ndarray       # theta(S) at midpoints
    dt_window: float
    grid: GridSpec


def _guidance_tables(state: WaveState, spec: ClassicalSpec):
    grid = state.grid
    omega = np.abs(state.psi) ** 2
    require_node_free(omega, "|psi|^2")
    S = state.hbar_eff * np.unwrap(np.angle(state.psi))
    pts = grid.points()
    g = np.asarray(spec.g(pts), dtype=float)
    A = np.asarray(spec.A(pts), dtype=float)
    vb = g * (gradient(S, grid) - A)
    osm = 0.5 * g * gradient(omega, grid) / omega
    th = theta_of_S(S, spec, grid)
    return vb, osm, th, omega


def build_wave_frames(state: WaveState, H: QuantumOperator,
                      spec: ClassicalSpec, T: float, dt_window: float,
                      dt_cn: float) -> WaveFrames:
    """Crank-Nicolson drive of the wave with field extraction per window."""
    if dt_window <= 0 or T < 0:
        raise ConfigurationError("need dt_window > 0 and T >= 0")
    n_windows = int(round(T / dt_window)) if T > 0 else 0
    if T > 0 and abs(n_windows * dt_window - T) > 1e-9 * T:
        raise ConfigurationError(
            f"dt_window = {dt_window} does not divide T = {T}")
    n_half = max(1, int(round(0.5 * dt_window / dt_cn)))
    dt_half = 0.5 * dt_window / n_half
    grid = state.grid
    dens = np.empty((n_windows + 1, grid.n))
    vb = np.empty((n_windows, grid.n))
    osm = np.empty((n_windows, grid.n))
    th = np.empty((n_windows, grid.n))
    dens[0] = np.abs(state.psi) ** 2
    cur = state
    for w in range(n_windows):
        cur = propagate_crank_nicolson(cur, H, dt_half, n_half)
        vb[w], osm[w], th[w], _ = _guidance_tables(cur, spec)
        cur = propagate_crank_nicolson(cur, H, dt_half, n_half)
        dens[w + 1] = np.abs(cur.psi) ** 2
    times = state.t + dt_window * np.arange(n_windows + 1)
    return WaveFrames(times=times, dens=dens, vb=vb, osm=osm, theta=th,
                      dt_window=dt_window, grid=grid)


def _bin_probabilities(density: np.ndarray, grid: GridSpec,
                       edges: np.ndarray) -> np.ndarray:
    """Probability mass of a gridded density inside each histogram bin."""
    cdf = np.concatenate(
        ([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * grid.dq)))
    at_edges = np.interp(edges, grid.points(), cdf)
    p = np.diff(at_edges)
    total = p.sum()
    if total <= 0:
        raise ShapeError("wave density carries no mass over the bins")
    return p / total


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two discrete distributions."""
    return 0.5 * float(np.sum(np.abs(p - q)))


def _snapshot(ens_positions, log_weights, frozen, t, wave_density, grid,
              edges) -> dict:
    centers = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    counts, _ = np.histogram(ens_positions, bins=edges)
    n_total = ens_positions.shape[0]
    p_emp = counts / n_total
    w = np.exp(log_weights - np.max(log_weights))
    w_sum = w.sum()
    wcounts, _ = np.histogram(ens_positions, bins=edges, weights=w)
    p_wemp = wcounts / w_sum
    p_wave = _bin_probabilities(wave_density, grid, edges)
    return {
        "t": float(t),
        "bin_centers": centers,
        "histogram_density": p_emp / widths,
        "weighted_density": p_wemp / widths,
        "wave_density": np.interp(centers, grid.points(), wave_density),
        "tv_distance": tv_distance(p_emp, p_wave),
        "tv_weighted": tv_distance(p_wemp, p_wave),
        "frozen_fraction": float(np.mean(frozen != 0)),
    }


def propagate_ensemble(ens: EnsembleState, frames: WaveFrames,
                       spec: ClassicalSpec, T: float,
                       source: LambdaSource | None = None,
                       disable_lambda: bool = False, bins: int = 50,
                       snapshots: int = 5,
                       backend: str | None = None) -> tuple[EnsembleState, list[dict]]:
    """Micro-step the ensemble along the wave trajectory for duration T.

    Per micro step of length tau_Q each particle redraws lambda, moves by
    its microscopic velocity, and accumulates the segment log-weight
    -theta dt.  Particles stepping outside the domain are frozen at the
    edge and counted.  Returns the final ensemble and per-snapshot
    equivariance diagnostics (unweighted histogram is the transported
    density; the weighted one is reported alongside).
    """
    if disable_lambda:
        src_kind, mag0, jitter = SRC_BINARY, 0.0, 0.0
    else:
        if source is None:
            raise ConfigurationError(
                "a LambdaSource is required unless disable_lambda is set")
        src_kind = source.kind_index
        mag0 = source.hbar
        jitter = source.width * _SQRT3
    grid = frames.grid
    n_sub = int(round(frames.dt_window / ens.tau_Q))
    if n_sub < 1 or abs(n_sub * ens.tau_Q - frames.dt_window) > 1e-9 * frames.dt_window:
        raise ConfigurationError(
            f"tau_Q = {ens.tau_Q} does not divide the window {frames.dt_window}")
    n_windows = int(round(T / frames.dt_window)) if T > 0 else 0
    if T > 0 and abs(n_windows * frames.dt_window - T) > 1e-9 * T:
        raise ConfigurationError(
            f"window {frames.dt_window} does not divide T = {T}")
    if n_windows > frames.vb.shape[0]:
        raise ConfigurationError(
            f"wave trajectory covers {frames.vb.shape[0]} windows, "
            f"need {n_windows}")
    if bins < 2:
        raise ConfigurationError(f"bins must be >= 2, got {bins}")

    edges = np.linspace(grid.q_min, grid.q_max, bins + 1)
    # freeze just inside the last interpolation cell
    freeze_lo = grid.q_min + grid.dq
    freeze_hi = grid.q_max - grid.dq

    qs = np.ascontiguousarray(ens.positions, dtype=float).copy()
    lams = np.ascontiguousarray(ens.lambdas, dtype=float).copy()
    logws = np.ascontiguousarray(ens.log_weights, dtype=float).copy()
    frozen = np.ascontiguousarray(ens.frozen, dtype=np.uint8).copy()

    want = {int(round(x)) for x in
            np.linspace(0, n_windows, min(max(snapshots, 2), n_windows + 1))} \
        if n_windows > 0 else {0}
    diags = []
    if 0 in want:
        diags.append(_snapshot(qs, logws, frozen, frames.times[0],
                               frames.dens[0], grid, edges))
    for w in range(n_windows):
        run_ensemble_window(qs, lams, logws, frozen,
                            frames.vb[w], frames.osm[w], frames.theta[w],
                            grid.q_min, grid.dq, ens.tau_Q, n_sub,
                            step0=w * n_sub, seed=ens.seed,
                            src_kind=src_kind, mag0=mag0, jitter=jitter,
                            freeze_lo=freeze_lo, freeze_hi=freeze_hi,
                            backend=backend)
        if (w + 1) in want:
            diags.append(_snapshot(qs, logws, frozen, frames.times[w + 1],
                                   frames.dens[w + 1], grid, edges))
    out = replace(ens, positions=qs, lambdas=lams, log_weights=logws,
                  frozen=frozen, t=ens.t + n_windows * frames.dt_window)
    return out, diags
