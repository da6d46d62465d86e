"""Interacting Brownian proliferation dynamics.

Each alive particle diffuses with generator (1/2) Laplacian, spawns a
child at its own position at unit rate, and dies at rate
(1/N) sum_k theta^eps(x_j - x_k); the sum runs over all alive particles
and includes k = j by default.  A clamped variant replaces the
birth/death pair by a single birth at rate (1 - D_j)_+.

Lineages are tracked with binary multi-indexes: progenitor i carries
label (i,), and at every birth event the parent's label extends by 1
while the child receives the sibling label ending in 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .kernels import MollifierSpec, RescaledKernel
from .spatial_index import build_cell_grid, local_interaction_sums


@dataclass(frozen=True)
class InitialCondition:
    """Initial density profile u0: bounded, supported in a ball."""

    shape: str = "uniform-ball"
    height: float = 0.5
    radius: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.shape not in ("uniform-ball", "smooth-bump", "zero"):
            raise ValueError(f"unknown initial shape {self.shape!r}")
        if self.height < 0 or self.radius <= 0:
            raise ValueError("height must be >= 0 and radius > 0")

    @property
    def gamma(self):
        """Uniform upper bound on u0."""
        return self.height

    @property
    def mass(self):
        if self.shape == "zero" or self.height == 0.0:
            return 0.0
        d, r = self.dim, self.radius
        ball = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * r ** d
        if self.shape == "uniform-ball":
            return self.height * ball
        # (1 - |x/R|^2)^3 profile: Beta-function mass
        return (self.height * math.pi ** (d / 2.0) * math.gamma(4.0)
                / math.gamma(d / 2.0 + 4.0) * r ** d)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            r2 = x * x
        else:
            r2 = np.sum(x * x, axis=-1)
        inside = r2 < self.radius ** 2
        if self.shape == "zero" or self.height == 0.0:
            return np.zeros_like(np.asarray(r2, dtype=float))
        if self.shape == "uniform-ball":
            return self.height * inside.astype(float)
        q = np.clip(1.0 - r2 / self.radius ** 2, 0.0, None)
        return self.height * q ** 3


@dataclass(frozen=True)
class ModelParameters:
    """Scales and scheme switches for one simulation."""

    n_scale: int
    dim: int = 1
    horizon: float = 1.0
    dt: float | None = None          # None: adaptive, max-rate * dt <= max_rate_dt
    epsilon: float | None = None     # None: local rule eps = N^{-1/d}
    rate_variant: str = "unclamped"  # or "clamped"
    scheme: str = "tau-leap"         # or "thinning"
    # Self term of the death-rate sum.  At the strict local scaling
    # eps^{-d} = N the k = j term adds a constant theta(0) to every
    # death rate and shifts the hydrodynamic limit away from the
    # logistic reaction, so the dynamics exclude it by default.
    include_self: bool = False
    seed: int = 0
    explosion_factor: float = 10.0
    max_rate_dt: float = 0.1
    rng_mode: str = "sequential"     # or "per-label" (couplable substreams)
    disable_deaths: bool = False
    disable_births: bool = False
    constant_death_rate: float | None = None

    def __post_init__(self):
        if self.n_scale < 1:
            raise ValueError("n_scale must be a positive integer")
        if self.rate_variant not in ("unclamped", "clamped"):
            raise ValueError("rate_variant must be 'unclamped' or 'clamped'")
        if self.scheme not in ("tau-leap", "thinning"):
            raise ValueError("scheme must be 'tau-leap' or 'thinning'")
        if self.rng_mode not in ("sequential", "per-label"):
            raise ValueError("rng_mode must be 'sequential' or 'per-label'")
        if self.epsilon is not None and not 0.0 < self.epsilon <= 1.0:
            raise ValueError("explicit epsilon must lie in (0, 1]")

    @property
    def eps(self):
        if self.epsilon is not None:
            return self.epsilon
        return self.n_scale ** (-1.0 / self.dim)

    @property
    def occupancy_constant(self):
        """The recorded constant C with eps^{-d} = C N."""
        return self.eps ** (-self.dim) / self.n_scale

    def interaction_kernel(self):
        return RescaledKernel(MollifierSpec(self.dim), self.eps)


@dataclass
class ParticleConfiguration:
    """Positions and lineage labels of all alive particles at one instant."""

    positions: np.ndarray            # (n, d)
    labels: list                     # tuples (a1, ..., an), binary past a1
    ids: np.ndarray                  # stable integer identity per particle
    n_scale: int
    eps: float
    time: float = 0.0
    n_initial: int = 0
    next_id: int = 0
    step_count: int = 0
    label_hashes: np.ndarray | None = None  # uint64, per-label substream keys

    @property
    def alive_count(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def copy(self):
        return ParticleConfiguration(
            self.positions.copy(), list(self.labels), self.ids.copy(),
            self.n_scale, self.eps, self.time, self.n_initial, self.next_id,
            self.step_count,
            None if self.label_hashes is None else self.label_hashes.copy())


def make_rng(seed):
    """Counter-based generator used for all simulations."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


# splitmix64-style mixing for the per-label counter substreams
_MIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (np.asarray(z, dtype=np.uint64) + _MIX_GAMMA)
    z ^= z >> np.uint64(30)
    z *= _MIX_M1
    z ^= z >> np.uint64(27)
    z *= _MIX_M2
    z ^= z >> np.uint64(31)
    return z


def _label_stream_uniform(seed, step, channel, hashes):
    """Deterministic uniforms in (0, 1) keyed by (seed, step, channel, label)."""
    header = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
                    ^ _mix64(np.uint64(step)) ^ _mix64(np.uint64(channel + 7)))
    bits = _mix64(hashes ^ header)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def _child_hashes(parent_hashes, digit):
    return _mix64(parent_hashes ^ _mix64(np.uint64(digit)))


def sample_initial(ic, params, rng):
    """Draw round(N * mass) i.i.d. points with density u0 / mass.

    Rejection sampling against the uniform law on the bounding box with
    envelope gamma = sup u0.
    """
    if ic.mass <= 0:
        raise ValueError("initial condition must carry positive mass")
    if ic.dim != params.dim:
        raise ValueError("dimension mismatch between u0 and parameters")
    n0 = int(round(params.n_scale * ic.mass))
    d, r, gamma = ic.dim, ic.radius, ic.gamma
    out = np.empty((n0, d))
    filled = 0
    budget = 1000
    while filled < n0 and budget > 0:
        want = n0 - filled
        batch = max(256, 2 * want)
        pts = rng.uniform(-r, r, (batch, d))
        accept = rng.random(batch) * gamma < ic.evaluate(pts)
        pts = pts[accept][:want]
        out[filled:filled + len(pts)] = pts
        filled += len(pts)
        budget -= 1
    if filled < n0:
        raise RuntimeError("rejection sampler exceeded its iteration budget")
    labels = [(i + 1,) for i in range(n0)]
    hashes = _mix64(np.arange(1, n0 + 1, dtype=np.uint64)) \
        if params.rng_mode == "per-label" else None
    return ParticleConfiguration(out, labels, np.arange(1, n0 + 1, dtype=np.int64),
                                 params.n_scale, params.eps, 0.0, n0, n0 + 1, 0,
                                 hashes)


def death_rates(config, params, positions=None):
    """D_j = (1/N) sum_k theta^eps(x_j - x_k) over alive particles."""
    pos = config.positions if positions is None else positions
    if params.constant_death_rate is not None:
        return np.full(pos.shape[0], params.constant_death_rate)
    if params.disable_deaths:
        return np.zeros(pos.shape[0])
    kernel = params.interaction_kernel()
    grid = build_cell_grid(pos, kernel.support_radius)
    sums = local_interaction_sums(grid, kernel, pos, include_self=params.include_self)
    return sums / params.n_scale


def _check_explosion(config, params):
    cap = params.explosion_factor * max(config.n_initial, 1) * math.exp(config.time)
    if config.alive_count > cap:
        raise RuntimeError(
            f"population {config.alive_count} exceeded explosion guard "
            f"{cap:.0f} at t={config.time:.4f}")


def _resolve_events(config, params, pos, births, deaths):
    """Apply simultaneous birth/death masks against one frozen snapshot."""
    n = pos.shape[0]
    survivors = np.flatnonzero(~deaths)
    parents = np.flatnonzero(births)
    new_positions = np.concatenate([pos[survivors], pos[parents]], axis=0)
    new_ids = np.concatenate([config.ids[survivors],
                              config.next_id + np.arange(len(parents))])
    labels = config.labels
    new_labels = [labels[i] + (1,) if births[i] else labels[i] for i in survivors]
    new_labels.extend(labels[i] + (2,) for i in parents)
    hashes = None
    if config.label_hashes is not None:
        old = config.label_hashes
        kept = np.where(births[survivors], _child_hashes(old[survivors], 1),
                        old[survivors])
        hashes = np.concatenate([kept, _child_hashes(old[parents], 2)])
    return new_positions, new_labels, new_ids, hashes, len(parents)


def step(config, params, rng, dt):
    """One tau-leap step: diffuse, freeze, then resolve birth/death draws.

    Returns a new configuration; dt = 0 is the identity.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = config.copy()
    if dt == 0.0 or config.alive_count == 0:
        out.time = config.time + dt
        return out
    n, d = config.positions.shape
    if params.rng_mode == "per-label":
        if config.label_hashes is None:
            raise ValueError("per-label rng mode requires hash-tracking configs")
        u = np.stack([_label_stream_uniform(params.seed, config.step_count, axis,
                                            config.label_hashes)
                      for axis in range(d)], axis=-1)
        increments = special.ndtri(u) * math.sqrt(dt)
    else:
        increments = rng.normal(0.0, math.sqrt(dt), (n, d))
    pos = config.positions + increments

    rates = death_rates(config, params, positions=pos)
    if params.rng_mode == "per-label":
        u_birth = _label_stream_uniform(params.seed, config.step_count, 100,
                                        config.label_hashes)
        u_death = _label_stream_uniform(params.seed, config.step_count, 101,
                                        config.label_hashes)
    else:
        u_birth = rng.random(n)
        u_death = rng.random(n)
    if params.rate_variant == "clamped":
        birth_rate = np.clip(1.0 - rates, 0.0, None)
        births = u_birth < -np.expm1(-birth_rate * dt)
        deaths = np.zeros(n, dtype=bool)
    else:
        births = u_birth < -math.expm1(-dt)
        deaths = u_death < -np.expm1(-rates * dt)
    if params.disable_births:
        births[:] = False

    new_pos, new_labels, new_ids, hashes, n_born = _resolve_events(
        config, params, pos, births, deaths)
    out.positions = new_pos
    out.labels = new_labels
    out.ids = new_ids
    out.label_hashes = hashes
    out.next_id = config.next_id + n_born
    out.time = config.time + dt
    out.step_count = config.step_count + 1
    out._max_rate = 1.0 + (rates.max() if len(rates) else 0.0)
    _check_explosion(out, params)
    return out


def step_thinning(config, params, rng, dt):
    """Diffusion sub-step followed by an exact jump chain on frozen positions.

    Events are proposed at the global bound N(t) (1 + D_max) with
    D_max = theta(0) eps^{-d} N(t) / N and accepted by the true rates,
    so the birth/death chain over the window is statistically exact
    conditionally on the frozen positions.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = config.copy()
    if dt == 0.0 or config.alive_count == 0:
        out.time = config.time + dt
        return out
    n, d = config.positions.shape
    pos = config.positions + rng.normal(0.0, math.sqrt(dt), (n, d))
    kernel = params.interaction_kernel()
    peak = kernel.peak
    positions = list(pos)
    labels = list(config.labels)
    ids = list(config.ids)
    next_id = config.next_id
    clamped = params.rate_variant == "clamped"

    def true_death_rate(j):
        if params.constant_death_rate is not None:
            return params.constant_death_rate
        if params.disable_deaths:
            return 0.0
        diffs = np.asarray(positions) - positions[j]
        vals = kernel(diffs)
        if not params.include_self:
            vals[j] = 0.0
        return float(vals.sum()) / params.n_scale

    elapsed = 0.0
    while positions:
        n_cur = len(positions)
        if params.disable_deaths:
            d_max = 0.0
        elif params.constant_death_rate is not None:
            d_max = params.constant_death_rate
        else:
            d_max = peak * n_cur / params.n_scale
        bound = 1.0 if clamped else 1.0 + d_max
        elapsed += rng.exponential(1.0 / (n_cur * bound))
        if elapsed > dt:
            break
        j = int(rng.integers(n_cur))
        u = rng.random() * bound
        if clamped:
            accept = max(0.0, 1.0 - true_death_rate(j))
            if not params.disable_births and u < accept:
                positions.append(positions[j].copy())
                labels.append(labels[j] + (2,))
                labels[j] = labels[j] + (1,)
                ids.append(next_id)
                next_id += 1
        elif u < 1.0:
            if not params.disable_births:
                positions.append(positions[j].copy())
                labels.append(labels[j] + (2,))
                labels[j] = labels[j] + (1,)
                ids.append(next_id)
                next_id += 1
        elif u < 1.0 + true_death_rate(j):
            positions.pop(j)
            labels.pop(j)
            ids.pop(j)
        if len(positions) > params.explosion_factor * max(config.n_initial, 1) \
                * math.exp(config.time + dt):
            raise RuntimeError("population exceeded explosion guard (thinning)")

    out.positions = (np.asarray(positions).reshape(-1, d)
                     if positions else np.empty((0, d)))
    out.labels = labels
    out.ids = np.asarray(ids, dtype=np.int64)
    out.next_id = next_id
    out.time = config.time + dt
    out.step_count = config.step_count + 1
    return out


@dataclass
class Trajectory:
    """Snapshots plus per-step diagnostics from one simulation run."""

    horizon: float
    times: np.ndarray
    snapshots: list
    step_times: np.ndarray
    population: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    params: ModelParameters

    @property
    def normalized_population(self):
        return self.population / self.params.n_scale


def run(config, params, snapshot_times, rng=None):
    """Advance the configuration to the horizon, snapshotting on the way.

    Deterministic given (seed, params): the returned snapshots are deep
    copies taken exactly at the requested times.
    """
    snapshot_times = np.asarray(sorted(snapshot_times), dtype=float)
    if len(snapshot_times) and (snapshot_times[0] < config.time - 1e-12
                                or snapshot_times[-1] > params.horizon + 1e-12):
        raise ValueError("snapshot times must lie within [t0, horizon]")
    if rng is None:
        rng = make_rng(params.seed)
    stepper = step_thinning if params.scheme == "thinning" else step

    snaps, times = [], []
    step_times, pops, births, deaths = [config.time], [config.alive_count], [0], [0]

    max_rate = 1.0
    if params.constant_death_rate is not None:
        max_rate += params.constant_death_rate
    elif not params.disable_deaths and config.alive_count:
        max_rate += float(death_rates(config, params).max())

    targets = list(snapshot_times)
    if not targets or targets[-1] < params.horizon:
        targets.append(params.horizon)
    for target in targets:
        while config.time < target - 1e-12:
            nominal = params.dt if params.dt is not None \
                else params.max_rate_dt / max_rate
            dt = min(nominal, target - config.time)
            prev_n, prev_next_id = config.alive_count, config.next_id
            config = stepper(config, params, rng, dt)
            max_rate = getattr(config, "_max_rate", max_rate)
            born = config.next_id - prev_next_id
            step_times.append(config.time)
            pops.append(config.alive_count)
            births.append(born)
            deaths.append(prev_n + born - config.alive_count)
        if len(snapshot_times) and np.any(np.isclose(snapshot_times, target)):
            snaps.append(config.copy())
            times.append(config.time)
    return Trajectory(params.horizon, np.asarray(times), snaps,
                      np.asarray(step_times), np.asarray(pops, dtype=np.int64),
                      np.asarray(births, dtype=np.int64),
                      np.asarray(deaths, dtype=np.int64), params)


def write_snapshots_csv(trajectory, path):
    """One row per particle per snapshot: time, id, lineage string, coords."""
    dim = trajectory.params.dim
    header = ["time", "particle_id", "lineage"] + [f"x{k}" for k in range(dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, snap in zip(trajectory.times, trajectory.snapshots):
            for i in range(snap.alive_count):
                lineage = ".".join(str(a) for a in snap.labels[i])
                writer.writerow([f"{t:.10g}", int(snap.ids[i]), lineage]
                                + [f"{c:.17g}" for c in snap.positions[i]])
