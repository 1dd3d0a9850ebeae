"""Adaptive embedded Runge-Kutta integration with dense output.

The stepper is the classic Dormand-Prince 4(5) pair with a
proportional-integral step controller and the standard quartic continuous
extension.  The integration is fully deterministic: identical inputs produce
bit-identical trajectories on a fixed platform.

Negative undershoots of accepted states are clipped to zero, since the
positive orthant is invariant for the model; the worst pre-clip component is
recorded in the integrator statistics.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import ChemostatParams, State, vector_field
from .errors import DivergenceError, DomainError, ParameterError, StiffnessError
from .growth import GrowthFunction

# Dormand-Prince 4(5) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# Weights of the quartic interpolant's top coefficient (stage combinations).
_D = np.array([
    -12715105075 / 11282082432,
    0.0,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
])

# PI controller constants (standard choices for this pair).
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_SHRINK_MAX = 5.0   # new step no smaller than h / 5
_FAC_GROW_MAX = 0.1     # new step no larger than 10 h
_MAX_STEPS = 5_000_000  # safety net against livelock on hostile inputs

_B_ZERO = 1e-12  # biomass floor below which proportions are undefined


@dataclass(frozen=True)
class IntegratorStats:
    """Step counts and controls actually used by one integration."""

    steps_accepted: int
    steps_rejected: int
    rhs_evals: int
    rel_tol: float
    abs_tol: float
    dense_dt: float
    first_step: float
    min_component_preclip: float


@dataclass(frozen=True)
class Channels:
    """Derived channels sampled on the dense grid.

    Proportions are NaN wherever the biomass is below the definedness floor.
    The ratio block covers species 2..n and is None for single-species runs
    or when the first species starts absent.
    """

    b: np.ndarray
    p: np.ndarray
    m: np.ndarray
    r: np.ndarray | None


@dataclass(frozen=True)
class Trajectory:
    """Densely sampled solution plus the per-step interpolation data.

    ``states[k]`` is the full vector [s, x_1..x_n] at ``times[k]``; the grid
    starts at 0 and ends exactly at the horizon.  ``sample`` evaluates the
    integrator's own continuous extension between steps.
    """

    times: np.ndarray
    states: np.ndarray
    channels: Channels
    meta: IntegratorStats
    step_times: np.ndarray
    step_states: np.ndarray
    step_coeffs: np.ndarray  # (steps, 5, dim) interpolant coefficients

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_species(self) -> int:
        return self.states.shape[1] - 1

    def state_at(self, k: int) -> State:
        return State(s=float(self.states[k, 0]), x=self.states[k, 1:])

    def sample(self, t: float) -> State:
        """Continuous-extension sample at any time in [0, horizon]."""
        horizon = float(self.step_times[-1])
        slack = 1e-12 * max(1.0, horizon)
        if not (-slack <= t <= horizon + slack):
            raise DomainError(f"sample time {t!r} outside [0, {horizon!r}]")
        t = min(max(t, 0.0), horizon)
        if t >= horizon:
            return State(s=float(self.step_states[-1, 0]), x=self.step_states[-1, 1:])
        k = bisect_right(self.step_times, t) - 1
        k = min(max(k, 0), len(self.step_times) - 2)
        t0 = self.step_times[k]
        if t == t0:
            return State(s=float(self.step_states[k, 0]), x=self.step_states[k, 1:])
        h = self.step_times[k + 1] - t0
        y = _interp_eval(self.step_coeffs[k], (t - t0) / h)
        np.maximum(y, 0.0, out=y)
        return State(s=float(y[0]), x=y[1:])


def _interp_eval(cont: np.ndarray, theta: float) -> np.ndarray:
    """Evaluate the quartic continuous extension at fraction theta of a step."""
    c1, c2, c3, c4, c5 = cont
    return c1 + theta * (c2 + (1.0 - theta) * (c3 + theta * (c4 + (1.0 - theta) * c5)))


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, rel_tol: float, abs_tol: float) -> float:
    scale = abs_tol + rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, horizon, rel_tol, abs_tol) -> float:
    """Automatic first-step guess from the local derivative scale.

    Extreme derivative scales (overflowing norms) fall back to a tiny
    positive step; the main loop's rejection control then either recovers
    or reports step-size underflow.
    """
    scale = abs_tol + rel_tol * np.abs(y0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
        d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
        if not math.isfinite(d0) or not math.isfinite(d1):
            return min(1e-6, horizon)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, horizon)
        y1 = y0 + h0 * f0
        f1 = f(t0 + h0, y1)
        d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
        if not math.isfinite(d2):
            return min(1e-6, horizon)
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, horizon)


def simulate(
    params: ChemostatParams,
    growths: Sequence[GrowthFunction],
    x0: State,
    horizon: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    dense_dt: float | None = None,
) -> Trajectory:
    """Integrate the chemostat from ``x0`` over [0, horizon].

    Dense output is emitted on a uniform grid with spacing at most
    ``dense_dt`` (default horizon/2000), including both endpoints.  Raises
    :class:`StiffnessError` on step-size underflow and
    :class:`DivergenceError` if the state leaves the finite range.
    """
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise ParameterError(f"horizon must be finite and > 0, got {horizon!r}")
    if not (0.0 < rel_tol < 1.0) or not (0.0 < abs_tol < 1.0):
        raise ParameterError("tolerances must lie in (0, 1)")
    if len(growths) != x0.n:
        raise ParameterError("growth law count must match species count")
    if dense_dt is None:
        dense_dt = horizon / 2000.0
    if not (math.isfinite(dense_dt) and dense_dt > 0.0):
        raise ParameterError(f"dense_dt must be finite and > 0, got {dense_dt!r}")

    f = vector_field(params, growths)
    y = np.concatenate(([x0.s], x0.x)).astype(float)
    t = 0.0
    k1 = f(t, y)
    n_evals = 1

    h = _initial_step(f, t, y, k1, horizon, rel_tol, abs_tol)
    n_evals += 2
    first_step = h

    step_times = [0.0]
    step_states = [y.copy()]
    step_conts: list[np.ndarray] = []

    n_accepted = 0
    n_rejected = 0
    fac_old = 1e-4
    min_preclip = float(np.min(y))
    K = np.empty((7, y.size))
    # Below this step size the explicit pair cannot make useful progress on
    # the requested horizon; treat it as stiffness (or divergence when the
    # state has already left any physical scale).
    min_step = 1e-14 * horizon

    while t < horizon:
        # Judge underflow on the controller's proposal, not on the final
        # sliver left before the horizon, which may be one ulp wide.
        if h < min_step or t + min(h, horizon - t) <= t:
            if float(np.max(np.abs(y))) > 1e100:
                raise DivergenceError(t, y, "state grew beyond any physical scale")
            raise StiffnessError(t, y)
        h = min(h, horizon - t)
        if n_accepted + n_rejected >= _MAX_STEPS:
            raise StiffnessError(t, y, f"step budget of {_MAX_STEPS} exhausted")

        with np.errstate(over="ignore", invalid="ignore"):
            K[0] = k1
            for i, a_row in enumerate(_A):
                K[i + 1] = f(t + _C[i + 1] * h, y + h * (a_row @ K[: i + 1]))
            y_new = y + h * (_B @ K[:6])
            K[6] = f(t + h, y_new)
            n_evals += 6
            err = _error_norm(h * (_E @ K), y, y_new, rel_tol, abs_tol)

        if not np.all(np.isfinite(y_new)) or not math.isfinite(err):
            # overflow inside the trial step: reject as hard as possible
            n_rejected += 1
            h = h / _FAC_SHRINK_MAX
            continue

        if err <= 1.0:
            # Accept: build the interpolant before clipping, then clip.
            ydiff = y_new - y
            bspl = h * K[0] - ydiff
            cont = np.stack([
                y,
                ydiff,
                bspl,
                ydiff - h * K[6] - bspl,
                h * (_D @ K),
            ])
            step_conts.append(cont)

            t = t + h
            low = float(np.min(y_new))
            if low < min_preclip:
                min_preclip = low
            if low < 0.0:
                y = np.maximum(y_new, 0.0)
                k1 = f(t, y)
                n_evals += 1
            else:
                y = y_new
                k1 = K[6].copy()
            step_times.append(t)
            step_states.append(y.copy())
            n_accepted += 1

            fac = (err**_EXPO) / (fac_old**_BETA)
            fac = max(_FAC_GROW_MAX, min(_FAC_SHRINK_MAX, fac / _SAFETY))
            h = h / fac
            fac_old = max(err, 1e-4)
        else:
            n_rejected += 1
            h = h / min(_FAC_SHRINK_MAX, (err**_EXPO) / _SAFETY)

    step_times_arr = np.array(step_times)
    step_states_arr = np.array(step_states)
    step_conts_arr = np.array(step_conts)

    n_dense = max(1, math.ceil(horizon / dense_dt))
    times = np.linspace(0.0, horizon, n_dense + 1)
    states = _dense_states(times, step_times_arr, step_states_arr, step_conts_arr)

    meta = IntegratorStats(
        steps_accepted=n_accepted,
        steps_rejected=n_rejected,
        rhs_evals=n_evals,
        rel_tol=rel_tol,
        abs_tol=abs_tol,
        dense_dt=horizon / n_dense,
        first_step=first_step,
        min_component_preclip=min_preclip,
    )
    channels = _derive_channel_arrays(states, x0)
    for arr in (times, states, step_times_arr, step_states_arr, step_conts_arr):
        arr.setflags(write=False)
    return Trajectory(
        times=times,
        states=states,
        channels=channels,
        meta=meta,
        step_times=step_times_arr,
        step_states=step_states_arr,
        step_coeffs=step_conts_arr,
    )


def _dense_states(times, step_times, step_states, step_conts) -> np.ndarray:
    out = np.empty((times.size, step_states.shape[1]))
    idx = np.searchsorted(step_times, times, side="right") - 1
    np.clip(idx, 0, len(step_times) - 2, out=idx)
    for j, tt in enumerate(times):
        k = idx[j]
        t0 = step_times[k]
        if tt == t0:
            out[j] = step_states[k]
        elif tt >= step_times[-1]:
            out[j] = step_states[-1]
        else:
            h = step_times[k + 1] - t0
            out[j] = _interp_eval(step_conts[k], (tt - t0) / h)
    np.maximum(out, 0.0, out=out)
    return out


def _derive_channel_arrays(states: np.ndarray, x0: State) -> Channels:
    x = states[:, 1:]
    b = x.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(b[:, None] >= _B_ZERO, x / b[:, None], np.nan)
    m = states[:, 0] + b
    r = None
    if x.shape[1] >= 2 and x0.x[0] > 0.0:
        # the ratio may overflow to inf when the lead density underflows;
        # downstream consumers mask non-finite samples
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = np.where(x[:, :1] > 0.0, x[:, 1:] / x[:, :1], np.nan)
        r.setflags(write=False)
    for arr in (b, p, m):
        arr.setflags(write=False)
    return Channels(b=b, p=p, m=m, r=r)


def sample(trajectory: Trajectory, t: float) -> State:
    """Continuous-extension sample; functional form of ``Trajectory.sample``."""
    return trajectory.sample(t)


@dataclass(frozen=True)
class EntryRecord:
    """Persistent-entry report for one interval.

    ``entry_time`` is the infimum of times from which the tracked value stays
    in the interval up to the horizon (excursions no longer than the grace
    duration are tolerated); None when no such time exists.  ``excursions``
    counts exits after the first entry.  ``persistent`` is True only when no
    exit at all follows the entry time.
    """

    interval: tuple[float, float]
    entry_time: float | None
    persistent: bool
    excursions: int


def _membership_runs(inside: np.ndarray) -> list[tuple[int, int, bool]]:
    """Maximal runs of constant membership as (start, end_inclusive, inside)."""
    runs = []
    start = 0
    for k in range(1, inside.size):
        if inside[k] != inside[start]:
            runs.append((start, k - 1, bool(inside[start])))
            start = k
    runs.append((start, inside.size - 1, bool(inside[start])))
    return runs


def scan_persistent_entry(
    times: np.ndarray,
    inside: np.ndarray,
    grace: float = 0.0,
) -> tuple[int | None, int, bool]:
    """Locate the final persistent entry on sampled membership values.

    Returns (index of the first sample of the persistent tail, number of
    exits after the first entry, persistent flag).  The index is None when
    the samples never enter or end outside beyond grace tolerance.
    """
    if not np.any(inside):
        return None, 0, False
    runs = _membership_runs(inside)

    # Walk backwards: the persistent tail may absorb outside runs shorter
    # than the grace duration, but a trailing outside run always blocks.
    entry_run = None
    for pos in range(len(runs) - 1, -1, -1):
        start, end, is_in = runs[pos]
        if is_in:
            entry_run = pos
            continue
        duration = float(times[end] - times[start]) + _run_pad(times, start, end)
        if pos == len(runs) - 1 or duration > grace:
            break
    if entry_run is None:
        return None, _exits_after_first_entry(runs), False

    entry_idx = runs[entry_run][0]
    persistent = entry_run == len(runs) - 1
    return entry_idx, _exits_after_first_entry(runs), persistent


def _run_pad(times: np.ndarray, start: int, end: int) -> float:
    # Conservative padding: membership between samples is unknown, so an
    # outside run extends half a spacing on each available side.
    pad = 0.0
    if start > 0:
        pad += 0.5 * float(times[start] - times[start - 1])
    if end < times.size - 1:
        pad += 0.5 * float(times[end + 1] - times[end])
    return pad


def _exits_after_first_entry(runs) -> int:
    first_in = next((pos for pos, r in enumerate(runs) if r[2]), None)
    if first_in is None:
        return 0
    return sum(1 for r in runs[first_in + 1 :] if not r[2])


def first_persistent_entry(
    trajectory: Trajectory,
    interval: tuple[float, float],
    grace: float = 0.0,
) -> EntryRecord:
    """Persistent entry of the substrate channel into a closed interval.

    The entry is located on the dense samples and then refined by bisecting
    the continuous extension across the bracketing spacing.  Persistence is
    always relative to the finite horizon.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ParameterError(f"interval must satisfy lo < hi, got {interval!r}")
    s = trajectory.states[:, 0]
    t = trajectory.times
    inside = (s >= lo) & (s <= hi)

    entry_idx, excursions, persistent = scan_persistent_entry(t, inside, grace)
    if entry_idx is None:
        return EntryRecord((lo, hi), None, False, excursions)
    if entry_idx == 0:
        return EntryRecord((lo, hi), 0.0, persistent, excursions)

    t_out = float(t[entry_idx - 1])
    t_in = float(t[entry_idx])
    tol = max(1e-12, 1e-9 * trajectory.horizon)
    while t_in - t_out > tol:
        mid = 0.5 * (t_out + t_in)
        sm = trajectory.sample(mid).s
        if lo <= sm <= hi:
            t_in = mid
        else:
            t_out = mid
    return EntryRecord((lo, hi), t_in, persistent, excursions)
