"""Damped classical phonon dynamics driven by quantum forces.

One step of the alternating scheme: ask a density provider for the
electron density at the current displacements, then advance (Q, P) by one
RK4 step with that density held fixed. The provider is either the exact
solver or a learned surrogate; the integrator cannot tell them apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import qss
from .core import ClassicalState, HolsteinParams, ObservableRecord, Trajectory

__all__ = [
    "IntegrationError",
    "FieldProbe",
    "ForceField",
    "ExactField",
    "CountingField",
    "EnsembleStats",
    "classical_force",
    "rk4_step",
    "evolve",
    "ensemble_run",
    "write_ensemble_csv",
]

#: abort threshold for runaway displacements
BLOWUP_LIMIT = 1e6


class IntegrationError(RuntimeError):
    """Integrator received or produced a non-finite state."""


@dataclass(frozen=True)
class FieldProbe:
    """Density at one configuration, plus the solver state when available.

    ``gs`` is None for surrogate providers; observable extraction falls
    back to density-only quantities in that case.
    """

    n: np.ndarray
    gs: qss.GroundState | None = None


class ForceField(Protocol):
    """Density provider contract: given (g, Q), a length-L density in [0,1].

    ``kind`` distinguishes the exact solver from learned surrogates in
    output metadata. Implementations must be safe for concurrent read-only
    use, so ``probe`` cannot rely on internal mutable caches.
    """

    kind: str

    def probe(self, g: float, Q: np.ndarray) -> FieldProbe: ...

    def record(self, probe: FieldProbe, Q: np.ndarray, g: float) -> ObservableRecord: ...


class ExactField:
    """Exact single-particle solver as a force field."""

    kind = "exact-QSS"

    def __init__(self, filling: int):
        self.filling = filling

    def probe(self, g: float, Q: np.ndarray) -> FieldProbe:
        gs = qss.solve(Q, g, self.filling)
        return FieldProbe(n=qss.density(gs), gs=gs)

    def record(self, probe: FieldProbe, Q: np.ndarray, g: float) -> ObservableRecord:
        gs = probe.gs
        return ObservableRecord(
            n=probe.n,
            cdw=qss.cdw_of(probe.n),
            hop=qss.correlation(gs, 0, 1),
            nnn=qss.correlation(gs, 0, 2),
            gs_energy=qss.gs_energy(gs, Q, g),
        )


class CountingField:
    """Wrapper that counts probes; for solver-budget accounting in tests."""

    def __init__(self, inner: ForceField):
        self.inner = inner
        self.count = 0

    @property
    def kind(self) -> str:
        return self.inner.kind

    def probe(self, g: float, Q: np.ndarray) -> FieldProbe:
        self.count += 1
        return self.inner.probe(g, Q)

    def record(self, probe: FieldProbe, Q: np.ndarray, g: float) -> ObservableRecord:
        return self.inner.record(probe, Q, g)


def classical_force(
    state: ClassicalState, n: np.ndarray, params: HolsteinParams
) -> tuple[np.ndarray, np.ndarray]:
    """dQ_i/dt = P_i/M; dP_i/dt = -k Q_i + g (n_i - 1/2) - gamma P_i."""
    dQ = state.P / params.M
    dP = -params.k * state.Q + params.g * (np.asarray(n) - 0.5) - params.gamma * state.P
    return dQ, dP


def _rk4(Q, P, n, params: HolsteinParams):
    """RK4 update of (Q, P) with the density vector frozen."""
    k_, g, M, gam, dt = params.k, params.g, params.M, params.gamma, params.dt
    f = g * (n - 0.5)

    def deriv(q, p):
        return p / M, -k_ * q + f - gam * p

    k1q, k1p = deriv(Q, P)
    k2q, k2p = deriv(Q + 0.5 * dt * k1q, P + 0.5 * dt * k1p)
    k3q, k3p = deriv(Q + 0.5 * dt * k2q, P + 0.5 * dt * k2p)
    k4q, k4p = deriv(Q + dt * k3q, P + dt * k3p)
    Qn = Q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    Pn = P + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return Qn, Pn


def rk4_step(
    state: ClassicalState, n: np.ndarray, params: HolsteinParams
) -> ClassicalState:
    """One RK4 step of dt with the density held fixed across substages."""
    n = np.asarray(n, dtype=float)
    if not (np.all(np.isfinite(state.Q)) and np.all(np.isfinite(state.P))
            and np.all(np.isfinite(n))):
        raise IntegrationError(f"non-finite state or density at t={state.t}")
    Qn, Pn = _rk4(state.Q, state.P, n, params)
    if not (np.all(np.isfinite(Qn)) and np.all(np.isfinite(Pn))):
        raise IntegrationError(f"integration produced non-finite state at t={state.t}")
    return ClassicalState(t=state.t + params.dt, Q=Qn, P=Pn)


def _rk4_step_substage(
    state: ClassicalState, field: ForceField, params: HolsteinParams
) -> ClassicalState:
    """RK4 with the density recomputed at every substage (convergence studies)."""
    k_, g, M, gam, dt = params.k, params.g, params.M, params.gamma, params.dt

    def deriv(q, p):
        n = field.probe(g, q).n
        return p / M, -k_ * q + g * (n - 0.5) - gam * p

    Q, P = state.Q, state.P
    k1q, k1p = deriv(Q, P)
    k2q, k2p = deriv(Q + 0.5 * dt * k1q, P + 0.5 * dt * k1p)
    k3q, k3p = deriv(Q + 0.5 * dt * k2q, P + 0.5 * dt * k2p)
    k4q, k4p = deriv(Q + dt * k3q, P + dt * k3p)
    Qn = Q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    Pn = P + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    if not (np.all(np.isfinite(Qn)) and np.all(np.isfinite(Pn))):
        raise IntegrationError(f"integration produced non-finite state at t={state.t}")
    return ClassicalState(t=state.t + dt, Q=Qn, P=Pn)


def evolve(
    initial: ClassicalState,
    params: HolsteinParams,
    steps: int,
    field: ForceField,
    record_stride: int = 1,
    substage_density: bool = False,
) -> Trajectory:
    """Alternate density probes and RK4 steps for `steps` steps.

    Records every `record_stride`-th step starting from the initial state,
    one probe per step plus one for the final record. A runaway state
    (max|Q| > 1e6 or non-finite) aborts the run; the trajectory keeps the
    samples recorded so far and notes the last valid step index.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")

    g = params.g
    state = initial
    probe = field.probe(g, state.Q)

    times, Qs, Ps = [state.t], [state.Q], [state.P]
    recs = [field.record(probe, state.Q, g)]
    aborted_at = None

    for step in range(1, steps + 1):
        try:
            if substage_density:
                state = _rk4_step_substage(state, field, params)
            else:
                state = rk4_step(state, probe.n, params)
        except IntegrationError:
            aborted_at = step - 1
            break
        if np.max(np.abs(state.Q)) > BLOWUP_LIMIT:
            aborted_at = step - 1
            break
        probe = field.probe(g, state.Q)
        if step % record_stride == 0:
            times.append(state.t)
            Qs.append(state.Q)
            Ps.append(state.P)
            recs.append(field.record(probe, state.Q, g))

    return Trajectory(
        params=params,
        times=np.array(times),
        Q=np.array(Qs),
        P=np.array(Ps),
        n=np.array([r.n for r in recs]),
        cdw=np.array([r.cdw for r in recs]),
        hop=np.array([r.hop for r in recs]),
        nnn=np.array([r.nnn for r in recs]),
        gs_energy=np.array([r.gs_energy for r in recs]),
        record_stride=record_stride,
        aborted_at_step=aborted_at,
    )


@dataclass(frozen=True)
class EnsembleStats:
    """Cross-path statistics of Q_i Q_j at one target time.

    ``qq_mean``/``qq_var`` are L x L elementwise mean and population
    variance of the outer product Q_i Q_j over completed paths, sampled at
    the recorded time nearest ``target_time``. ``cdw_times`` carries the
    common record grid for the cdw mean/variance series. Paths that
    aborted are listed with their last valid step and excluded from the
    statistics.
    """

    count: int
    target_time: float
    qq_mean: np.ndarray
    qq_var: np.ndarray
    cdw_times: np.ndarray
    cdw_series_mean: np.ndarray
    cdw_series_var: np.ndarray
    aborted: tuple[tuple[int, int], ...]


def ensemble_run(
    seeds: list[int],
    params: HolsteinParams,
    steps: int,
    field: ForceField,
    target_time: float,
    q_std: float = 0.2,
    record_stride: int = 10,
) -> EnsembleStats:
    """Independent evolutions from seeded initial states; see EnsembleStats."""
    if len(seeds) < 2:
        raise ValueError("ensemble needs at least 2 seeds")
    from .core import sample_initial_state

    qq, cdws, aborted = [], [], []
    t_ref = None
    for seed in seeds:
        init = sample_initial_state(params, q_std, seed)
        traj = evolve(init, params, steps, field, record_stride=record_stride)
        if traj.aborted_at_step is not None:
            aborted.append((int(seed), int(traj.aborted_at_step)))
            continue
        i = int(np.argmin(np.abs(traj.times - target_time)))
        qq.append(np.outer(traj.Q[i], traj.Q[i]))
        cdws.append(traj.cdw)
        t_ref = traj.times
    if not qq:
        raise IntegrationError("every ensemble path aborted before the target time")

    qq = np.array(qq)
    cdws = np.array(cdws)
    return EnsembleStats(
        count=len(qq),
        target_time=target_time,
        qq_mean=qq.mean(axis=0),
        qq_var=qq.var(axis=0),
        cdw_times=t_ref,
        cdw_series_mean=cdws.mean(axis=0),
        cdw_series_var=cdws.var(axis=0),
        aborted=tuple(aborted),
    )


def write_ensemble_csv(
    stats: EnsembleStats, params: HolsteinParams, path
) -> None:
    """(i, j, qq_mean, qq_var) rows under one '#' run-metadata comment line."""
    from .core import FLOAT_FMT, atomic_write_text

    meta = (
        f"# paths={stats.count} target_time={stats.target_time:g} "
        f"L={params.L} g={params.g:g} k={params.k:g} M={params.M:g} "
        f"gamma={params.gamma:g} dt={params.dt:g} aborted={len(stats.aborted)}"
    )
    lines = [meta, "i,j,qq_mean,qq_var"]
    L = params.L
    for i in range(L):
        for j in range(L):
            lines.append(
                f"{i},{j},{FLOAT_FMT % stats.qq_mean[i, j]},{FLOAT_FMT % stats.qq_var[i, j]}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")
