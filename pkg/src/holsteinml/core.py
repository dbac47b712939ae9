"""Parameters, state containers, trajectory records, and seeded sampling.

Everything in here is an immutable value: arrays are copied on construction
and marked read-only, so states and trajectories can be shared freely
between threads or processes.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

__all__ = [
    "HolsteinParams",
    "ClassicalState",
    "ObservableRecord",
    "Trajectory",
    "DimensionlessScales",
    "dimensionless_scales",
    "sample_initial_state",
    "substream",
    "child_seed",
    "trajectory_header",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "atomic_write_text",
]

#: float format used for every delimited text output (17 significant digits
#: round-trips IEEE754 doubles exactly).
FLOAT_FMT = "%.17g"


def _frozen_array(x, length=None, name="array") -> np.ndarray:
    a = np.asarray(x, dtype=float).copy()
    if length is not None and a.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HolsteinParams:
    """Physical and numerical constants of one simulation.

    Energies are measured in units of the hopping ``t_nn``, which is fixed
    at 1 in this version; the field exists for clarity only.
    """

    L: int
    g: float
    k: float = 1.0
    M: float = 1.0
    gamma: float = 0.1
    dt: float = 0.01
    t_nn: float = 1.0
    filling: int | None = None

    def __post_init__(self):
        if self.L % 2 != 0 or self.L < 4:
            raise ValueError(f"L must be even and >= 4, got {self.L}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.M <= 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.t_nn != 1.0:
            raise ValueError("t_nn is the energy unit and must equal 1 in v1")
        if self.filling is None:
            object.__setattr__(self, "filling", self.L // 2)
        if not 0 < self.filling < self.L:
            raise ValueError(
                f"filling must lie strictly between 0 and L, got {self.filling}"
            )


@dataclass(frozen=True)
class ClassicalState:
    """Phonon displacements Q and momenta P at one instant."""

    t: float
    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q = _frozen_array(self.Q, name="Q")
        P = _frozen_array(self.P, len(Q), name="P")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)

    @property
    def L(self) -> int:
        return len(self.Q)


@dataclass(frozen=True)
class ObservableRecord:
    """Electron observables at one recorded step.

    ``hop`` and ``nnn`` are the correlations at the reference bonds (0,1)
    and (0,2). In surrogate runs without bond models they are NaN, meaning
    "absent", as is ``gs_energy``.
    """

    n: np.ndarray
    cdw: float
    hop: float
    nnn: float
    gs_energy: float

    def __post_init__(self):
        object.__setattr__(self, "n", _frozen_array(self.n, name="n"))


@dataclass(frozen=True)
class DimensionlessScales:
    omega: float
    Q0: float
    P0: float
    lam: float


def dimensionless_scales(params: HolsteinParams) -> DimensionlessScales:
    """Characteristic scales: omega = sqrt(k/M), Q0 = g/k, P0 = M*omega*g/k,
    and the dimensionless coupling lambda = g^2/(4*k*t_nn)."""
    if params.g <= 0 or params.k <= 0 or params.M <= 0:
        raise ValueError("dimensionless scales require g, k, M > 0")
    omega = np.sqrt(params.k / params.M)
    Q0 = params.g / params.k
    return DimensionlessScales(
        omega=omega,
        Q0=Q0,
        P0=params.M * omega * Q0,
        lam=params.g**2 / (4.0 * params.k * params.t_nn),
    )


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

def substream(seed: int, *labels) -> np.random.Generator:
    """Named, independent random stream derived from a root seed.

    Labels are hashed with crc32 (stable across runs and platforms, unlike
    the builtin hash) into the SeedSequence spawn key, and the stream uses
    the counter-based Philox bit generator, so any substream can be
    reconstructed without generating its siblings.
    """
    key = tuple(zlib.crc32(str(lab).encode("utf8")) for lab in labels)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *labels) -> int:
    """Derive an integer seed for a named child stream (for APIs that take
    plain seeds)."""
    key = tuple(zlib.crc32(str(lab).encode("utf8")) for lab in labels)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_initial_state(
    params: HolsteinParams, q_std: float, seed: int, t_init: float = 0.0
) -> ClassicalState:
    """Draw Q_i iid normal(0, q_std^2), P = 0. Pure function of its inputs."""
    if q_std < 0:
        raise ValueError(f"q_std must be nonnegative, got {q_std}")
    rng = substream(seed, "init")
    Q = rng.normal(0.0, q_std, params.L) if q_std > 0 else np.zeros(params.L)
    return ClassicalState(t=t_init, Q=Q, P=np.zeros(params.L))


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Recorded (state, observables) samples of one evolution.

    Stored column-wise: times (n,), Q/P/n (n, L), scalar observables (n,).
    ``samples`` iterates (ClassicalState, ObservableRecord) pairs in order.
    """

    params: HolsteinParams
    times: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    n: np.ndarray
    cdw: np.ndarray
    hop: np.ndarray
    nnn: np.ndarray
    gs_energy: np.ndarray
    record_stride: int = 1
    aborted_at_step: int | None = field(default=None, compare=False)

    def __post_init__(self):
        m = len(self.times)
        for name in ("times", "Q", "P", "n", "cdw", "hop", "nnn", "gs_energy"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        L = self.params.L
        if self.Q.shape != (m, L) or self.P.shape != (m, L) or self.n.shape != (m, L):
            raise ValueError("trajectory column shapes inconsistent with params.L")
        if m >= 2:
            dts = np.diff(self.times)
            if np.any(dts <= 0):
                raise ValueError("recorded times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def samples(self) -> Iterator[tuple[ClassicalState, ObservableRecord]]:
        for i in range(len(self.times)):
            yield (
                ClassicalState(t=self.times[i], Q=self.Q[i], P=self.P[i]),
                ObservableRecord(
                    n=self.n[i],
                    cdw=self.cdw[i],
                    hop=self.hop[i],
                    nnn=self.nnn[i],
                    gs_energy=self.gs_energy[i],
                ),
            )

    def state_at(self, t: float, rtol: float = 1e-9) -> ClassicalState:
        """Recorded state whose time is nearest t; exact grid hit required
        within rtol of one dt."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > rtol + self.params.dt * 1e-6:
            raise ValueError(
                f"time {t} not on the record grid (nearest {self.times[i]})"
            )
        return ClassicalState(t=self.times[i], Q=self.Q[i], P=self.P[i])

    def total_energy(self) -> np.ndarray:
        """gs_energy + sum_i (P_i^2/2M + k Q_i^2/2) per recorded step."""
        p = self.params
        kin = (self.P**2).sum(axis=1) / (2.0 * p.M)
        pot = 0.5 * p.k * (self.Q**2).sum(axis=1)
        return self.gs_energy + kin + pot


def trajectory_header(L: int) -> str:
    cols = ["t"]
    cols += [f"Q_{i}" for i in range(L)]
    cols += [f"P_{i}" for i in range(L)]
    cols += [f"n_{i}" for i in range(L)]
    cols += ["cdw", "hop", "nnn", "gs_energy"]
    return ",".join(cols)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory_csv(traj: Trajectory, path: str | os.PathLike) -> None:
    """Comma-separated text, one row per recorded step, %.17g floats."""
    m = len(traj)
    block = np.column_stack(
        [
            traj.times,
            traj.Q,
            traj.P,
            traj.n,
            traj.cdw,
            traj.hop,
            traj.nnn,
            traj.gs_energy,
        ]
    )
    lines = [trajectory_header(traj.params.L)]
    for row in block:
        lines.append(",".join(FLOAT_FMT % x for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path: str | os.PathLike, params: HolsteinParams,
                        record_stride: int = 1) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    L = params.L
    if data.shape[1] != 3 * L + 5:
        raise ValueError(
            f"trajectory file has {data.shape[1]} columns, expected {3 * L + 5} for L={L}"
        )
    return Trajectory(
        params=params,
        times=data[:, 0],
        Q=data[:, 1 : 1 + L],
        P=data[:, 1 + L : 1 + 2 * L],
        n=data[:, 1 + 2 * L : 1 + 3 * L],
        cdw=data[:, 1 + 3 * L],
        hop=data[:, 2 + 3 * L],
        nnn=data[:, 3 + 3 * L],
        gs_energy=data[:, 4 + 3 * L],
        record_stride=record_stride,
    )


def params_to_dict(params: HolsteinParams) -> dict:
    return {
        "L": params.L,
        "g": params.g,
        "k": params.k,
        "M": params.M,
        "gamma": params.gamma,
        "dt": params.dt,
        "t_nn": params.t_nn,
        "filling": params.filling,
    }


def params_from_dict(d: dict) -> HolsteinParams:
    return HolsteinParams(**{k: d[k] for k in
                             ("L", "g", "k", "M", "gamma", "dt", "t_nn", "filling")})


def write_manifest(path: str | os.PathLike, payload: dict) -> None:
    """Run-metadata sidecar: params, seeds, and the RNG scheme, as JSON."""
    payload = dict(payload)
    payload.setdefault("rng", "philox-seedsequence-crc32-substreams")
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
