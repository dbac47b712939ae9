"""Error-bound machinery for surrogate-driven dynamics.

Three layers, in decreasing specificity:

* measured: the error stiffness K(t) = k - g dn_i/dQ_i along an actual
  trajectory, and the damped-spring inequality deciding whether per-step
  prediction errors relax away faster than they accumulate;
* worst case: a relaxation simulation of the linearized error equations
  of motion, driving every coupling and forcing term to its adversarial
  extreme each step and checking that the accumulated error still scales
  like sqrt(eps);
* asymptotic: closed-form error and sample-complexity scalings, reported
  up to their unspecified O-constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import qss
from .core import FLOAT_FMT, HolsteinParams, Trajectory, atomic_write_text

__all__ = [
    "StiffnessSeries",
    "SpringCondition",
    "WorstCaseSpec",
    "BoundReport",
    "measure_stiffness",
    "offdiag_response_max",
    "check_spring_condition",
    "worst_case_ratio",
    "spring_spec",
    "relaxation_simulate",
    "error_bound_estimate",
    "sample_size_hint",
    "spec_to_dict",
    "spec_from_dict",
    "write_stiffness_csv",
]


# ---------------------------------------------------------------------------
# Measured stiffness and the damped-spring inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StiffnessSeries:
    """K(t) = k - g dn_site/dQ_site along recorded configurations."""

    times: np.ndarray
    K_values: np.ndarray
    K_min: float
    K_max: float
    site: int
    degenerate: np.ndarray

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValueError("stiffness window is empty")
        if not np.all(np.isfinite(self.K_values)):
            raise ValueError("stiffness series contains non-finite values")


def measure_stiffness(
    traj: Trajectory,
    site: int,
    params: HolsteinParams,
    h: float = 1e-4,
    t_start: float | None = None,
    t_stop: float | None = None,
) -> StiffnessSeries:
    """Measure K(t) by central-difference response at each recorded step.

    Each point re-solves the ground state twice at the recorded Q, so cost
    is two eigensolves per record. Restrict with [t_start, t_stop] to skip
    the initial transient. Degenerate Fermi levels are flagged per point,
    not raised.
    """
    mask = np.ones(len(traj.times), dtype=bool)
    if t_start is not None:
        mask &= traj.times >= t_start
    if t_stop is not None:
        mask &= traj.times <= t_stop
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("no recorded samples in the requested window")
    Ks = np.empty(len(idx))
    deg = np.zeros(len(idx), dtype=bool)
    for out_i, rec_i in enumerate(idx):
        probe = qss.response(traj.Q[rec_i], params.g, site, h=h, filling=params.filling)
        Ks[out_i] = params.k - params.g * probe.value
        deg[out_i] = probe.degenerate
    return StiffnessSeries(
        times=traj.times[idx],
        K_values=Ks,
        K_min=float(Ks.min()),
        K_max=float(Ks.max()),
        site=site,
        degenerate=deg,
    )


def offdiag_response_max(
    Q: np.ndarray, g: float, site: int, h: float = 1e-4, filling: int | None = None
) -> float:
    """Largest |dn_j/dQ_site| over j != site (diagnostic for the local-response
    assumption; the bound theory treats these as negligible)."""
    Q = np.asarray(Q, dtype=float)
    if filling is None:
        filling = len(Q) // 2
    Qp = Q.copy()
    Qp[site] += h
    Qm = Q.copy()
    Qm[site] -= h
    dn = (qss.density(qss.solve(Qp, g, filling))
          - qss.density(qss.solve(Qm, g, filling))) / (2.0 * h)
    dn[site] = 0.0
    return float(np.max(np.abs(dn)))


def write_stiffness_csv(series: StiffnessSeries, path) -> None:
    lines = ["t,K,degenerate"]
    for t, K, d in zip(series.times, series.K_values, series.degenerate):
        lines.append(f"{FLOAT_FMT % t},{FLOAT_FMT % K},{int(d)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class SpringCondition:
    """The contraction inequality for a damped spring with drifting stiffness.

    One damped half-oscillation contracts the error amplitude by at least
    exp(-(gamma/2) t_half); stiffness drifting between K_min and K_max can
    amplify it by at most sqrt(K_max/K_min) per crossing. `holds` says the
    contraction wins: lhs = K_max/K_min < rhs. Everything is defined only
    above the overdamping floor K_min > M (gamma/2)^2.
    """

    K_min: float
    K_max: float
    M: float
    gamma: float
    floor_ok: bool
    omega_min: float
    omega_max: float
    lhs: float
    rhs: float
    holds: bool


def check_spring_condition(
    K_min: float, K_max: float, M: float, gamma: float
) -> SpringCondition:
    """Evaluate the inequality; a violated floor is a failed-precondition
    result (holds=False, ratios NaN), not an exception."""
    if K_max < K_min:
        raise ValueError(f"K_max={K_max} < K_min={K_min}")
    if M <= 0 or gamma < 0:
        raise ValueError("M must be positive and gamma nonnegative")
    floor = M * (gamma / 2.0) ** 2
    if K_min <= floor:
        return SpringCondition(
            K_min=K_min, K_max=K_max, M=M, gamma=gamma, floor_ok=False,
            omega_min=float("nan"), omega_max=float("nan"),
            lhs=K_max / K_min if K_min > 0 else float("inf"),
            rhs=float("nan"), holds=False,
        )
    lhs = K_max / K_min
    if gamma == 0.0:
        # undamped limit: no contraction at all
        return SpringCondition(
            K_min=K_min, K_max=K_max, M=M, gamma=gamma, floor_ok=True,
            omega_min=float("inf"), omega_max=float("inf"),
            lhs=lhs, rhs=1.0, holds=lhs < 1.0,
        )
    om_min = math.sqrt(K_min / floor - 1.0)
    om_max = math.sqrt(K_max / floor - 1.0)
    rhs = math.exp(
        2.0 * (math.atan(om_min) / om_min + (math.pi - math.atan(om_max)) / om_max)
    )
    return SpringCondition(
        K_min=K_min, K_max=K_max, M=M, gamma=gamma, floor_ok=True,
        omega_min=om_min, omega_max=om_max, lhs=lhs, rhs=rhs, holds=lhs < rhs,
    )


def worst_case_ratio(K_min: float, K_max: float, M: float, gamma: float) -> float:
    """Amplitude ratio after the worst half-cycle: sqrt(K_max/K_min) times
    the damping accrued over the two extremal quarter-periods.

    Squares to lhs/rhs of the spring condition, so ratio < 1 iff the
    inequality holds. Raises below the overdamping floor.
    """
    if K_max < K_min:
        raise ValueError(f"K_max={K_max} < K_min={K_min}")
    floor = M * (gamma / 2.0) ** 2
    if K_min <= floor:
        raise ValueError(
            f"K_min={K_min} is not above the overdamping floor M(gamma/2)^2={floor}"
        )
    amp = math.sqrt(K_max / K_min)
    if gamma == 0.0:
        return amp
    Om_min = math.sqrt(K_min / M - (gamma / 2.0) ** 2)
    Om_max = math.sqrt(K_max / M - (gamma / 2.0) ** 2)
    t0 = (math.pi - math.atan(2.0 * Om_max / gamma)) / Om_max
    t1 = math.atan(2.0 * Om_min / gamma) / Om_min
    return amp * math.exp(-(gamma / 2.0) * (t0 + t1))


# ---------------------------------------------------------------------------
# Worst-case relaxation simulation
# ---------------------------------------------------------------------------

def _as_block(val, dim: int, name: str) -> np.ndarray:
    a = np.asarray(val, dtype=float)
    if a.ndim == 0:
        a = np.full((dim, dim), float(a))
    if a.shape != (dim, dim):
        raise ValueError(f"{name} must be scalar or ({dim},{dim}), got {a.shape}")
    return a


def _as_vec(val, dim: int, name: str) -> np.ndarray:
    a = np.asarray(val, dtype=float)
    if a.ndim == 0:
        a = np.full(dim, float(a))
    if a.shape != (dim,):
        raise ValueError(f"{name} must be scalar or ({dim},), got {a.shape}")
    if np.any(a < 0):
        raise ValueError(f"{name} entries are magnitudes and must be >= 0")
    return a


@dataclass(frozen=True)
class WorstCaseSpec:
    """Elementwise coupling bounds for the linearized error dynamics.

    Blocks are (target i, source j) matrices named source->target:
    dq_i/dt = sum_j qq[i,j] q_j + pq[i,j] p_j + Fq_i
    dp_i/dt = sum_j qp[i,j] q_j + pp[i,j] p_j + Fp_i - gamma p_i
    with each block entry free to wander inside [lower, upper] and each
    force component bounded by fbar * sqrt(eps) in magnitude.
    """

    dimension: int
    qq_lower: np.ndarray
    qq_upper: np.ndarray
    pq_lower: np.ndarray
    pq_upper: np.ndarray
    qp_lower: np.ndarray
    qp_upper: np.ndarray
    pp_lower: np.ndarray
    pp_upper: np.ndarray
    fq_bar: np.ndarray
    fp_bar: np.ndarray
    gamma: float
    M: float
    horizon: float
    dt: float

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        if self.gamma < 0 or self.M <= 0:
            raise ValueError("gamma must be >= 0 and M > 0")
        for name in ("qq", "pq", "qp", "pp"):
            lo = _as_block(getattr(self, name + "_lower"), d, name + "_lower")
            up = _as_block(getattr(self, name + "_upper"), d, name + "_upper")
            if np.any(lo > up):
                raise ValueError(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name + "_lower", lo)
            object.__setattr__(self, name + "_upper", up)
        object.__setattr__(self, "fq_bar", _as_vec(self.fq_bar, d, "fq_bar"))
        object.__setattr__(self, "fp_bar", _as_vec(self.fp_bar, d, "fp_bar"))


def spring_spec(
    K_min: float,
    K_max: float,
    M: float = 1.0,
    gamma: float = 0.1,
    fbar: float = 1.0,
    horizon: float = 200.0,
    dt: float = 0.01,
    dimension: int = 1,
) -> WorstCaseSpec:
    """Damped-spring error system: stiffness wanders in [K_min, K_max],
    force hits the momentum equation only."""
    eye = np.eye(dimension)
    off = np.zeros((dimension, dimension))
    return WorstCaseSpec(
        dimension=dimension,
        qq_lower=off, qq_upper=off,
        pq_lower=eye / M, pq_upper=eye / M,
        qp_lower=-K_max * eye, qp_upper=-K_min * eye,
        pp_lower=off, pp_upper=off,
        fq_bar=np.zeros(dimension),
        fp_bar=np.full(dimension, float(fbar)),
        gamma=gamma, M=M, horizon=horizon, dt=dt,
    )


def _select(lower, upper, s_target, s_source):
    """Adversarial entry choice: upper bound where target and source signs
    agree, lower bound where they differ."""
    same = np.outer(s_target, s_source) > 0
    return np.where(same, upper, lower)


def _signs(x: np.ndarray) -> np.ndarray:
    s = np.sign(x)
    s[s == 0] = 1.0
    return s


@dataclass(frozen=True)
class BoundReport:
    """Per-epsilon worst-case maxima and the sqrt(eps)-scaling verdict."""

    epsilons: np.ndarray
    max_q: np.ndarray
    max_p: np.ndarray
    slope: float
    C_q: np.ndarray
    C_p: np.ndarray
    verdict: str
    saturated: np.ndarray
    blowup_time: dict[float, float]
    dt_used: float


def _run_one(spec: WorstCaseSpec, sqrt_eps: float, dt: float):
    """Integrate the adversarial error EOM for one sqrt(eps) scale.

    Returns (max|q|, max|p|, running-max series of |q|, blowup time or None).
    Bound selection is re-evaluated from the current signs every step and
    frozen across the RK4 substages.
    """
    d = spec.dimension
    q = np.zeros(d)
    p = np.zeros(d)
    steps = int(math.ceil(spec.horizon / dt))
    fq = spec.fq_bar * sqrt_eps
    fp = spec.fp_bar * sqrt_eps
    blow_at = 1e6 * sqrt_eps if sqrt_eps > 0 else math.inf
    max_q = 0.0
    max_p = 0.0
    running = np.empty(steps)
    for step in range(steps):
        sq = _signs(q)
        sp = _signs(p)
        Aqq = _select(spec.qq_lower, spec.qq_upper, sq, sq)
        Apq = _select(spec.pq_lower, spec.pq_upper, sq, sp)
        Aqp = _select(spec.qp_lower, spec.qp_upper, sp, sq)
        App = _select(spec.pp_lower, spec.pp_upper, sp, sp)
        Fq = fq * sq
        Fp = fp * sp

        def deriv(qv, pv):
            dq = Aqq @ qv + Apq @ pv + Fq
            dp = Aqp @ qv + App @ pv + Fp - spec.gamma * pv
            return dq, dp

        k1q, k1p = deriv(q, p)
        k2q, k2p = deriv(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p)
        k3q, k3p = deriv(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p)
        k4q, k4p = deriv(q + dt * k3q, p + dt * k3p)
        q = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        p = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)

        aq = float(np.max(np.abs(q)))
        ap = float(np.max(np.abs(p)))
        max_q = aq if aq > max_q else max_q
        max_p = ap if ap > max_p else max_p
        running[step] = max_q
        if max_q > blow_at:
            return max_q, max_p, running[: step + 1], (step + 1) * dt
    return max_q, max_p, running, None


def _saturated(running: np.ndarray, rel: float = 0.005, frac: float = 0.75) -> bool:
    """True when the running max stops improving after `frac` of the horizon
    (final value within rel of the value at the checkpoint). Catches steady
    pumping that a finite horizon would otherwise disguise as a bound."""
    if running[-1] == 0.0:
        return True
    checkpoint = running[int(frac * len(running)) - 1]
    return running[-1] <= checkpoint * (1.0 + rel)


def relaxation_simulate(spec: WorstCaseSpec, epsilons) -> BoundReport:
    """Adversarial worst-case integration for each epsilon.

    Verdict "yes" requires every run to stay finite (max|q| <= 1e6
    sqrt(eps)), the fitted log-log slope of max|q| vs eps to sit in
    [0.4, 0.6], the constants C_q = max|q|/sqrt(eps) to agree within 10%
    across epsilons, and every run to saturate before 75% of the horizon.
    Higher-order terms of the true error dynamics are dropped (linear
    regime); conclusions transfer only while errors stay small.
    """
    eps = np.sort(np.asarray(list(epsilons), dtype=float))
    if len(eps) < 2 or eps[0] <= 0:
        raise ValueError("need >= 2 positive epsilons")
    if eps[-1] / eps[0] < 4.0:
        raise ValueError("epsilon range must span at least a 4x ratio")

    # envelope-based step-size cap: the sign-switched RHS is discontinuous,
    # so the step must resolve the fastest coupling scale
    env = np.block([
        [np.maximum(np.abs(spec.qq_lower), np.abs(spec.qq_upper)),
         np.maximum(np.abs(spec.pq_lower), np.abs(spec.pq_upper))],
        [np.maximum(np.abs(spec.qp_lower), np.abs(spec.qp_upper)),
         np.maximum(np.abs(spec.pp_lower), np.abs(spec.pp_upper)) + spec.gamma * np.eye(spec.dimension)],
    ])
    omega_max = max(1.0, float(np.max(env.sum(axis=1))))
    dt = min(spec.dt, 0.01 / omega_max)

    max_q = np.empty(len(eps))
    max_p = np.empty(len(eps))
    sat = np.zeros(len(eps), dtype=bool)
    blowup: dict[float, float] = {}
    for i, e in enumerate(eps):
        mq, mp, running, blow_t = _run_one(spec, math.sqrt(e), dt)
        max_q[i] = mq
        max_p[i] = mp
        sat[i] = _saturated(running) and blow_t is None
        if blow_t is not None:
            blowup[float(e)] = blow_t

    sqrt_eps = np.sqrt(eps)
    C_q = max_q / sqrt_eps
    C_p = max_p / sqrt_eps
    if np.all(max_q == 0.0):
        return BoundReport(
            epsilons=eps, max_q=max_q, max_p=max_p, slope=float("nan"),
            C_q=C_q, C_p=C_p, verdict="yes", saturated=sat,
            blowup_time=blowup, dt_used=dt,
        )
    if blowup or np.any(max_q == 0.0):
        slope = float("nan")
        verdict = "no"
    else:
        slope = float(np.polyfit(np.log(eps), np.log(max_q), 1)[0])
        spread = (C_q.max() - C_q.min()) / C_q.mean()
        verdict = (
            "yes"
            if 0.4 <= slope <= 0.6 and spread <= 0.10 and bool(np.all(sat))
            else "no"
        )
    return BoundReport(
        epsilons=eps, max_q=max_q, max_p=max_p, slope=slope,
        C_q=C_q, C_p=C_p, verdict=verdict, saturated=sat,
        blowup_time=blowup, dt_used=dt,
    )


def spec_to_dict(spec: WorstCaseSpec) -> dict:
    d = {"dimension": spec.dimension, "gamma": spec.gamma, "M": spec.M,
         "horizon": spec.horizon, "dt": spec.dt,
         "fq_bar": spec.fq_bar.tolist(), "fp_bar": spec.fp_bar.tolist()}
    for name in ("qq", "pq", "qp", "pp"):
        d[name + "_lower"] = getattr(spec, name + "_lower").tolist()
        d[name + "_upper"] = getattr(spec, name + "_upper").tolist()
    return d


def spec_from_dict(d: dict) -> WorstCaseSpec:
    kwargs = {k: d[k] for k in ("dimension", "gamma", "M", "horizon", "dt",
                                "fq_bar", "fp_bar")}
    for name in ("qq", "pq", "qp", "pp"):
        kwargs[name + "_lower"] = d[name + "_lower"]
        kwargs[name + "_upper"] = d[name + "_upper"]
    return WorstCaseSpec(**kwargs)


def write_bound_report(report: BoundReport, path) -> None:
    payload = {
        "epsilons": report.epsilons.tolist(),
        "max_q": report.max_q.tolist(),
        "max_p": report.max_p.tolist(),
        "slope": report.slope,
        "C_q": report.C_q.tolist(),
        "C_p": report.C_p.tolist(),
        "verdict": report.verdict,
        "saturated": [bool(s) for s in report.saturated],
        "blowup_time": {str(k): v for k, v in report.blowup_time.items()},
        "dt_used": report.dt_used,
    }
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Asymptotic scalings (up to unspecified constants)
# ---------------------------------------------------------------------------

def error_bound_estimate(T: int, epsilon: float, eta: float, mode: str) -> float:
    """Accumulated-error scaling after T steps at per-step error eps.

    generic: sqrt(T eps / eta); subgaussian: sqrt(2 eps log(2T/eta));
    bounded: sqrt(eps), T-independent. Scaling-only: each is reported up
    to an unspecified constant.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < epsilon < 1.0 / math.e:
        raise ValueError(f"epsilon must lie in (0, 1/e), got {epsilon}")
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if mode == "generic":
        return math.sqrt(T * epsilon / eta)
    if mode == "subgaussian":
        return math.sqrt(2.0 * epsilon * math.log(2.0 * T / eta))
    if mode == "bounded":
        return math.sqrt(epsilon)
    raise ValueError(f"mode must be generic|subgaussian|bounded, got {mode}")


def sample_size_hint(
    n: int, delta: float, epsilon: float, c: float = 1.0, degree: int = 2
) -> float:
    """Heuristic training-set size: log(n/delta) * 2^(c * log(1/eps)^degree).

    The polylog degree and constant c are knobs, not ground truth; defaults
    give the degree-2 reading. Natural logs throughout.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < delta < 1 or not 0 < epsilon < 1:
        raise ValueError("delta and epsilon must lie in (0, 1)")
    return math.log(n / delta) * 2.0 ** (c * math.log(1.0 / epsilon) ** degree)
