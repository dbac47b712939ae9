"""Surrogate-driven dynamics with symmetry preservation.

The learned site model replaces the quantum solver inside the evolution
loop. Two structural properties of the exact dynamics are enforced rather
than hoped for: charge conservation by an additive uniform shift of the
predicted density, and translation equivariance by evaluating one shared
model on every window with identical arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import dynamics, qss
from .core import (
    FLOAT_FMT,
    ClassicalState,
    HolsteinParams,
    ObservableRecord,
    Trajectory,
    atomic_write_text,
)
from .learning import SurrogateModel, extract_regions

__all__ = [
    "PealConfig",
    "SurrogateField",
    "OracleDensity",
    "ComparisonReport",
    "predict_density_field",
    "u1_correct",
    "peal_evolve",
    "compare",
    "write_comparison",
]


def u1_correct(n: np.ndarray, filling: int) -> np.ndarray:
    """Additive charge-conservation fix: shift every site by the mean defect.

    The shift is uniform, not multiplicative, so electrons and holes are
    treated symmetrically; the corrected vector sums to `filling` exactly.
    Off-by-d inputs inflate the per-site error by at most a factor of 2.
    """
    n = np.asarray(n, dtype=float)
    return n + (filling - n.sum()) / len(n)


def _window_features(model: SurrogateModel, g: float, Q: np.ndarray) -> np.ndarray:
    """(L, 2R) feature blocks of every window of Q under the model's map."""
    fmap = model.map
    W = extract_regions(np.asarray(Q, dtype=float), fmap.radius)
    if fmap.g_mode == "scaled":
        W = g * W
    # einsum keeps each output element an independent fixed-order reduction,
    # so row-permuted input gives bitwise row-permuted output.
    proj = np.einsum("lw,rw->lr", W, fmap.frequencies)
    F = np.empty((fmap.L, 2 * fmap.R))
    np.cos(proj, out=F[:, : fmap.R])
    np.sin(proj, out=F[:, fmap.R :])
    return F


def predict_density_field(model: SurrogateModel, g: float, Q: np.ndarray) -> np.ndarray:
    """Apply the shared site model at every site: n_i from Q rolled to i.

    Equivalent to ``predict_site(model, g, roll(Q, -i))`` for each i, but
    evaluated through one feature-block matrix so the whole field costs one
    small matrix product. Rolling the input rolls the output exactly: site
    i's prediction sums the same (window, weight-block) terms in the same
    order regardless of the roll.
    """
    if len(Q) != model.map.L:
        raise ValueError(f"Q has length {len(Q)}, model expects {model.map.L}")
    L, R = model.map.L, model.map.R
    F = _window_features(model, g, Q)
    Wb = model.weights[: L * 2 * R].reshape(L, 2 * R)
    D = np.einsum("cr,wr->cw", F, Wb)
    base = model.intercept
    if model.map.g_mode == "appended":
        base = base + model.weights[-1] * g
    w_idx = np.arange(L)
    n = np.empty(L)
    for i in range(L):
        n[i] = D[(w_idx + i) % L, w_idx].sum() + base
    return n


@dataclass(frozen=True)
class PealConfig:
    """Models and symmetry switches for one surrogate evolution.

    `density_model` is a SurrogateModel, or any object with a
    ``predict_field(g, Q) -> n`` method (used to splice the exact solver in
    as a perfect oracle). Bond models are optional and only fill recorded
    observables; they never feed back into the forces.
    """

    density_model: object
    filling: int
    hop_model: SurrogateModel | None = None
    nnn_model: SurrogateModel | None = None
    u1_correction: bool = True
    clamp: bool = False

    def __post_init__(self):
        models = [m for m in (self.hop_model, self.nnn_model) if m is not None]
        if isinstance(self.density_model, SurrogateModel):
            models.append(self.density_model)
        Ls = {m.map.L for m in models}
        if len(Ls) > 1:
            raise ValueError(f"models disagree on L: {sorted(Ls)}")


class OracleDensity:
    """Exact solver exposed through the surrogate interface."""

    def __init__(self, filling: int):
        self.filling = filling

    def predict_field(self, g: float, Q: np.ndarray) -> np.ndarray:
        return qss.density(qss.solve(Q, g, self.filling))


class SurrogateField:
    """ForceField adapter: surrogate density (with symmetry fixes) as force.

    Recorded bond observables come from the optional bond models applied at
    the reference bonds; the electronic energy has no surrogate and is
    recorded as NaN.
    """

    kind = "surrogate-model"

    def __init__(self, config: PealConfig):
        self.config = config

    def _predict(self, g: float, Q: np.ndarray) -> np.ndarray:
        m = self.config.density_model
        if isinstance(m, SurrogateModel):
            n = predict_density_field(m, g, Q)
        else:
            n = np.asarray(m.predict_field(g, Q), dtype=float)
        if self.config.clamp:
            n = np.clip(n, 0.0, 1.0)
        if self.config.u1_correction:
            n = u1_correct(n, self.config.filling)
        return n

    def probe(self, g: float, Q: np.ndarray) -> dynamics.FieldProbe:
        return dynamics.FieldProbe(n=self._predict(g, Q), gs=None)

    def record(
        self, probe: dynamics.FieldProbe, Q: np.ndarray, g: float
    ) -> ObservableRecord:
        from .learning import predict_site

        hop = nnn = np.nan
        if self.config.hop_model is not None:
            hop = predict_site(self.config.hop_model, g, Q)
        if self.config.nnn_model is not None:
            nnn = predict_site(self.config.nnn_model, g, Q)
        return ObservableRecord(
            n=probe.n,
            cdw=qss.cdw_of(probe.n),
            hop=hop,
            nnn=nnn,
            gs_energy=np.nan,
        )


def peal_evolve(
    initial: ClassicalState,
    params: HolsteinParams,
    steps: int,
    config: PealConfig,
    record_stride: int = 1,
) -> Trajectory:
    """Evolve with the surrogate in place of the solver; same integrator."""
    return dynamics.evolve(
        initial, params, steps, SurrogateField(config), record_stride=record_stride
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Exact-vs-surrogate deviation summary over matched timestamps."""

    times: np.ndarray
    density_rmse: float
    max_dn: float
    max_dcdw: float
    max_dq: float
    max_dp: float
    max_dhop: float
    max_dnnn: float
    density_rmse_series: np.ndarray
    cdw_exact: np.ndarray
    cdw_pred: np.ndarray
    hop_exact: np.ndarray
    hop_pred: np.ndarray
    nnn_exact: np.ndarray
    nnn_pred: np.ndarray


def compare(exact: Trajectory, predicted: Trajectory) -> ComparisonReport:
    """RMSE of density over all (site, step) pairs plus per-observable maxima.

    Bond deviations are NaN when the surrogate run recorded no bond
    observables.
    """
    if exact.params != predicted.params:
        raise ValueError("trajectories were produced with different parameters")
    if len(exact.times) != len(predicted.times) or not np.allclose(
        exact.times, predicted.times, rtol=0, atol=1e-12
    ):
        raise ValueError("recorded timestamps do not align")
    dn = predicted.n - exact.n
    rmse = float(np.sqrt(np.mean(dn**2)))
    rmse_t = np.sqrt(np.mean(dn**2, axis=1))

    def _max_bond(a, b):
        d = np.abs(a - b)
        return float(np.max(d)) if np.all(np.isfinite(d)) else float("nan")

    return ComparisonReport(
        times=exact.times,
        density_rmse=rmse,
        max_dn=float(np.max(np.abs(dn))),
        max_dcdw=float(np.max(np.abs(predicted.cdw - exact.cdw))),
        max_dq=float(np.max(np.abs(predicted.Q - exact.Q))),
        max_dp=float(np.max(np.abs(predicted.P - exact.P))),
        max_dhop=_max_bond(predicted.hop, exact.hop),
        max_dnnn=_max_bond(predicted.nnn, exact.nnn),
        density_rmse_series=rmse_t,
        cdw_exact=exact.cdw,
        cdw_pred=predicted.cdw,
        hop_exact=exact.hop,
        hop_pred=predicted.hop,
        nnn_exact=exact.nnn,
        nnn_pred=predicted.nnn,
    )


def write_comparison(report: ComparisonReport, json_path, series_path) -> None:
    """Named scalar metrics as JSON; the per-time series as CSV."""
    scalars = {
        "density_rmse": report.density_rmse,
        "max_dn": report.max_dn,
        "max_dcdw": report.max_dcdw,
        "max_dq": report.max_dq,
        "max_dp": report.max_dp,
        "max_dhop": report.max_dhop,
        "max_dnnn": report.max_dnnn,
    }
    atomic_write_text(json_path, json.dumps(scalars, indent=1) + "\n")
    cols = [
        ("t", report.times),
        ("density_rmse", report.density_rmse_series),
        ("cdw_exact", report.cdw_exact),
        ("cdw_pred", report.cdw_pred),
        ("hop_exact", report.hop_exact),
        ("hop_pred", report.hop_pred),
        ("nnn_exact", report.nnn_exact),
        ("nnn_pred", report.nnn_pred),
    ]
    lines = [",".join(name for name, _ in cols)]
    for i in range(len(report.times)):
        lines.append(",".join(FLOAT_FMT % col[i] for _, col in cols))
    atomic_write_text(series_path, "\n".join(lines) + "\n")
