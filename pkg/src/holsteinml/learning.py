"""Sparse surrogate learning: random Fourier features + l1 regression.

The surrogate predicts a site-local observable from the phonon window
around that site. One model is shared by every site: training rolls each
drawn site to index 0, and prediction applies the same weights to every
window. Frequencies are drawn once per feature map and reused across all
windows, which is what makes the sharing exact.

The l1 solver is a cyclical coordinate descent on the objective

    (1/2n) ||y - X w - b||^2 + alpha ||w||_1

with X and y mean-centered and columns conditioned by their standard
deviation internally; reported weights and the kill threshold alpha_max =
max|X_c^T y_c|/n live on the original feature scale.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import qss
from .core import FLOAT_FMT, Trajectory, atomic_write_text, substream

__all__ = [
    "FeatureMap",
    "TrainingSet",
    "SurrogateModel",
    "CVReport",
    "extract_regions",
    "featurize",
    "feature_matrix",
    "build_dataset",
    "subset",
    "concat",
    "lasso_fit",
    "alpha_max",
    "default_alpha_grid",
    "lasso_cv",
    "grid_search",
    "fit_model",
    "predict_site",
    "evaluate_rmse",
    "save_model",
    "load_model",
    "write_dataset_csv",
    "read_dataset_csv",
]

OBSERVABLE_KINDS = ("density", "hop", "nnn")


# ---------------------------------------------------------------------------
# Feature map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMap:
    """Shared random Fourier features over local phonon windows.

    Each of the L windows (half-width `radius`, periodic wrap) is projected
    onto R random frequency rows, giving R cosine and R sine features per
    window, concatenated in site order. `g_mode` controls how the coupling
    enters: "scaled" feeds g*Q windows (the Hamiltonian depends on Q only
    through g*Q, so this is a sufficient statistic), "appended" feeds raw
    Q windows and appends g as one extra feature.
    """

    L: int
    R: int
    gamma_omega: float
    radius: int = 1
    g_mode: str = "scaled"
    seed: int = 0
    frequencies: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.gamma_omega <= 0:
            raise ValueError(f"gamma_omega must be positive, got {self.gamma_omega}")
        if self.radius < 0 or 2 * self.radius + 1 > self.L:
            raise ValueError(f"window 2*{self.radius}+1 does not fit in L={self.L}")
        if self.g_mode not in ("scaled", "appended"):
            raise ValueError(f"g_mode must be 'scaled' or 'appended', got {self.g_mode}")
        w = 2 * self.radius + 1
        if self.frequencies is None:
            rng = substream(self.seed, "features")
            freq = self.gamma_omega * rng.standard_normal((self.R, w))
        else:
            freq = np.asarray(self.frequencies, dtype=float).copy()
            if freq.shape != (self.R, w):
                raise ValueError(
                    f"frequencies must have shape ({self.R}, {w}), got {freq.shape}"
                )
        freq.setflags(write=False)
        object.__setattr__(self, "frequencies", freq)

    @property
    def window(self) -> int:
        return 2 * self.radius + 1

    @property
    def n_features(self) -> int:
        return self.L * 2 * self.R + (1 if self.g_mode == "appended" else 0)


def extract_regions(Q: np.ndarray, radius: int) -> np.ndarray:
    """(L, 2*radius+1) windows with periodic wrap, left-to-right order."""
    Q = np.asarray(Q, dtype=float)
    L = len(Q)
    if 2 * radius + 1 > L:
        raise ValueError(f"window 2*{radius}+1 does not fit in L={L}")
    idx = (np.arange(L)[:, None] + np.arange(-radius, radius + 1)[None, :]) % L
    return Q[idx]


def featurize(g: float, Q: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """Feature vector of one configuration; length fmap.n_features."""
    Q = np.asarray(Q, dtype=float)
    if len(Q) != fmap.L:
        raise ValueError(f"Q has length {len(Q)}, map expects {fmap.L}")
    W = extract_regions(Q, fmap.radius)
    if fmap.g_mode == "scaled":
        W = g * W
    proj = W @ fmap.frequencies.T
    R = fmap.R
    out = np.empty(fmap.n_features)
    blocks = out[: fmap.L * 2 * R].reshape(fmap.L, 2 * R)
    np.cos(proj, out=blocks[:, :R])
    np.sin(proj, out=blocks[:, R:])
    if fmap.g_mode == "appended":
        out[-1] = g
    return out


def feature_matrix(ts: TrainingSet, fmap: FeatureMap) -> np.ndarray:
    """Feature matrix of a whole training set, Fortran-ordered for the solver."""
    if ts.L != fmap.L:
        raise ValueError(f"dataset has L={ts.L}, map expects {fmap.L}")
    m = len(ts.y)
    R = fmap.R
    idx = (np.arange(fmap.L)[:, None]
           + np.arange(-fmap.radius, fmap.radius + 1)[None, :]) % fmap.L
    W = ts.Q[:, idx]
    if fmap.g_mode == "scaled":
        W = W * ts.g[:, None, None]
    X = np.empty((m, fmap.n_features), order="F")
    # one small (m, R) projection per site instead of one (m, L, R) block;
    # wide maps otherwise spend hundreds of MB on a throwaway temp
    for c in range(fmap.L):
        proj = W[:, c, :] @ fmap.frequencies.T
        base = c * 2 * R
        np.cos(proj, out=X[:, base : base + R])
        np.sin(proj, out=X[:, base + R : base + 2 * R])
    if fmap.g_mode == "appended":
        X[:, -1] = ts.g
    return X


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingSet:
    """Records of (g, rolled Q, target) for one observable kind.

    Q rows are rolled so the drawn site sits at index 0; the target is that
    site's observable (for bonds, the bond leaving index 0 rightward).
    """

    g: np.ndarray
    Q: np.ndarray
    y: np.ndarray
    kind: str

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if Q.ndim != 2 or len(g) != len(Q) or len(y) != len(Q):
            raise ValueError("g, Q, y must agree on the record count")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(y))):
            raise ValueError("training records contain non-finite values")
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"kind must be one of {OBSERVABLE_KINDS}, got {self.kind}")
        if self.kind == "density" and (y.min() < -1e-9 or y.max() > 1 + 1e-9):
            raise ValueError("density targets must lie in [0, 1]")
        for name, a in (("g", g), ("Q", Q), ("y", y)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def L(self) -> int:
        return self.Q.shape[1]

    def __len__(self) -> int:
        return len(self.y)


def subset(ts: TrainingSet, indices) -> TrainingSet:
    idx = np.asarray(indices)
    return TrainingSet(g=ts.g[idx], Q=ts.Q[idx], y=ts.y[idx], kind=ts.kind)


def concat(sets: list[TrainingSet]) -> TrainingSet:
    kinds = {s.kind for s in sets}
    if len(kinds) != 1:
        raise ValueError(f"cannot concatenate mixed kinds {sorted(kinds)}")
    return TrainingSet(
        g=np.concatenate([s.g for s in sets]),
        Q=np.concatenate([s.Q for s in sets]),
        y=np.concatenate([s.y for s in sets]),
        kind=sets[0].kind,
    )


def build_dataset(
    trajs: list[Trajectory],
    pairs_per_path: int,
    seed: int,
    kind: str = "density",
) -> TrainingSet:
    """Draw (time-step, site) pairs uniformly from each trajectory.

    Density targets are read off the recorded samples. Bond targets are not
    recorded per site, so bond kinds re-solve the ground state at each
    drawn configuration; noticeably slower, intended for small datasets.
    Draws depend on the position of each trajectory in the list.
    """
    if kind not in OBSERVABLE_KINDS:
        raise ValueError(f"kind must be one of {OBSERVABLE_KINDS}, got {kind}")
    gs_, Qs, ys = [], [], []
    for path_idx, traj in enumerate(trajs):
        m = len(traj)
        if m == 0:
            raise ValueError(f"trajectory {path_idx} has no recorded samples")
        if kind == "density" and not np.all(np.isfinite(traj.n)):
            raise ValueError(f"trajectory {path_idx} lacks exact densities")
        L = traj.params.L
        g = traj.params.g
        rng = substream(seed, "dataset", path_idx)
        steps = rng.integers(0, m, size=pairs_per_path)
        sites = rng.integers(0, L, size=pairs_per_path)
        offset = 2 if kind == "nnn" else 1
        for s, i in zip(steps, sites):
            Q = traj.Q[s]
            if kind == "density":
                target = traj.n[s, i]
            else:
                gs = qss.solve(Q, g, traj.params.filling)
                target = qss.correlation(gs, int(i), int((i + offset) % L))
            gs_.append(g)
            Qs.append(np.roll(Q, -int(i)))
            ys.append(target)
    return TrainingSet(g=np.array(gs_), Q=np.array(Qs), y=np.array(ys), kind=kind)


def write_dataset_csv(ts: TrainingSet, path) -> None:
    L = ts.L
    header = "g," + ",".join(f"Q_{i}" for i in range(L)) + ",target,kind"
    lines = [header]
    for i in range(len(ts)):
        row = [FLOAT_FMT % ts.g[i]]
        row += [FLOAT_FMT % q for q in ts.Q[i]]
        row.append(FLOAT_FMT % ts.y[i])
        row.append(ts.kind)
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset_csv(path) -> TrainingSet:
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[0] != "g" or header[-2:] != ["target", "kind"]:
            raise ValueError(f"unrecognized dataset header in {path}")
        L = len(header) - 3
        gs_, Qs, ys, kinds = [], [], [], []
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != L + 3:
                raise ValueError(f"dataset row has {len(parts)} fields, expected {L + 3}")
            gs_.append(float(parts[0]))
            Qs.append([float(x) for x in parts[1 : 1 + L]])
            ys.append(float(parts[1 + L]))
            kinds.append(parts[2 + L])
    if len(set(kinds)) > 1:
        raise ValueError("dataset file mixes observable kinds")
    return TrainingSet(g=np.array(gs_), Q=np.array(Qs), y=np.array(ys), kind=kinds[0])


def dataset_fingerprint(ts: TrainingSet) -> str:
    h = hashlib.sha256()
    h.update(ts.kind.encode())
    h.update(np.ascontiguousarray(ts.g).tobytes())
    h.update(np.ascontiguousarray(ts.Q).tobytes())
    h.update(np.ascontiguousarray(ts.y).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# l1-regularized regression by cyclical coordinate descent
# ---------------------------------------------------------------------------

CD_TOL = 1e-8
CD_MAX_SWEEPS = 100_000


def _center_stats(X: np.ndarray, y: np.ndarray):
    n = len(y)
    mu = X.mean(axis=0)
    sq = np.einsum("ij,ij->j", X, X) / n
    var = np.maximum(sq - mu**2, 0.0)
    return mu, sq, var, float(y.mean())


def alpha_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest alpha that kills every weight: max|X_c^T y_c| / n."""
    n = len(y)
    yc = y - y.mean()
    return float(np.max(np.abs(X.T @ yc - X.mean(axis=0) * yc.sum())) / n)


def _cd_sweep(X, r, sum_r, mu, var, w, active, alpha, n):
    """One cyclic pass of coordinate updates over `active`; returns max |dw|.

    The residual r = y - X w is kept uncentered; centered-column inner
    products reduce to x_j^T r - mu_j * sum(r), so no copy of X is made.
    """
    max_delta = 0.0
    for j in active:
        v = var[j]
        xj = X[:, j]
        c = (xj @ r - mu[j] * sum_r) / n
        z = c + v * w[j]
        wj_new = np.sign(z) * max(abs(z) - alpha, 0.0) / v
        delta = wj_new - w[j]
        if delta != 0.0:
            r -= delta * xj
            sum_r -= delta * n * mu[j]
            w[j] = wj_new
            ad = abs(delta)
            if ad > max_delta:
                max_delta = ad
    return max_delta, sum_r


def _gram_extend(X, y, mu, y_mean, cache, need):
    """Grow the ever-active Gram cache to cover the coordinates in `need`.

    For every coordinate that has ever entered the support of this (X, y)
    problem, the cache keeps a gathered copy of the column, its row/column
    of the centered Gram matrix, and its centered cross-moment with y.
    Appending costs one matmul against the cached block; nothing already
    stored is recomputed, so reusing the cache along an alpha path makes
    the total Gram work proportional to the final support, not to the
    number of fits.
    """
    if "idx" not in cache:
        cache["idx"] = np.empty(0, dtype=np.intp)
        cache["pos"] = {}
        cache["cols"] = np.empty((len(y), 0))
        cache["G"] = np.empty((0, 0))
        cache["c"] = np.empty(0)
    pos = cache["pos"]
    new = [int(j) for j in need if int(j) not in pos]
    if not new:
        return
    n = len(y)
    new = np.asarray(new, dtype=np.intp)
    Xn = X[:, new]
    mun = mu[new]
    old = cache["cols"]
    a, k = old.shape[1], len(new)
    B = old.T @ Xn / n - np.outer(mu[cache["idx"]], mun) if a else np.empty((0, k))
    D = Xn.T @ Xn / n - np.outer(mun, mun)
    G2 = np.empty((a + k, a + k))
    G2[:a, :a] = cache["G"]
    G2[:a, a:] = B
    G2[a:, :a] = B.T
    G2[a:, a:] = D
    yc = y - y_mean
    cache["G"] = G2
    cache["c"] = np.concatenate([cache["c"], Xn.T @ yc / n - mun * float(yc.sum() / n)])
    cache["cols"] = np.concatenate([old, Xn], axis=1)
    cache["idx"] = np.concatenate([cache["idx"], new])
    for t, j in enumerate(new):
        pos[int(j)] = a + t


def _gram_sweep(G, c, w, rho, order, alpha):
    """Covariance-form cyclic pass over positions `order`; returns max |dw|.

    `rho` carries G @ w and is updated one column per move, so a pass costs
    O(support^2) and touches no n-vectors at all.
    """
    max_delta = 0.0
    for j in order:
        v = G[j, j]
        z = c[j] - rho[j] + v * w[j]
        wj_new = np.sign(z) * max(abs(z) - alpha, 0.0) / v
        delta = wj_new - w[j]
        if delta != 0.0:
            rho += delta * G[:, j]
            w[j] = wj_new
            ad = abs(delta)
            if ad > max_delta:
                max_delta = ad
    return max_delta


def _gram_jump(G, c, w, alpha):
    """Drive the current support to its fixed-sign restricted minimizer.

    On the orthant carrying the support, the objective is a plain quadratic
    whose minimum solves the regularized normal equations. Each round moves
    along the segment toward that solution, cuts at the first zero crossing
    (descent is monotone within the orthant), drops the crossed weights and
    resolves on the shrunken support. The support shrinks every round short
    of the minimizer, so the loop terminates. Returns the candidate weights
    in cache coordinates, or None when no move is available.
    """
    w = w.copy()
    moved = False
    for _ in range(len(w) + 1):
        nz = np.flatnonzero(w)
        if not len(nz):
            break
        A = G[np.ix_(nz, nz)]
        s = np.sign(w[nz])
        rhs = c[nz] - alpha * s
        try:
            wa = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            wa = np.linalg.lstsq(A, rhs, rcond=None)[0]
        d = wa - w[nz]
        if not np.all(np.isfinite(d)) or not np.max(np.abs(d)):
            break
        t = 1.0
        moving = d != 0.0
        t_cross = -w[nz][moving] / d[moving]
        t_cross = t_cross[(t_cross > 0.0) & (t_cross < 1.0)]
        if len(t_cross):
            t = float(t_cross.min())
        wn = w[nz] + t * d
        wn[np.sign(wn) != s] = 0.0
        wn[np.abs(wn) <= 1e-15 * np.max(np.abs(wn), initial=0.0)] = 0.0
        w[nz] = wn
        moved = True
        if t >= 1.0:
            break
    return w if moved else None


# restricted solves get slow and ill-posed once the support nears the row
# count, so jumps are skipped beyond this size
_JUMP_MAX_SUPPORT = 800


def _gram_phase(X, y, mu, y_mean, y_var, w, active, alpha, n, tol,
                sweeps, max_sweeps, cache):
    """Cycle the active support in covariance form until it stabilizes.

    Returns (sweeps, last_delta); `w` is updated in place and the caller
    must resync its residual from the cached columns. Every four passes the
    fixed-sign restricted minimizer is attempted via _gram_jump; strongly
    correlated supports otherwise zigzag for thousands of passes with step
    sizes just above tolerance. A jump is accepted only when the objective
    (evaluated in moment form) does not increase, so descent survives
    rounding in the solve.
    """
    _gram_extend(X, y, mu, y_mean, cache, active)
    idx = cache["idx"]
    pos = cache["pos"]
    G = cache["G"]
    c = cache["c"]
    wc = w[idx]
    rho = G @ wc
    order = np.asarray([pos[int(j)] for j in active], dtype=np.intp)

    def quad_obj(v, gv):
        fit = 0.5 * (y_var - 2.0 * float(c @ v) + float(v @ gv))
        return fit + alpha * float(np.abs(v).sum())

    delta = np.inf
    since_jump = 0
    while sweeps < max_sweeps:
        delta = _gram_sweep(G, c, wc, rho, order, alpha)
        sweeps += 1
        since_jump += 1
        if delta < tol:
            break
        if since_jump >= 4 and np.count_nonzero(wc) <= min(n, _JUMP_MAX_SUPPORT):
            since_jump = 0
            cand = _gram_jump(G, c, wc, alpha)
            if cand is None:
                continue
            rho_cand = G @ cand
            cur = quad_obj(wc, rho)
            if quad_obj(cand, rho_cand) <= cur + 1e-12 * (1.0 + abs(cur)):
                wc = cand
                rho = rho_cand
    w[idx] = wc
    return sweeps, delta


def lasso_fit(
    X: np.ndarray,
    y: np.ndarray,
    alpha: float,
    w0: np.ndarray | None = None,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
    history: list | None = None,
    warn_on_cap: bool = True,
    gram_cache: dict | None = None,
) -> tuple[np.ndarray, float]:
    """Minimize (1/2n)||y - Xw - b||^2 + alpha*||w||_1.

    Cyclical coordinate descent: full passes over all usable columns
    establish and certify the support, and between them only the nonzero
    coordinates are cycled. Converged when the largest coordinate update of
    a pass falls below `tol`; the objective never increases from one pass
    to the next.

    On wide problems the inner cycling runs in covariance form against a
    Gram matrix built incrementally over every coordinate that has ever
    entered the support, so an inner pass costs O(support^2) rather than
    O(n p). Pass any dict as `gram_cache` to keep that cache warm across
    calls; it must only be reused with the identical (X, y). Strongly
    correlated supports make cyclic updates zigzag with near-tolerance
    steps for thousands of passes, so a stalling inner loop periodically
    tries the exact fixed-sign restricted minimizer and keeps it only when
    the objective does not increase.

    Columns whose variance vanishes (relative to their mean square) get
    weight 0. Pass `w0` for warm starts along an alpha path. Pass a list as
    `history` to record the objective after every pass; history runs force
    the plain residual-form path so every recorded value is exact.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 1:
        raise ValueError("X must be 2-D with one row per target")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    n, p = X.shape

    if gram_cache is not None and "moments" in gram_cache:
        # cache contract: same (X, y) as when the moments were stored, so
        # the finiteness scan (a full pass over X) is already paid for
        mu, sq, var, y_mean, y_var = gram_cache["moments"]
    else:
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite training data")
        mu, sq, var, y_mean = _center_stats(X, y)
        yc = y - y_mean
        y_var = float(yc @ yc) / n
        if gram_cache is not None:
            gram_cache["moments"] = (mu, sq, var, y_mean, y_var)
    live = np.flatnonzero(var > 1e-12 * np.maximum(sq, 1e-300))

    w = np.zeros(p) if w0 is None else np.asarray(w0, dtype=float).copy()
    nz0 = np.flatnonzero(w)
    r = y - X[:, nz0] @ w[nz0] if len(nz0) else y.copy()
    sum_r = float(r.sum())

    use_gram = history is None and p >= 128
    cache = gram_cache if gram_cache is not None else ({} if use_gram else None)

    def objective():
        rc = r - (sum_r / n)
        return float(rc @ rc) / (2 * n) + alpha * float(np.abs(w).sum())

    sweeps = 0
    delta = np.inf
    converged = False
    while sweeps < max_sweeps:
        delta, sum_r = _cd_sweep(X, r, sum_r, mu, var, w, live, alpha, n)
        sweeps += 1
        if history is not None:
            history.append(objective())
        if delta < tol:
            converged = True
            break
        active = np.flatnonzero(w)
        if not len(active):
            continue
        grow_ok = False
        if use_gram:
            pos = cache.get("pos", {})
            grown = len(pos) + sum(1 for j in active if int(j) not in pos)
            # once the ever-active set outgrows the cap, covariance form
            # stops paying: the Gram build is O(n * ea^2) and its memory
            # O(ea^2), while residual-form cycling stays O(n * support)
            grow_ok = grown <= _GRAM_CACHE_CAP
        if grow_ok:
            sweeps, delta = _gram_phase(X, y, mu, y_mean, y_var, w, active,
                                        alpha, n, tol, sweeps, max_sweeps, cache)
            nz = np.flatnonzero(w)
            r = y - X[:, nz] @ w[nz] if len(nz) else y.copy()
            sum_r = float(r.sum())
        else:
            while sweeps < max_sweeps:
                delta, sum_r = _cd_sweep(X, r, sum_r, mu, var, w, active, alpha, n)
                sweeps += 1
                if history is not None:
                    history.append(objective())
                if delta < tol:
                    break
    if not converged and sweeps >= max_sweeps and warn_on_cap:
        rc = r - (sum_r / n)
        warnings.warn(
            f"coordinate descent hit the sweep cap ({max_sweeps}); "
            f"last max update {delta:.3e}, residual rms {np.sqrt(rc @ rc / n):.3e}",
            RuntimeWarning,
        )
    intercept = y_mean - float(mu @ w)
    return w, intercept


def default_alpha_grid(X: np.ndarray, y: np.ndarray, n_points: int = 30) -> np.ndarray:
    """Geometric grid from alpha_max down six decades, descending."""
    am = alpha_max(X, y)
    if am <= 0:
        am = 1e-12
    return np.geomspace(am, am * 1e-6, n_points)


@dataclass(frozen=True)
class CVReport:
    """Cross-validation record: grid, per-fold errors, and the winner.

    ``val_mse`` has shape (folds, len(alpha_grid)); entries a fold skipped
    after its early stop are inf. Ties on mean error go to the larger alpha
    (the sparser model). ``R``/``gamma_omega`` are set when the report came
    out of a hyperparameter grid search.
    """

    alpha_grid: np.ndarray
    val_mse: np.ndarray
    alpha: float
    R: int | None = None
    gamma_omega: float | None = None

    @property
    def mean_val_mse(self) -> np.ndarray:
        return self.val_mse.mean(axis=0)

    @property
    def best_mse(self) -> float:
        return float(self.mean_val_mse.min())


def _take_rows_fortran(X: np.ndarray, idx: np.ndarray, block: int = 512) -> np.ndarray:
    """Gather rows into a fresh Fortran-ordered array, one column block at
    a time; a plain fancy-index plus asfortranarray would hold two full
    copies at once, which is what blows the memory budget on wide fits."""
    out = np.empty((len(idx), X.shape[1]), order="F")
    for j0 in range(0, X.shape[1], block):
        out[:, j0 : j0 + block] = X[idx, j0 : j0 + block]
    return out


def lasso_cv(
    X: np.ndarray,
    y: np.ndarray,
    alpha_grid: np.ndarray | None = None,
    folds: int = 4,
    seed: int = 0,
    max_sweeps: int = CD_MAX_SWEEPS,
    warn_on_cap: bool = True,
    patience: int = 6,
) -> CVReport:
    """Pick alpha by k-fold validation MSE over a descending geometric grid.

    Rows are shuffled once (deterministic in `seed`) and split into
    contiguous chunks of the shuffled order. Fits walk the grid from large
    alpha down with warm starts and a shared Gram cache per fold. A fold
    stops descending once its validation error has exceeded its running
    best for `patience` consecutive grid points (the error only climbs
    further into overfitting while the support balloons); skipped entries
    are recorded as inf so they can never win. Fewer rows than folds
    degrades to a train-only evaluation (validation = training data) with
    a warning; training error never rises along the path, so patience does
    not apply there. `max_sweeps` below the solver default trades accuracy
    for speed when screening many candidate configurations.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 1:
        raise ValueError("cross-validation needs at least one row")
    if alpha_grid is None:
        alpha_grid = default_alpha_grid(X, y)
    alpha_grid = np.sort(np.asarray(alpha_grid, dtype=float))[::-1].copy()

    if n < folds:
        warnings.warn(
            f"only {n} rows for {folds}-fold CV; falling back to train-only "
            f"alpha selection",
            RuntimeWarning,
        )
        Xf = np.asfortranarray(X)
        val_mse = np.empty((1, len(alpha_grid)))
        w = None
        cache = {}
        for a_i, alpha in enumerate(alpha_grid):
            w, b = lasso_fit(Xf, y, alpha, w0=w, max_sweeps=max_sweeps,
                             warn_on_cap=warn_on_cap, gram_cache=cache)
            resid = y - (X @ w + b)
            val_mse[0, a_i] = float(resid @ resid) / n
        mean_mse = val_mse[0]
        best = 0
        for i in range(1, len(alpha_grid)):
            if mean_mse[i] < mean_mse[best]:
                best = i
        return CVReport(
            alpha_grid=alpha_grid, val_mse=val_mse, alpha=float(alpha_grid[best])
        )

    perm = substream(seed, "cv").permutation(n)
    bounds = np.linspace(0, n, folds + 1, dtype=int)
    val_mse = np.full((folds, len(alpha_grid)), np.inf)
    for f in range(folds):
        val_idx = perm[bounds[f] : bounds[f + 1]]
        train_idx = np.concatenate([perm[: bounds[f]], perm[bounds[f + 1] :]])
        Xt = _take_rows_fortran(X, train_idx)
        yt = y[train_idx]
        Xv, yv = X[val_idx], y[val_idx]
        w = None
        cache = {}
        fold_best = np.inf
        rising = 0
        for a_i, alpha in enumerate(alpha_grid):
            w, b = lasso_fit(Xt, yt, alpha, w0=w, max_sweeps=max_sweeps,
                             warn_on_cap=warn_on_cap, gram_cache=cache)
            resid = yv - (Xv @ w + b)
            err = float(resid @ resid) / len(yv)
            val_mse[f, a_i] = err
            if err < fold_best:
                fold_best = err
                rising = 0
            else:
                rising += 1
                if rising >= patience:
                    break
        # release this fold's copy and caches before the next gather; on
        # wide problems holding two folds at once doubles peak memory
        Xt = Xv = None
        cache = None

    mean_mse = val_mse.mean(axis=0)
    best = 0
    for i in range(1, len(alpha_grid)):
        if mean_mse[i] < mean_mse[best]:
            best = i
    return CVReport(alpha_grid=alpha_grid, val_mse=val_mse, alpha=float(alpha_grid[best]))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateModel:
    """Fitted sparse model over one feature map, for one observable kind."""

    map: FeatureMap
    weights: np.ndarray
    intercept: float
    alpha: float
    kind: str
    fingerprint: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        if w.shape != (self.map.n_features,):
            raise ValueError(
                f"weights must have shape ({self.map.n_features},), got {w.shape}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.weights))


def fit_model(ts: TrainingSet, fmap: FeatureMap, alpha: float) -> SurrogateModel:
    X = feature_matrix(ts, fmap)
    w, b = lasso_fit(X, ts.y, alpha)
    return SurrogateModel(
        map=fmap,
        weights=w,
        intercept=b,
        alpha=alpha,
        kind=ts.kind,
        fingerprint=dataset_fingerprint(ts),
    )


def predict_site(model: SurrogateModel, g: float, Q: np.ndarray) -> float:
    """Observable at site 0 of the given (already rolled) frame."""
    phi = featurize(g, Q, model.map)
    return float(model.weights @ phi + model.intercept)


def evaluate_rmse(model: SurrogateModel, ts: TrainingSet) -> float:
    X = feature_matrix(ts, model.map)
    resid = ts.y - (X @ model.weights + model.intercept)
    return float(np.sqrt(resid @ resid / len(resid)))


def grid_search(
    ts: TrainingSet,
    R_grid=(5, 10, 20, 40, 80, 160),
    gamma_grid=(0.3, 0.6, 1.0, 2.0, 3.0, 6.0, 10.0, 20.0),
    seed: int = 0,
    folds: int = 4,
    g_mode: str = "scaled",
    radius: int = 1,
    screen_sweeps: int = 500,
    budget_samples: int | None = 128,
) -> tuple[CVReport, SurrogateModel]:
    """Cross-validate every (R, gamma_omega) cell; refit the winner on all data.

    Each cell draws its own frequencies deterministically from `seed`, runs
    `lasso_cv` on the cell's feature matrix, and competes on mean validation
    MSE at its chosen alpha. Screening runs on at most `budget_samples * L`
    records, drawn without replacement by a deterministic shuffle (the
    widest cells otherwise need multi-GB feature matrices on large pools);
    feature matrices are built one cell at a time so peak memory stays near
    the largest single screening cell. Screening fits also run under a
    reduced sweep cap: rank-deficient cells (tiny gamma_omega with many
    features) zigzag for ever near the optimum without getting any more
    competitive, so they get cut off quietly. The winning cell's final
    refit uses all records and the full solver defaults.
    """
    if not len(R_grid) or not len(gamma_grid):
        raise ValueError("hyperparameter grids must be nonempty")
    screen_ts = ts
    if budget_samples is not None and budget_samples * ts.L < len(ts):
        perm = substream(seed, "screen").permutation(len(ts))
        screen_ts = subset(ts, perm[: budget_samples * ts.L])
    best: CVReport | None = None
    best_map: FeatureMap | None = None
    for R in R_grid:
        for gamma_omega in gamma_grid:
            fmap = FeatureMap(
                L=ts.L,
                R=int(R),
                gamma_omega=float(gamma_omega),
                radius=radius,
                g_mode=g_mode,
                seed=seed,
            )
            X = feature_matrix(screen_ts, fmap)
            rep = lasso_cv(X, screen_ts.y, folds=folds, seed=seed,
                           max_sweeps=screen_sweeps, warn_on_cap=False)
            del X
            rep = CVReport(
                alpha_grid=rep.alpha_grid,
                val_mse=rep.val_mse,
                alpha=rep.alpha,
                R=int(R),
                gamma_omega=float(gamma_omega),
            )
            if best is None or rep.best_mse < best.best_mse:
                best, best_map = rep, fmap
    model = fit_model(ts, best_map, best.alpha)
    return best, model


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: SurrogateModel) -> dict:
    nz = np.flatnonzero(model.weights)
    return {
        "L": model.map.L,
        "radius": model.map.radius,
        "R": model.map.R,
        "gamma_omega": model.map.gamma_omega,
        "g_mode": model.map.g_mode,
        "seed": model.map.seed,
        "frequencies": [float(x) for x in model.map.frequencies.ravel()],
        "weights": [[int(j), float(model.weights[j])] for j in nz],
        "intercept": model.intercept,
        "alpha": model.alpha,
        "kind": model.kind,
        "fingerprint": model.fingerprint,
    }


def save_model(model: SurrogateModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def model_from_dict(d: dict) -> SurrogateModel:
    w = 2 * d["radius"] + 1
    freq = np.array(d["frequencies"], dtype=float).reshape(d["R"], w)
    fmap = FeatureMap(
        L=d["L"],
        R=d["R"],
        gamma_omega=d["gamma_omega"],
        radius=d["radius"],
        g_mode=d["g_mode"],
        seed=d["seed"],
        frequencies=freq,
    )
    weights = np.zeros(fmap.n_features)
    for j, val in d["weights"]:
        weights[j] = val
    return SurrogateModel(
        map=fmap,
        weights=weights,
        intercept=d["intercept"],
        alpha=d["alpha"],
        kind=d["kind"],
        fingerprint=d.get("fingerprint", ""),
    )


def load_model(path) -> SurrogateModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
