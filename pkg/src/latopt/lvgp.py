"""Mixed-variable Gaussian process surrogate for the stiffness entries.

Each qualitative cell class is mapped to a learned 2-D latent vector; the
Gaussian correlation acts on the transformed input (rho, z1, z2). Two kernel
modes are supported:

* ``"sos"`` — one correlation function per stiffness entry (independent
  quantitative scales, shared latent map),
* ``"separable"`` — a single correlation function shared by all entries
  (shared scale and latent map, per-entry variances only), the baseline whose
  one-size-fits-all correlation degrades the normal-shear coupling entries.

The latent scale matrix is fixed to the identity and absorbed into the
latent vectors; identifiability is pinned by z(first class) = 0 and
z(second class) on the nonnegative first axis.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.stats import qmc, spearmanr

from .library import ENTRY_NAMES, LibraryDataset

log = logging.getLogger(__name__)

LATENT_DIM = 2
PHI_BOUNDS = (1e-4, 1e4)
DEFAULT_NUGGET = 1e-6
MAX_NUGGET = 1e-2


class TrainingError(RuntimeError):
    """All likelihood restarts failed (non-SPD correlation matrices)."""


def gaussian_correlation(s1: np.ndarray, s2: np.ndarray, phi: float) -> np.ndarray:
    """Gaussian correlation between transformed inputs s = (rho, z1, z2).

    r = exp(-phi*(rho-rho')^2 - ||z-z'||^2); phi scales only the quantitative
    part, the latent part carries an identity scale.
    """
    s1 = np.atleast_2d(np.asarray(s1, float))
    s2 = np.atleast_2d(np.asarray(s2, float))
    d_rho = (s1[:, :1] - s2[:, :1].T) ** 2
    d_z = ((s1[:, None, 1:] - s2[None, :, 1:]) ** 2).sum(axis=-1)
    r = np.exp(-phi * d_rho - d_z)
    return r if r.size > 1 else float(r[0, 0])


def mle_mean_variance(chol_lower: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Profiled mean and variance given the Cholesky factor of R."""
    n = d.shape[0]
    if n < 2:
        raise ValueError("need at least two training points")
    ones = np.ones(n)
    Rid = sla.cho_solve((chol_lower, True), d)
    Ri1 = sla.cho_solve((chol_lower, True), ones)
    gamma = float(ones @ Rid) / float(ones @ Ri1)
    u = Rid - gamma * Ri1
    sigma2 = float(d @ u) / n
    return gamma, max(sigma2, 0.0)


# ---------------------------------------------------------------------------
# training internals
# ---------------------------------------------------------------------------


@dataclass
class _TrainData:
    rho: np.ndarray           # (n,)
    class_idx: np.ndarray     # (n,) int in [0, n_levels)
    D: np.ndarray             # (n, n_out) standardized outputs
    n_levels: int
    d_rho: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        self.d_rho = (self.rho[:, None] - self.rho[None, :]) ** 2


def _unpack(theta: np.ndarray, n_levels: int, n_phi: int):
    """theta = [z_B_x, z_C.., z_J.. (row-major), log(phi)...]; z_A pinned at 0,
    z_B pinned to the nonnegative first axis."""
    Z = np.zeros((n_levels, LATENT_DIM))
    Z[1, 0] = theta[0]
    Z[2:] = theta[1 : 1 + (n_levels - 2) * LATENT_DIM].reshape(n_levels - 2, LATENT_DIM)
    phi = np.exp(theta[1 + (n_levels - 2) * LATENT_DIM :])
    return Z, phi


def _pack(Z: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.concatenate([[Z[1, 0]], Z[2:].ravel(), np.log(phi)])


def _neg_log_likelihood(theta: np.ndarray, data: _TrainData, nugget: float,
                        shared: bool) -> tuple[float, np.ndarray]:
    """Profiled negative log-likelihood and its analytic gradient.

    Value: sum_i [ n*ln(sigma_i^2) + ln|R_i| ] with the per-entry mean and
    variance profiled out. Gradient uses d(obj)/dR_i = A_i = R_i^{-1} -
    u_i u_i^T / sigma_i^2 with u_i = R_i^{-1}(d_i - 1*gamma_i); the profiled
    gamma_i contributes nothing (envelope condition 1^T u_i = 0).
    """
    n, n_out = data.D.shape
    n_phi = 1 if shared else n_out
    Z, phi = _unpack(theta, data.n_levels, n_phi)

    Zrows = Z[data.class_idx]                       # (n, 2)
    d_z = ((Zrows[:, None, :] - Zrows[None, :, :]) ** 2).sum(-1)
    Ez = np.exp(-d_z)

    obj = 0.0
    grad_z = np.zeros_like(Z)
    grad_logphi = np.zeros(n_phi)
    ones = np.ones(n)

    for j in range(n_phi):
        Kj = np.exp(-phi[j] * data.d_rho) * Ez      # kernel without nugget
        R = Kj + nugget * np.eye(n)
        try:
            L = sla.cholesky(R, lower=True)
        except sla.LinAlgError:
            return np.inf, np.zeros_like(theta)
        Rinv = sla.lapack.dpotri(L, lower=1)[0]
        Rinv = Rinv + np.tril(Rinv, -1).T
        logdet = 2.0 * float(np.log(np.diag(L)).sum())

        # responses attached to this correlation matrix
        resp = list(range(n_out)) if shared else [j]
        A = len(resp) * Rinv
        for i in resp:
            d = data.D[:, i]
            Rid = Rinv @ d
            Ri1 = Rinv @ ones
            gamma = float(ones @ Rid) / float(ones @ Ri1)
            u = Rid - gamma * Ri1
            sigma2 = float(d @ u) / n
            if sigma2 <= 0.0:
                sigma2 = np.finfo(float).tiny
            obj += n * np.log(sigma2) + logdet
            A -= np.outer(u, u) / sigma2

        G = A * Kj
        grad_logphi[j] = -phi[j] * float((G * data.d_rho).sum())
        # d obj / d z_{t,k} = -4 * sum_{a in t} (S_a z_{t,k} - P_{a,k})
        S = G.sum(axis=1)
        P = G @ Zrows
        Ssum = np.bincount(data.class_idx, weights=S, minlength=data.n_levels)
        Psum = np.vstack([
            np.bincount(data.class_idx, weights=P[:, k], minlength=data.n_levels)
            for k in range(LATENT_DIM)
        ]).T
        grad_z += -4.0 * (Ssum[:, None] * Z - Psum)

    g = np.concatenate([[grad_z[1, 0]], grad_z[2:].ravel(), grad_logphi])
    return obj, g


def neg_log_likelihood(Z: np.ndarray, phi: np.ndarray, rho: np.ndarray,
                       class_idx: np.ndarray, D: np.ndarray,
                       nugget: float = DEFAULT_NUGGET,
                       kernel_mode: str = "sos") -> tuple[float, dict[str, np.ndarray]]:
    """Objective of the hyperparameter fit, with gradients w.r.t. the free
    latent coordinates and log-scales. Raises TrainingError on a non-SPD
    correlation matrix."""
    shared = kernel_mode == "separable"
    data = _TrainData(np.asarray(rho, float), np.asarray(class_idx),
                      np.asarray(D, float), int(Z.shape[0]))
    theta = _pack(np.asarray(Z, float), np.asarray(phi, float))
    val, g = _neg_log_likelihood(theta, data, nugget, shared)
    if not np.isfinite(val):
        raise TrainingError("correlation matrix not SPD at the given parameters")
    n_z = 1 + (Z.shape[0] - 2) * LATENT_DIM
    return val, {"z": g[:n_z], "log_phi": g[n_z:]}


# ---------------------------------------------------------------------------
# trained model
# ---------------------------------------------------------------------------


@dataclass
class TrainedSurrogate:
    """Fitted latent map, kernel scales and cached prediction weights."""

    kernel_mode: str
    class_levels: list[str]
    latent: np.ndarray            # (n_levels, 2)
    phi: np.ndarray               # (n_out,) quantitative scales (shared -> equal)
    gamma: np.ndarray             # (n_out,) profiled means (standardized space)
    sigma2: np.ndarray            # (n_out,)
    out_mean: np.ndarray          # (n_out,) de-standardization constants
    out_std: np.ndarray           # (n_out,)
    nugget: float
    train_rho: np.ndarray         # (n,)
    train_class_idx: np.ndarray   # (n,)
    train_outputs: np.ndarray     # (n, n_out) raw (unstandardized)
    seed: int = 0
    nll: float = np.nan
    weights: np.ndarray = dc_field(init=False)   # (n, n_out) R^-1 (d - 1 gamma)

    def __post_init__(self):
        self._rebuild()

    def _rebuild(self):
        n, n_out = self.train_outputs.shape
        Zrows = self.latent[self.train_class_idx]
        d_z = ((Zrows[:, None, :] - Zrows[None, :, :]) ** 2).sum(-1)
        d_rho = (self.train_rho[:, None] - self.train_rho[None, :]) ** 2
        D = (self.train_outputs - self.out_mean) / self.out_std
        self.weights = np.empty((n, n_out))
        self._chols = []
        for i in range(n_out):
            R = np.exp(-self.phi[i] * d_rho - d_z) + self.nugget * np.eye(n)
            L = sla.cholesky(R, lower=True)
            self._chols.append(L)
            self.weights[:, i] = sla.cho_solve((L, True), D[:, i] - self.gamma[i])
        self._Zrows = Zrows

    # -- prediction --------------------------------------------------------

    def _corr_vectors(self, rho, z):
        rho = np.atleast_1d(np.asarray(rho, float))
        z = np.atleast_2d(np.asarray(z, float))
        d_rho = (rho[:, None] - self.train_rho[None, :]) ** 2
        d_z = ((z[:, None, :] - self._Zrows[None, :, :]) ** 2).sum(-1)
        return d_rho, d_z

    def predict(self, rho, z) -> np.ndarray:
        """Mean prediction of the six normalized stiffness entries at
        (rho, z); accepts scalars or batched (m,) / (m, 2) inputs."""
        scalar = np.isscalar(rho)
        d_rho, d_z = self._corr_vectors(rho, z)
        m = d_rho.shape[0]
        out = np.empty((m, len(self.phi)))
        for i in range(len(self.phi)):
            r = np.exp(-self.phi[i] * d_rho - d_z)
            out[:, i] = self.gamma[i] + r @ self.weights[:, i]
        out = self.out_mean + self.out_std * out
        return out[0] if scalar else out

    def predict_grad(self, rho, z) -> tuple[np.ndarray, np.ndarray]:
        """Analytic derivatives of the prediction: (d/d rho, d/dz) with
        shapes (..., n_out) and (..., n_out, 2)."""
        scalar = np.isscalar(rho)
        d_rho, d_z = self._corr_vectors(rho, z)
        rho_v = np.atleast_1d(np.asarray(rho, float))
        z_v = np.atleast_2d(np.asarray(z, float))
        m = d_rho.shape[0]
        n_out = len(self.phi)
        g_rho = np.empty((m, n_out))
        g_z = np.empty((m, n_out, LATENT_DIM))
        diff_rho = rho_v[:, None] - self.train_rho[None, :]
        diff_z = z_v[:, None, :] - self._Zrows[None, :, :]
        for i in range(n_out):
            r = np.exp(-self.phi[i] * d_rho - d_z)
            rw = r * self.weights[:, i][None, :]
            g_rho[:, i] = self.out_std[i] * (-2.0 * self.phi[i]) * (rw * diff_rho).sum(1)
            g_z[:, i, :] = self.out_std[i] * (-2.0) * np.einsum("mn,mnk->mk", rw, diff_z)
        return (g_rho[0], g_z[0]) if scalar else (g_rho, g_z)

    def predict_class(self, rho, label: str) -> np.ndarray:
        return self.predict(rho, np.broadcast_to(self.latent_of_class(label),
                                                 (np.size(rho), LATENT_DIM)))

    def latent_of_class(self, label: str) -> np.ndarray:
        try:
            k = self.class_levels.index(label)
        except ValueError:
            raise KeyError(f"unknown class label {label!r}") from None
        return self.latent[k].copy()

    def latent_table(self) -> pd.DataFrame:
        return pd.DataFrame({"class": self.class_levels,
                             "z1": self.latent[:, 0], "z2": self.latent[:, 1]})

    def latent_bounds(self, margin: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box of the class latent points expanded by ``margin`` per
        side (minimum width guard for degenerate boxes)."""
        lo = self.latent.min(axis=0)
        hi = self.latent.max(axis=0)
        span = np.maximum(hi - lo, 0.1)
        return lo - margin * span, hi + margin * span

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "format": "latopt-surrogate",
            "version": 1,
            "kernel_mode": self.kernel_mode,
            "class_levels": self.class_levels,
            "latent": self.latent.tolist(),
            "phi": self.phi.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma2": self.sigma2.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
            "nugget": self.nugget,
            "seed": self.seed,
            "nll": self.nll,
            "train_rho": self.train_rho.tolist(),
            "train_class_idx": self.train_class_idx.tolist(),
            "train_outputs": self.train_outputs.tolist(),
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path) -> "TrainedSurrogate":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != "latopt-surrogate":
            raise ValueError("not a surrogate model file")
        return cls(
            kernel_mode=payload["kernel_mode"],
            class_levels=list(payload["class_levels"]),
            latent=np.array(payload["latent"], float),
            phi=np.array(payload["phi"], float),
            gamma=np.array(payload["gamma"], float),
            sigma2=np.array(payload["sigma2"], float),
            out_mean=np.array(payload["out_mean"], float),
            out_std=np.array(payload["out_std"], float),
            nugget=float(payload["nugget"]),
            train_rho=np.array(payload["train_rho"], float),
            train_class_idx=np.array(payload["train_class_idx"], int),
            train_outputs=np.array(payload["train_outputs"], float),
            seed=int(payload.get("seed", 0)),
            nll=float(payload.get("nll", np.nan)),
        )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _lhs_starts(n_restarts, n_levels, n_phi, seed):
    sampler = qmc.LatinHypercube(d=1 + (n_levels - 2) * LATENT_DIM + n_phi, seed=seed)
    unit = sampler.random(n_restarts)
    starts = np.empty_like(unit)
    n_z = 1 + (n_levels - 2) * LATENT_DIM
    starts[:, 0] = 2.0 * unit[:, 0]                     # z_B_x in [0, 2]
    starts[:, 1:n_z] = 4.0 * unit[:, 1:n_z] - 2.0       # other z in [-2, 2]
    starts[:, n_z:] = np.log(10.0) * (3.0 * unit[:, n_z:] - 1.0)  # phi in [0.1, 100]
    return starts


def train(dataset: LibraryDataset, kernel_mode: str = "sos",
          n_restarts: int = 16, seed: int = 0, nugget: float = DEFAULT_NUGGET,
          zero_anchor: bool = False, train_indices: np.ndarray | None = None,
          maxiter: int = 500) -> TrainedSurrogate:
    """Fit the surrogate on the dataset's training split.

    Runs ``n_restarts`` Latin-hypercube starts of a bounded quasi-Newton
    minimization of the profiled negative log-likelihood and keeps the best.
    The nugget escalates tenfold (up to 1e-2) whenever every restart fails a
    Cholesky factorization. ``zero_anchor`` appends one synthetic
    zero-stiffness record per class at rho = 0, anchoring extrapolation
    toward the empty cell; intended for models driving the optimizer.
    """
    if kernel_mode not in ("sos", "separable"):
        raise ValueError("kernel_mode must be 'sos' or 'separable'")
    if n_restarts < 8:
        raise ValueError("need at least 8 restarts")
    levels = dataset.class_levels
    idx = dataset.train_idx if train_indices is None else train_indices
    if len(idx) < 50:
        raise ValueError("need at least 50 training records")
    if set(dataset.labels[idx]) != set(levels):
        raise ValueError("training split must span all class levels")

    level_of = {t: k for k, t in enumerate(levels)}
    rho = dataset.vf[idx].astype(float)
    cls = np.array([level_of[t] for t in dataset.labels[idx]])
    Y = dataset.entries[idx].copy()
    if zero_anchor:
        rho = np.concatenate([rho, np.zeros(len(levels))])
        cls = np.concatenate([cls, np.arange(len(levels))])
        Y = np.vstack([Y, np.zeros((len(levels), Y.shape[1]))])

    out_mean = Y.mean(axis=0)
    out_std = Y.std(axis=0)
    out_std[out_std < 1e-12] = 1.0
    D = (Y - out_mean) / out_std

    n_out = Y.shape[1]
    shared = kernel_mode == "separable"
    n_phi = 1 if shared else n_out
    data = _TrainData(rho, cls, D, len(levels))
    n_z = 1 + (len(levels) - 2) * LATENT_DIM
    bounds = [(0.0, 8.0)] + [(-8.0, 8.0)] * (n_z - 1) + \
             [(np.log(PHI_BOUNDS[0]), np.log(PHI_BOUNDS[1]))] * n_phi
    starts = _lhs_starts(n_restarts, len(levels), n_phi, seed)

    current_nugget = nugget
    best = None
    while best is None:
        results = []
        for k, x0 in enumerate(starts):
            res = minimize(_neg_log_likelihood, x0, args=(data, current_nugget, shared),
                           jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter, "ftol": 1e-8})
            if np.isfinite(res.fun):
                results.append((float(res.fun), k, res.x))
        if results:
            best = min(results)
            break
        if current_nugget >= MAX_NUGGET:
            raise TrainingError(
                f"all {n_restarts} restarts failed factorization up to nugget {current_nugget:g}")
        current_nugget *= 10.0
        log.warning("all restarts failed; escalating nugget to %g", current_nugget)

    fun, _, theta = best
    Z, phi = _unpack(theta, len(levels), n_phi)
    phi_full = np.full(n_out, phi[0]) if shared else phi

    # profiled constants at the optimum (nugget escalation on failure, the
    # near-duplicate classes can make individual R marginally conditioned)
    gamma = np.empty(n_out)
    sigma2 = np.empty(n_out)
    Zrows = Z[cls]
    d_z = ((Zrows[:, None, :] - Zrows[None, :, :]) ** 2).sum(-1)
    model_nugget = current_nugget
    while True:
        try:
            for i in range(n_out):
                R = np.exp(-phi_full[i] * data.d_rho - d_z) + model_nugget * np.eye(len(rho))
                L = sla.cholesky(R, lower=True)
                gamma[i], sigma2[i] = mle_mean_variance(L, D[:, i])
            break
        except sla.LinAlgError:
            if model_nugget >= MAX_NUGGET:
                raise TrainingError("correlation matrix not SPD at the optimum")
            model_nugget *= 10.0

    model = TrainedSurrogate(
        kernel_mode=kernel_mode, class_levels=levels, latent=Z, phi=phi_full,
        gamma=gamma, sigma2=sigma2, out_mean=out_mean, out_std=out_std,
        nugget=model_nugget, train_rho=rho, train_class_idx=cls,
        train_outputs=Y, seed=seed, nll=fun,
    )
    log.info("trained %s model: nll=%.3f nugget=%g phi=%s", kernel_mode, fun,
             model_nugget, np.array2string(phi_full, precision=3))
    return model


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def metrics(model: TrainedSurrogate, dataset: LibraryDataset,
            indices: np.ndarray | None = None) -> pd.DataFrame:
    """Per-entry MSE, RMSE and r^2 on the dataset's test split."""
    idx = dataset.test_idx if indices is None else indices
    if len(idx) == 0:
        raise ValueError("empty test set")
    level_of = {t: k for k, t in enumerate(model.class_levels)}
    z = model.latent[[level_of[t] for t in dataset.labels[idx]]]
    pred = model.predict(dataset.vf[idx], z)
    truth = dataset.entries[idx]
    err = pred - truth
    mse = (err**2).mean(axis=0)
    sst = ((truth - truth.mean(axis=0)) ** 2).mean(axis=0)
    r2 = np.where(sst > 0, 1.0 - mse / np.where(sst > 0, sst, 1.0), np.nan)
    return pd.DataFrame({"entry": ENTRY_NAMES, "mse": mse,
                         "rmse": np.sqrt(mse), "r2": r2})


def export_latent(model: TrainedSurrogate, path) -> pd.DataFrame:
    table = model.latent_table()
    table.to_csv(path, index=False, float_format="%.12g")
    return table


def latent_distance_interpretability(model: TrainedSurrogate,
                                     n_grid: int = 50) -> float:
    """Spearman rank correlation between pairwise latent distances and the
    RMSE between the classes' predicted stiffness-vs-density curves."""
    grid = np.linspace(0.1, 1.0, n_grid)
    curves = {t: model.predict_class(grid, t) for t in model.class_levels}
    dists, rmses = [], []
    levels = model.class_levels
    for a in range(len(levels)):
        for b in range(a + 1, len(levels)):
            dists.append(np.linalg.norm(model.latent[a] - model.latent[b]))
            rmses.append(float(np.sqrt(((curves[levels[a]] - curves[levels[b]]) ** 2).mean())))
    return float(spearmanr(dists, rmses).statistic)
