"""Exact GP regression between function spaces with a composed neural-operator kernel.

Targets of all training pairs are stacked function-major into one vector of
length ``n * M`` and modelled as a draw from ``N(0, K + sigma_n^2 I)`` with
``K[(i, p), (j, q)] = c[f_i, f_j](x_p, x_q)``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from .data_io import FunctionDataset
from .layer_cov import (
    CovarianceComposer,
    FnoIntegral,
    LayerSpec,
    MaternIntegral,
    NoGpConfig,
    TruncationError,
)
from .torus_spectral import GridFunction

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-8, 1e-6, 1e-4)
NOISE_FLOOR = 1e-8
FD_STEP = 1e-5
LOG_VARIANCE_BOUNDS = (math.log(1e-8), math.log(1e4))
LOG_LENGTHSCALE_BOUNDS = (math.log(1e-2), math.log(1e2))


class NumericalError(ArithmeticError):
    """The kernel matrix is non-finite or cannot be factorised."""


@dataclass(frozen=True)
class GpHyperparams:
    config: NoGpConfig
    noise_variance: float = 1e-3

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, data: dict) -> "GpHyperparams":
        return cls(NoGpConfig.from_dict(data["config"]), data["noise_variance"])

    # -- positive parameters as a flat vector of logs --------------------------

    def parameter_names(self) -> list[str]:
        """Names of the strictly positive continuous hyperparameters."""
        names = []
        for k, layer in enumerate(self.config.layers):
            integ = layer.integral
            if integ is not None and integ.sigma_k2 > 0:
                names.append(f"layer{k}.sigma_k2")
            if layer.sigma_w2 > 0:
                names.append(f"layer{k}.sigma_w2")
            if isinstance(integ, MaternIntegral):
                names += [f"layer{k}.ell_x{j}" for j in range(len(integ.ell_x))]
                names += [f"layer{k}.ell_z{j}" for j in range(len(integ.ell_z))]
        names.append("noise")
        return names

    def get(self, name: str) -> float:
        if name == "noise":
            return self.noise_variance
        head, attr = name.split(".")
        layer = self.config.layers[int(head[5:])]
        if attr == "sigma_w2":
            return layer.sigma_w2
        if attr == "sigma_k2":
            return layer.integral.sigma_k2
        return getattr(layer.integral, attr[:5])[int(attr[5:])]

    def with_values(self, values: dict) -> "GpHyperparams":
        """Copy with the named parameters replaced."""
        layers = list(self.config.layers)
        noise = self.noise_variance
        for name, value in values.items():
            value = float(value)
            if name == "noise":
                noise = value
                continue
            head, attr = name.split(".")
            k = int(head[5:])
            layer = layers[k]
            if attr == "sigma_w2":
                layers[k] = replace(layer, sigma_w2=value)
            elif attr == "sigma_k2":
                layers[k] = replace(layer, integral=replace(layer.integral, sigma_k2=value))
            else:
                field_name, j = attr[:5], int(attr[5:])
                ells = list(getattr(layer.integral, field_name))
                ells[j] = value
                layers[k] = replace(layer, integral=replace(layer.integral, **{field_name: tuple(ells)}))
        return GpHyperparams(NoGpConfig(tuple(layers), self.config.input_channels), noise)


# --------------------------------------------------------------------------
# linear algebra


class GramModel:
    """Kernel evaluations for a fixed set of input functions.

    Wraps a :class:`CovarianceComposer` so hyperparameter-independent pieces
    are computed once; ``train`` selects the functions used for conditioning.
    """

    def __init__(self, ds: FunctionDataset, extra: Sequence[GridFunction] = (),
                 oversample: int = 4):
        self.ds = ds
        self.functions = ds.input_functions() + list(extra)
        self.composer = CovarianceComposer(self.functions, ds.grid, oversample)

    def kernel(self, config: NoGpConfig, index=None) -> np.ndarray:
        K = self.composer(config)
        if index is not None:
            K = K.select(index)
        values = K.values
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[:5]
            raise NumericalError(f"non-finite kernel entries at (i, j, p, q) = {bad.tolist()}")
        return K.flat()


def _with_jitter(K: np.ndarray, scale: float) -> np.ndarray:
    mean_diag = float(np.mean(np.diag(K)))
    out = K.copy()
    out[np.diag_indices_from(out)] += scale * max(mean_diag, 0.0)
    return out


def build_gram(hp: GpHyperparams, ds: FunctionDataset, model: GramModel | None = None,
               index=None) -> np.ndarray:
    """Flattened ``(nM, nM)`` kernel matrix with ``1e-8 * mean(diag)`` jitter added."""
    model = model or GramModel(ds)
    K = model.kernel(hp.config, index)
    return _with_jitter(K, JITTER_LADDER[0])


@dataclass
class _Factor:
    cho: tuple
    jitter: float

    def solve(self, b):
        return linalg.cho_solve(self.cho, b)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cho[0]))))


def _factor(K: np.ndarray, noise: float) -> _Factor:
    """Cholesky of ``K + noise I``, escalating jitter (relative to the mean diagonal)."""
    mean_diag = max(float(np.mean(np.diag(K))), 0.0)
    A = K.copy()
    idx = np.diag_indices_from(A)
    A[idx] += noise
    added = 0.0
    for jitter in (0.0,) + JITTER_LADDER[1:]:
        A[idx] += (jitter - added) * mean_diag
        added = jitter
        try:
            cho = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(cho[0])) and np.all(np.diag(cho[0]) > 0):
            if jitter:
                logger.info("Cholesky needed extra jitter %.0e * mean diagonal", jitter)
            return _Factor(cho, jitter)
    raise NumericalError("kernel matrix is not positive definite even after jitter "
                         f"{JITTER_LADDER[-1]:.0e} * mean diagonal")


def _lml(K: np.ndarray, y: np.ndarray, noise: float) -> float:
    fac = _factor(K, noise)
    alpha = fac.solve(y)
    return float(-0.5 * y @ alpha - 0.5 * fac.logdet() - 0.5 * y.size * math.log(2 * math.pi))


def log_marginal_likelihood(hp: GpHyperparams, ds: FunctionDataset,
                            model: GramModel | None = None, index=None) -> float:
    """``log N(y | 0, K + sigma_n^2 I)`` for the stacked targets ``y``."""
    K = build_gram(hp, ds, model, index)
    y = (ds.targets if index is None else ds.targets[np.asarray(index)]).ravel()
    return _lml(K, y, hp.noise_variance)


@dataclass
class Posterior:
    """Posterior mean ``(n*, M)`` and covariance blocks ``(n*, M, M)`` for test inputs."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def stddev(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diagonal(self.cov, axis1=1, axis2=2), 0.0))


def _posterior(Kfull: np.ndarray, y: np.ndarray, noise: float, n_train: int, m: int) -> Posterior:
    ntm = n_train * m
    K = _with_jitter(Kfull[:ntm, :ntm], JITTER_LADDER[0])
    Ks = Kfull[:ntm, ntm:]
    Kss = Kfull[ntm:, ntm:]
    fac = _factor(K, noise)
    mean = Ks.T @ fac.solve(y)
    V = fac.solve(Ks)
    n_star = Kss.shape[0] // m
    cov = np.empty((n_star, m, m))
    for t in range(n_star):
        sl = slice(t * m, (t + 1) * m)
        block = Kss[sl, sl] - Ks[:, sl].T @ V[:, sl]
        cov[t] = (block + block.T) / 2
    return Posterior(mean.reshape(n_star, m), cov)


def predict_many(hp: GpHyperparams, ds: FunctionDataset, f_stars: Sequence[GridFunction],
                 index=None) -> Posterior:
    """Posterior for several test inputs from one kernel assembly."""
    for f in f_stars:
        if not f.grid.same_nodes(ds.grid):
            raise ValueError("test input lives on a different grid than the training data")
    train = ds if index is None else ds.select(index)
    model = GramModel(train, f_stars)
    Kfull = model.kernel(hp.config)
    return _posterior(Kfull, train.targets.ravel(), hp.noise_variance, train.n,
                      ds.grid.n_points)


def posterior_predict(hp: GpHyperparams, ds: FunctionDataset, f_star: GridFunction,
                      ) -> tuple[GridFunction, np.ndarray]:
    """Posterior mean (on the dataset grid) and ``M x M`` covariance at ``f_star``."""
    post = predict_many(hp, ds, [f_star])
    return GridFunction(ds.grid, post.mean[0].reshape(ds.grid.sizes)), post.cov[0]


def l2_error(pred, truth, grid=None) -> tuple[float, float]:
    """Absolute and relative discrete L2 errors on the torus.

    ``pred`` and ``truth`` are grid functions or arrays (then ``grid`` gives
    the cell volume).  The relative error falls back to the absolute one for a
    zero truth.
    """
    if isinstance(pred, GridFunction):
        grid = pred.grid
        if isinstance(truth, GridFunction) and not truth.grid.same_nodes(grid):
            raise ValueError("prediction and truth live on different grids")
    if isinstance(truth, GridFunction):
        grid = grid or truth.grid
        truth = truth.values
    if isinstance(pred, GridFunction):
        pred = pred.values
    if grid is None:
        raise ValueError("a grid is needed to weight plain arrays")
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    w = grid.cell_volume
    absolute = math.sqrt(w * float(np.sum((pred - truth) ** 2)))
    norm = math.sqrt(w * float(np.sum(truth ** 2)))
    return absolute, (absolute / norm if norm > 0 else absolute)


# --------------------------------------------------------------------------
# hyperparameter fitting


@dataclass
class FitResult:
    hyperparams: GpHyperparams
    log_likelihood: float
    initial_log_likelihood: float
    converged: bool
    n_iterations: int
    n_evaluations: int
    message: str = ""


def _bounds(name: str) -> tuple[float, float]:
    return LOG_LENGTHSCALE_BOUNDS if ".ell" in name else LOG_VARIANCE_BOUNDS


def fit_hyperparams(ds: FunctionDataset, init: GpHyperparams, budget: int = 50,
                    fixed: Sequence[str] = (), model: GramModel | None = None,
                    index=None) -> FitResult:
    """Maximise the log marginal likelihood over log-parameters with L-BFGS-B.

    Gradients are central finite differences (step ``1e-5`` in log space).
    ``budget`` bounds the number of quasi-Newton iterates including the
    starting point, so ``budget = 1`` returns ``init``.  Names in ``fixed``
    (see :meth:`GpHyperparams.parameter_names`) are held constant.  The best
    point seen is returned; ``converged`` is False if the budget ran out or
    the optimiser stopped abnormally.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    model = model or GramModel(ds)
    names = [n for n in init.parameter_names() if n not in set(fixed)]
    unknown = set(fixed) - set(init.parameter_names())
    if unknown:
        raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
    y = (ds.targets if index is None else ds.targets[np.asarray(index)]).ravel()
    x0 = np.array([math.log(max(init.get(n), NOISE_FLOOR if n == "noise" else 0.0))
                   for n in names])
    bounds = [_bounds(n) for n in names]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    x0 = np.clip(x0, lo, hi)
    n_evals = 0
    best = {"x": x0, "f": -np.inf}

    def hp_at(x) -> GpHyperparams:
        vals = dict(zip(names, np.exp(x)))
        if "noise" in vals:
            vals["noise"] = max(vals["noise"], NOISE_FLOOR)
        return init.with_values(vals)

    def objective(x) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            K = _with_jitter(model.kernel(hp_at(x).config, index), JITTER_LADDER[0])
            val = _lml(K, y, hp_at(x).noise_variance)
        except (NumericalError, TruncationError, ValueError, FloatingPointError):
            return -np.inf
        if not np.isfinite(val):
            return -np.inf
        if val > best["f"]:
            best["x"], best["f"] = np.array(x), val
        return val

    f_init = objective(x0)
    if budget == 1 or not names:
        return FitResult(init, f_init, f_init, True, 0, n_evals, "budget exhausted at init")
    if not np.isfinite(f_init):
        raise NumericalError("log marginal likelihood is not finite at the initial point")

    penalty = 1e10 + abs(f_init)

    def fun_and_grad(x):
        f0 = objective(x)
        if not np.isfinite(f0):
            return penalty, np.zeros_like(x)
        grad = np.zeros_like(x)
        for i in range(x.size):
            up, dn = x.copy(), x.copy()
            up[i] = min(x[i] + FD_STEP, hi[i])
            dn[i] = max(x[i] - FD_STEP, lo[i])
            fu, fd = objective(up), objective(dn)
            if not (np.isfinite(fu) and np.isfinite(fd)):
                fu = fu if np.isfinite(fu) else f0
                fd = fd if np.isfinite(fd) else f0
            grad[i] = -(fu - fd) / (up[i] - dn[i])
        return -f0, grad

    res = optimize.minimize(fun_and_grad, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": budget - 1, "maxfun": 20 * budget})
    converged = bool(res.success) and res.nit < budget - 1
    return FitResult(hp_at(best["x"]), float(best["f"]), f_init, converged, int(res.nit),
                     n_evals, str(res.message))


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    fold: int
    n_train: int
    test_index: list[int]
    abs_l2: float
    rel_l2: float
    fit: FitResult

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "n_train": self.n_train,
            "n_test": len(self.test_index),
            "test_index": self.test_index,
            "abs_l2": self.abs_l2,
            "rel_l2": self.rel_l2,
            "log_likelihood": self.fit.log_likelihood,
            "converged": self.fit.converged,
            "n_iterations": self.fit.n_iterations,
            "hyperparams": self.fit.hyperparams.to_dict(),
        }


@dataclass
class CvResult:
    folds: list[FoldResult]
    predictions: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        a = np.array([f.abs_l2 for f in self.folds])
        r = np.array([f.rel_l2 for f in self.folds])
        return {"k_folds": len(self.folds),
                "abs_l2_mean": float(a.mean()), "abs_l2_std": float(a.std()),
                "rel_l2_mean": float(r.mean()), "rel_l2_std": float(r.std())}


def fold_assignment(n: int, k_folds: int, seed: int) -> list[np.ndarray]:
    """Shuffled near-equal folds, reproducible per seed."""
    if not 2 <= k_folds <= n:
        raise ValueError(f"need 2 <= k_folds <= n, got k_folds={k_folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k_folds)]


def cross_validate(ds: FunctionDataset, hp_init: GpHyperparams, k_folds: int = 5, seed: int = 0,
                   budget: int = 50, fixed: Sequence[str] = ()) -> CvResult:
    """k-fold cross-validation: fit on k-1 folds, predict the held-out functions.

    Per fold the mean absolute and relative L2 errors over held-out functions
    are recorded; :meth:`CvResult.aggregate` gives their mean and (population)
    standard deviation across folds.
    """
    model = GramModel(ds)
    folds = fold_assignment(ds.n, k_folds, seed)
    m = ds.grid.n_points
    out = []
    predictions = {}
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(ds.n), test)
        fit = fit_hyperparams(ds, hp_init, budget, fixed, model, train)
        order = np.concatenate([train, test])
        Kfull = model.kernel(fit.hyperparams.config, order)
        post = _posterior(Kfull, ds.targets[train].ravel(), fit.hyperparams.noise_variance,
                          train.size, m)
        errs = np.array([l2_error(post.mean[t], ds.targets[i], ds.grid)
                         for t, i in enumerate(test)])
        for t, i in enumerate(test):
            predictions[int(i)] = (post.mean[t], post.stddev[t])
        fr = FoldResult(k, int(train.size), [int(i) for i in test], float(errs[:, 0].mean()),
                        float(errs[:, 1].mean()), fit)
        out.append(fr)
        logger.info("fold %d: rel L2 %.4g, abs L2 %.4g", k, fr.rel_l2, fr.abs_l2)
    return CvResult(out, predictions)


# --------------------------------------------------------------------------
# persistence


def save_model(path, hp: GpHyperparams, ds: FunctionDataset | None = None) -> None:
    data = {"hyperparams": hp.to_dict(),
            "dataset_sha256": None if ds is None else ds.sha256()}
    Path(path).write_text(json.dumps(data, indent=2))


def load_model(path, ds: FunctionDataset | None = None) -> GpHyperparams:
    """Read hyperparameters; if ``ds`` is given its hash must match the stored one."""
    data = json.loads(Path(path).read_text())
    stored = data.get("dataset_sha256")
    if ds is not None and stored is not None and stored != ds.sha256():
        raise ValueError("model was fitted on a different dataset (hash mismatch)")
    return GpHyperparams.from_dict(data["hyperparams"])


def write_predictions(path, ds: FunctionDataset, predictions: dict) -> None:
    """CSV with columns ``id, x..., mean, stddev``; ``x`` in the source coordinates."""
    points = ds.source_points()
    dim = points.shape[1]
    xcols = ["x"] if dim == 1 else [f"x{j}" for j in range(dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + xcols + ["mean", "stddev"])
        for i in sorted(predictions):
            mean, sd = predictions[i]
            for p in range(points.shape[0]):
                writer.writerow([ds.ids[i]] + [repr(float(v)) for v in points[p]]
                                + [repr(float(mean[p])), repr(float(sd[p]))])
