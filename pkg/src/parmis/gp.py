"""Gaussian-process regression over policy-parameter space.

One zero-mean GP per objective. Targets are standardized inside :func:`fit`
and every public value (means, standard deviations, sampled functions) is
returned in the caller's original units. Kernel hyperparameters
(``signal_variance``) and ``noise_variance`` live in the standardized space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import InputError, NumericalError

ISO_DIM_THRESHOLD = 50
HYPER_BOUNDS = (1e-3, 1e3)
SIGNAL_VARIANCE_FLOOR = 1e-6

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel, either ARD (one lengthscale per input) or isotropic."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    variant: str = "ard"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.variant not in ("ard", "iso"):
            raise InputError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "iso" and ls.size != 1:
            raise InputError("isotropic kernel takes a single lengthscale")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise InputError("lengthscales must be positive and finite")
        if not self.signal_variance > 0:
            raise InputError("signal_variance must be positive")

    @classmethod
    def default(cls, dim: int, lengthscale: float = 1.0, signal_variance: float = 1.0):
        """Isotropic above ``ISO_DIM_THRESHOLD`` inputs, ARD otherwise."""
        if dim > ISO_DIM_THRESHOLD:
            return cls(np.array([lengthscale]), signal_variance, "iso")
        return cls(np.full(dim, lengthscale), signal_variance, "ard")

    def check_dim(self, dim: int) -> None:
        if self.variant == "ard" and self.lengthscales.size != dim:
            raise InputError(
                f"ARD kernel has {self.lengthscales.size} lengthscales, inputs have d={dim}"
            )

    def with_params(self, lengthscales, signal_variance) -> "KernelSpec":
        return KernelSpec(np.asarray(lengthscales, dtype=float), float(signal_variance), self.variant)

    def scaled_sqdist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = a / self.lengthscales
        b = b / self.lengthscales
        d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.maximum(d2, 0.0)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.signal_variance * np.exp(-0.5 * self.scaled_sqdist(a, b))


def _as_inputs(x, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr[None, :] if dim is not None and arr.size == dim else arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"inputs must be a list of vectors, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise InputError(f"input dimension {arr.shape[1]} does not match model dimension {dim}")
    return arr


def _is_single(x, dim: int) -> bool:
    return np.ndim(x) == 0 or (np.ndim(x) == 1 and np.size(x) == dim)


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(y.mean())
    std = float(y.std())
    if not std > 0 or y.size < 2:
        std = 1.0
    return (y - mean) / std, mean, std


def _cholesky_with_jitter(k: np.ndarray, noise: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``k + noise*I``, escalating jitter on failure."""
    n = k.shape[0]
    scale = float(np.trace(k)) / n if n else 1.0
    a = k + noise * np.eye(n)
    jitter = 0.0
    while True:
        try:
            return linalg.cholesky(a + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            jitter = _JITTER_START * scale if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX * scale * (1 + 1e-9):
                raise NumericalError(
                    "kernel matrix is not positive definite even with maximum jitter"
                ) from None


@dataclass(frozen=True)
class GaussianProcess:
    """A fitted GP. Immutable; ``predict`` and sampling are pure."""

    kernel: KernelSpec
    noise_variance: float
    inputs: np.ndarray
    targets: np.ndarray
    y_mean: float
    y_std: float
    cached_factorization: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def prior_variance(self) -> float:
        """Prior predictive variance in standardized units."""
        return self.kernel.signal_variance + self.noise_variance

    def _standardized_predict(self, xq: np.ndarray, latent: bool = False):
        kq = self.kernel(xq, self.inputs)
        mean = kq @ self.alpha
        v = linalg.solve_triangular(self.cached_factorization, kq.T, lower=True)
        prior = self.kernel.signal_variance if latent else self.prior_variance
        var = prior - (v * v).sum(0)
        floor = self.jitter + 1e-10 * self.kernel.signal_variance
        var = np.where(var < floor, 0.0, var)
        return mean, var

    def predict(self, query, *, latent: bool = False):
        """Posterior mean and standard deviation at ``query``.

        A single vector gives a pair of floats; a (m, d) batch gives two arrays.
        The standard deviation includes observation noise unless ``latent``,
        in which case it describes the noise-free function value.
        """
        single = _is_single(query, self.dim)
        xq = _as_inputs(query, self.dim)
        mean, var = self._standardized_predict(xq, latent)
        mean = self.y_mean + self.y_std * mean
        std = self.y_std * np.sqrt(var)
        if single:
            return float(mean[0]), float(std[0])
        return mean, std

    def log_marginal_likelihood(self) -> float:
        y = (self.targets - self.y_mean) / self.y_std
        n = y.size
        return float(
            -0.5 * y @ self.alpha
            - np.log(np.diag(self.cached_factorization)).sum()
            - 0.5 * n * np.log(2 * np.pi)
        )


def fit(inputs, targets, kernel: KernelSpec, noise: float = 0.0) -> GaussianProcess:
    """Condition a zero-mean GP on ``(inputs, targets)``.

    Raises:
        InputError: empty data, mismatched lengths or dimensions, negative noise.
        NumericalError: the kernel matrix stays indefinite after jitter escalation.
    """
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0:
        raise InputError("fit needs at least one training point")
    x = _as_inputs(inputs)
    if x.shape[0] != y.size:
        raise InputError(f"{x.shape[0]} inputs but {y.size} targets")
    if noise < 0:
        raise InputError("noise variance must be non-negative")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise InputError("inputs and targets must be finite")
    kernel.check_dim(x.shape[1])

    ys, mean, std = _standardize(y)
    chol, jitter = _cholesky_with_jitter(kernel(x, x), noise)
    alpha = linalg.cho_solve((chol, True), ys)
    return GaussianProcess(kernel, float(noise), x, y, mean, std, chol, alpha, jitter)


def predict(model: GaussianProcess, query):
    """Functional alias for :meth:`GaussianProcess.predict`."""
    return model.predict(query)


def log_marginal_likelihood(inputs, targets, kernel: KernelSpec, noise: float = 0.0) -> float:
    return fit(inputs, targets, kernel, noise).log_marginal_likelihood()


def fit_hyperparameters(
    inputs,
    targets,
    init: KernelSpec,
    noise: float = 1e-6,
    n_restarts: int = 3,
    seed: int = 0,
) -> KernelSpec:
    """Maximize the log marginal likelihood over log-lengthscales and log-signal-variance.

    Nelder-Mead from ``init`` plus ``n_restarts`` random starts, all inside
    ``HYPER_BOUNDS``. The result never has a lower likelihood than ``init``.
    """
    x = _as_inputs(inputs)
    y = np.asarray(targets, dtype=float).ravel()
    if y.size < 2:
        raise InputError("fit_hyperparameters needs at least two points")
    if x.shape[0] != y.size:
        raise InputError(f"{x.shape[0]} inputs but {y.size} targets")
    init.check_dim(x.shape[1])
    if not y.std() > 0:
        return init.with_params(init.lengthscales, max(init.signal_variance, SIGNAL_VARIANCE_FLOOR))

    ys, _, _ = _standardize(y)
    n_ls = init.lengthscales.size
    if init.variant == "iso":
        sqd = init.with_params([1.0], 1.0).scaled_sqdist(x, x)

        def gram(ls, sv):
            return sv * np.exp(-0.5 * sqd / ls[0] ** 2)
    else:
        diffs2 = (x[:, None, :] - x[None, :, :]) ** 2

        def gram(ls, sv):
            return sv * np.exp(-0.5 * (diffs2 / ls**2).sum(-1))

    eye = np.eye(y.size)
    lo, hi = np.log(HYPER_BOUNDS[0]), np.log(HYPER_BOUNDS[1])

    def neg_lml(log_params):
        log_params = np.clip(log_params, lo, hi)
        ls, sv = np.exp(log_params[:n_ls]), np.exp(log_params[n_ls])
        try:
            chol = linalg.cholesky(gram(ls, sv) + noise * eye, lower=True)
        except linalg.LinAlgError:
            return np.inf
        a = linalg.cho_solve((chol, True), ys)
        return 0.5 * ys @ a + np.log(np.diag(chol)).sum() + 0.5 * y.size * np.log(2 * np.pi)

    start = np.clip(
        np.log(np.concatenate([init.lengthscales, [init.signal_variance]])), lo, hi
    )
    best_x, best_f = start, neg_lml(start)
    rng = np.random.default_rng(seed)
    starts = [start] + [rng.uniform(lo, hi, size=start.size) for _ in range(n_restarts)]
    for s in starts:
        res = optimize.minimize(
            neg_lml,
            s,
            method="Nelder-Mead",
            bounds=[(lo, hi)] * start.size,
            options={"maxiter": 200 * start.size, "xatol": 1e-4, "fatol": 1e-8},
        )
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), float(res.fun)
    return init.with_params(np.exp(best_x[:n_ls]), np.exp(best_x[n_ls]))


@dataclass(frozen=True)
class RffSample:
    """One posterior function draw in random-Fourier-feature form.

    ``f(x) = y_mean + y_std * amplitude * cos(x @ frequencies.T + phases) @ weights``
    with ``amplitude = sqrt(2 * signal_variance / num_features)``.
    """

    frequencies: np.ndarray
    phases: np.ndarray
    weights: np.ndarray
    amplitude: float
    y_mean: float = 0.0
    y_std: float = 1.0
    num_features: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_features", int(self.phases.size))

    def features(self, x) -> np.ndarray:
        x = _as_inputs(x, self.frequencies.shape[1])
        return self.amplitude * np.cos(x @ self.frequencies.T + self.phases)

    def __call__(self, x):
        single = _is_single(x, self.frequencies.shape[1])
        out = self.y_mean + self.y_std * (self.features(x) @ self.weights)
        return float(out[0]) if single else out


def sample_posterior_function(model: GaussianProcess, num_features: int, seed: int) -> RffSample:
    """Draw a function from the GP posterior via random Fourier features.

    Prior weights are conditioned on the data by a pathwise update in the dual
    (n x n) form, which is the exact posterior of the Bayesian linear model in
    feature space and stays cheap while n < num_features.
    """
    if num_features < 1:
        raise InputError("num_features must be at least 1")
    rng = np.random.default_rng(seed)
    d = model.dim
    ls = np.broadcast_to(model.kernel.lengthscales, (d,))
    freqs = rng.standard_normal((num_features, d)) / ls
    phases = rng.uniform(0.0, 2.0 * np.pi, num_features)
    amplitude = float(np.sqrt(2.0 * model.kernel.signal_variance / num_features))
    w0 = rng.standard_normal(num_features)
    eps = np.sqrt(model.noise_variance) * rng.standard_normal(model.inputs.shape[0])

    phi = amplitude * np.cos(model.inputs @ freqs.T + phases)
    ys = (model.targets - model.y_mean) / model.y_std
    gram = phi @ phi.T
    chol, _ = _cholesky_with_jitter(gram, model.noise_variance + model.jitter)
    resid = ys - phi @ w0 - eps
    weights = w0 + phi.T @ linalg.cho_solve((chol, True), resid)
    return RffSample(freqs, phases, weights, amplitude, model.y_mean, model.y_std)
