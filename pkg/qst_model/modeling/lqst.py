"""Unrolled SVT network: forward pass, NMSE loss and hand-written reverse-mode gradients.

Each hidden layer ``t = 1..T-1`` performs one dual update

    y_t = y_{t-1} + delta_t * (b - A_t(shrink(A_t*(y_{t-1}), tau_t)))

with its own learnable measurement weights ``W_t`` (row i of ``W_t`` is the flattened
matrix of the i-th measurement of ``A_t``). The network input is ``y_0 = delta_0 * b``
and the last layer outputs ``X_temp = shrink(A_T*(y_{T-1}), tau_T)``. The output layer
projects ``X_temp`` onto density matrices: Hermitian part, ``mu * diag(1..d)`` shift,
eigenvalue clamp at zero and epsilon-regularized trace normalization.

Complex gradients use the realified convention ``dL/dRe + 1j * dL/dIm``.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

from joblib import Parallel, delayed
import numpy as np

from qst_model.config import INIT_STEP, INIT_THRESHOLD
from qst_model.errors import ArgumentError, DegeneracyError, DimensionError, NumericOverflowError
from qst_model.numlin import ROUNDING_CUTOFF, CMatrix, dagger, eigh, hermitize, svd
from qst_model.quantum import DensityMatrix, MeasurementEnsemble

EIGEN_GAP_TOL = 1e-12

Sample = tuple[CMatrix, np.ndarray]


@dataclass(frozen=True)
class NetworkParams:
    """Learnable weights of a depth-T network plus the fixed output-layer constants.

    ``step_sizes[0]`` is delta_0 (input scaling) and ``step_sizes[t]`` the step of hidden
    layer t; ``thresholds[t - 1]`` is tau_t of layer t.
    """

    weights: np.ndarray
    step_sizes: np.ndarray
    thresholds: np.ndarray
    mu: float = 0.0
    epsilon: float = 1e-8

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        if w.ndim != 3 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"weights must have shape (T, m, d*d), got {w.shape}")
        d = int(round(np.sqrt(w.shape[2])))
        if d < 1 or d * d != w.shape[2]:
            raise DimensionError(f"weight rows of length {w.shape[2]} are not square matrices")
        steps = np.asarray(self.step_sizes, dtype=np.float64)
        taus = np.asarray(self.thresholds, dtype=np.float64)
        if steps.shape != (w.shape[0],) or taus.shape != (w.shape[0],):
            raise DimensionError(
                f"depth {w.shape[0]} needs {w.shape[0]} step sizes and thresholds, "
                f"got {steps.shape} and {taus.shape}"
            )
        for name, arr in (("weights", w), ("step sizes", steps), ("thresholds", taus)):
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"network {name} must be finite")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ArgumentError(f"mu must be non-negative, got {self.mu}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "step_sizes", steps)
        object.__setattr__(self, "thresholds", taus)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def depth(self) -> int:
        return self.weights.shape[0]

    @property
    def meas_count(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.weights.shape[2])))

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "weights": self.weights,
            "step_sizes": self.step_sizes,
            "thresholds": self.thresholds,
        }

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "NetworkParams":
        return replace(self, **arrays)


@dataclass
class Gradients:
    weights: np.ndarray
    step_sizes: np.ndarray
    thresholds: np.ndarray

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "Gradients":
        return cls(
            np.zeros_like(params.weights),
            np.zeros_like(params.step_sizes),
            np.zeros_like(params.thresholds),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "weights": self.weights,
            "step_sizes": self.step_sizes,
            "thresholds": self.thresholds,
        }

    def accumulate(self, other: "Gradients") -> None:
        self.weights += other.weights
        self.step_sizes += other.step_sizes
        self.thresholds += other.thresholds

    def scale(self, factor: float) -> None:
        self.weights *= factor
        self.step_sizes *= factor
        self.thresholds *= factor


@dataclass
class ShrinkCache:
    """Input and SVD factors of one shrinkage layer."""

    y_in: np.ndarray
    left: CMatrix
    singular_values: np.ndarray
    right: CMatrix
    tau: float
    x: CMatrix
    residual: np.ndarray | None = None


@dataclass
class ForwardTrace:
    b: np.ndarray
    ys: list[np.ndarray]
    layers: list[ShrinkCache]
    x_temp: CMatrix
    x_temp1: CMatrix
    x_temp2: CMatrix
    eigenvalues: np.ndarray
    eigenvectors: CMatrix
    clamped: np.ndarray
    normalizer: float
    normalized: np.ndarray
    x_out: CMatrix = field(repr=False)


def init_params(
    ensemble: MeasurementEnsemble,
    depth: int,
    mu: float = 0.0,
    epsilon: float = 1e-8,
    step: float = INIT_STEP,
    threshold: float = INIT_THRESHOLD,
) -> NetworkParams:
    """Every layer starts from the ensemble's measurement matrices; step sizes start at
    ``step`` and thresholds at ``threshold`` (both 0.01 by default)."""
    if depth < 1:
        raise ArgumentError(f"network depth must be >= 1, got {depth}")
    if not step > 0 or not threshold >= 0:
        raise ArgumentError(
            f"initial step must be positive and threshold non-negative, got {step}, {threshold}"
        )
    rows = ensemble.weights()
    return NetworkParams(
        weights=np.repeat(rows[None, :, :], depth, axis=0),
        step_sizes=np.full(depth, float(step)),
        thresholds=np.full(depth, float(threshold)),
        mu=mu,
        epsilon=epsilon,
    )


def tied_params(
    ensemble: MeasurementEnsemble, depth: int, tau: float, delta: float, **constants
) -> NetworkParams:
    """Parameters for which the network replays ``depth`` non-trivial SVT iterations."""
    params = init_params(ensemble, depth, **constants)
    return replace(
        params, step_sizes=np.full(depth, float(delta)), thresholds=np.full(depth, float(tau))
    )


def _map(w: np.ndarray, x: CMatrix) -> np.ndarray:
    return w @ x.T.reshape(-1)


def _adjoint(w: np.ndarray, y: np.ndarray, d: int) -> CMatrix:
    return (np.conj(w).T @ y).reshape(d, d).T


def _finite(value, layer: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericOverflowError(layer)


def _shrink_layer(w: np.ndarray, y: np.ndarray, tau_raw: float, layer: str) -> ShrinkCache:
    d = int(round(np.sqrt(w.shape[1])))
    z = _adjoint(w, y, d)
    _finite(z, layer)
    tau = max(float(tau_raw), 0.0)
    u, s, v = svd(z)
    x = (u * np.maximum(s - tau, 0.0)) @ dagger(v)
    return ShrinkCache(y, u, s, v, tau, x)


def trace_forward(params: NetworkParams, b) -> ForwardTrace:
    """Forward pass keeping every intermediate needed by ``backward``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (params.meas_count,):
        raise DimensionError(
            f"measurement vector has shape {b.shape}, network expects ({params.meas_count},)"
        )
    if not np.all(np.isfinite(b)):
        raise ArgumentError("measurement vector has non-finite entries")
    d, depth = params.dim, params.depth
    with np.errstate(over="ignore", invalid="ignore"):
        y = params.step_sizes[0] * b.astype(np.complex128)
        _finite(y, "input layer")
        ys = [y]
        layers = []
        for t in range(1, depth):
            w = params.weights[t - 1]
            cache = _shrink_layer(w, y, params.thresholds[t - 1], f"hidden layer {t}")
            cache.residual = b - _map(w, cache.x)
            y = y + params.step_sizes[t] * cache.residual
            _finite(y, f"hidden layer {t}")
            layers.append(cache)
            ys.append(y)
        last = _shrink_layer(params.weights[-1], y, params.thresholds[-1], f"hidden layer {depth}")
        layers.append(last)

        x_temp = last.x
        x_temp1 = hermitize(x_temp)
        x_temp2 = x_temp1 + params.mu * np.diag(np.arange(1, d + 1, dtype=np.float64))
        values, vectors = eigh(x_temp2)
        clamped = np.maximum(values, 0.0)
        normalizer = float(np.sum(clamped + params.epsilon))
        normalized = (clamped + params.epsilon) / normalizer
        _finite(normalized, "output layer")
        x_out = (vectors * normalized) @ dagger(vectors)
    return ForwardTrace(
        b, ys, layers, x_temp, x_temp1, x_temp2, values, vectors, clamped, normalizer,
        normalized, x_out,
    )


def forward(params: NetworkParams, b) -> tuple[DensityMatrix, ForwardTrace]:
    trace = trace_forward(params, b)
    return DensityMatrix(trace.x_out), trace


def _unpack(batch: Sequence[Sample]) -> list[Sample]:
    batch = list(batch)
    if not batch:
        raise ArgumentError("batch must not be empty")
    return batch


def nmse_loss(params: NetworkParams, batch: Sequence[Sample]) -> float:
    """``sum_i ||X_i - X_out(b_i)||_F^2 / (M d^2)``."""
    batch = _unpack(batch)
    total = 0.0
    for target, b in batch:
        x_out = trace_forward(params, b).x_out
        total += float(np.sum(np.abs(x_out - np.asarray(target)) ** 2))
    return total / (len(batch) * params.dim**2)


def _eigen_backward(trace: ForwardTrace, g_out: CMatrix, mu: float) -> CMatrix:
    """Gradient with respect to the Hermitian input of the output-layer projection."""
    lam, u, s = trace.eigenvalues, trace.eigenvectors, trace.normalizer
    # eigenvalues at rounding level come from exactly-zero singular values of X_temp
    cutoff = ROUNDING_CUTOFF * max(1.0, float(np.max(np.abs(lam))))
    positive = lam > cutoff
    both_pos = positive[:, None] & positive[None, :]
    mixed = positive[:, None] ^ positive[None, :]
    gaps = lam[:, None] - lam[None, :]
    off_diagonal = ~np.eye(len(lam), dtype=bool)
    if mu == 0.0 and np.any(both_pos & off_diagonal & (np.abs(gaps) < EIGEN_GAP_TOL)):
        raise DegeneracyError(
            "positive eigenvalues of the output layer coincide; use mu > 0 to separate them"
        )
    # divided differences of the eigenvalue map: 1/s between positive eigenvalues,
    # 0 between clamped ones
    kept = np.where(positive, lam, 0.0)
    clamp_diff = kept[:, None] - kept[None, :]
    safe_gaps = np.where(mixed, gaps, 1.0)
    phi = np.where(both_pos, 1.0 / s, np.where(mixed, clamp_diff / (s * safe_gaps), 0.0))

    p = dagger(u) @ g_out @ u
    g_norm = np.real(np.diag(p))
    g_clamped = (g_norm - np.dot(g_norm, trace.normalized)) / s
    inner = 0.5 * phi * (p + dagger(p))
    np.fill_diagonal(inner, np.where(positive, g_clamped, 0.0))
    return u @ inner @ dagger(u)


def _shrink_backward(cache: ShrinkCache, g_x: CMatrix) -> tuple[CMatrix, float]:
    """Gradients of ``U max(S - tau, 0) V^H`` with respect to its input and to ``tau``."""
    u, sig, v, tau = cache.left, cache.singular_values, cache.right, cache.tau
    f = np.maximum(sig - tau, 0.0)
    active = sig > tau
    gamma = dagger(u) @ g_x @ v

    si, sj = sig[:, None], sig[None, :]
    fi, fj = f[:, None], f[None, :]
    both = active[:, None] & active[None, :]
    mixed = active[:, None] ^ active[None, :]
    pair_sum = np.where(both, si + sj, 1.0)
    denom = np.where(mixed, sj**2 - si**2, 1.0)
    alpha = np.where(both, 1.0 - tau / pair_sum, np.where(mixed, (sj * fj - si * fi) / denom, 0.0))
    beta = np.where(both, tau / pair_sum, np.where(mixed, (si * fj - sj * fi) / denom, 0.0))
    h = alpha * gamma + beta * dagger(gamma)

    diag_gamma = np.diag(gamma)
    safe_sig = np.where(active, sig, 1.0)
    np.fill_diagonal(
        h, np.where(active, diag_gamma.real + 1j * (f / safe_sig) * diag_gamma.imag, 0.0)
    )
    g_tau = -float(np.sum(diag_gamma.real[active]))
    return u @ h @ dagger(v), g_tau


def _sample_gradients(params: NetworkParams, target, b) -> tuple[float, Gradients]:
    trace = trace_forward(params, b)
    d, depth = params.dim, params.depth
    scale = 1.0 / d**2
    diff = trace.x_out - np.asarray(target)
    loss = float(np.sum(np.abs(diff) ** 2)) * scale
    grads = Gradients.zeros_like(params)

    g_x2 = _eigen_backward(trace, 2.0 * scale * diff, params.mu)
    g_x = 0.5 * (g_x2 + dagger(g_x2))

    g_y = None
    for t in range(depth, 0, -1):
        cache = trace.layers[t - 1]
        w = params.weights[t - 1]
        if t < depth:
            grads.step_sizes[t] = float(np.real(np.vdot(cache.residual, g_y)))
            g_a = -params.step_sizes[t] * g_y
            grads.weights[t - 1] += np.outer(g_a, np.conj(cache.x.T.reshape(-1)))
            g_x = (np.conj(w).T @ g_a).reshape(d, d).T
        g_z_mat, g_tau = _shrink_backward(cache, g_x)
        grads.thresholds[t - 1] = g_tau if params.thresholds[t - 1] >= 0 else 0.0
        g_z = g_z_mat.T.reshape(-1)
        grads.weights[t - 1] += np.outer(cache.y_in, np.conj(g_z))
        g_y = w @ g_z if g_y is None else g_y + w @ g_z
    grads.step_sizes[0] = float(np.real(np.vdot(g_y, trace.b)))
    return loss, grads


def backward(
    params: NetworkParams, batch: Sequence[Sample], n_jobs: int = 1
) -> tuple[float, Gradients]:
    """NMSE loss of the batch and its exact gradient with respect to every learnable
    parameter. Per-sample gradients are summed in batch order."""
    batch = _unpack(batch)
    if n_jobs == 1:
        parts = [_sample_gradients(params, target, b) for target, b in batch]
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_sample_gradients)(params, target, b) for target, b in batch
        )
    total = Gradients.zeros_like(params)
    loss = 0.0
    for sample_loss, g in parts:
        loss += sample_loss
        total.accumulate(g)
    total.scale(1.0 / len(batch))
    for name, arr in total.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise NumericOverflowError(f"gradient of {name}")
    return loss / len(batch), total
