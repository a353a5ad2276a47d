"""
services/solver.py

ADMM training of a context-regularized, keyfilter-constrained correlation filter.

Objective over the cropped spatial filter w (M cells x D channels):

    E(w) = 1/2 ||y - sum_d x0^d * pad(w^d)||^2 + lambda/2 ||w||^2
         + 1/2 sum_p S_p^2 ||sum_d xp^d * pad(w^d)||^2 + gamma/2 ||w - w_key||^2

where * is circular correlation on the full N-cell search grid and pad()
places the filter in the centered M-cell window. ADMM splits it with the
frequency-domain auxiliary g_hat = sqrt(N) fft2(pad(w)) and multiplier zeta_hat:

    g-step : one D x D Hermitian system per frequency bin,
             (sum_p S_p^2 xp xp^H + mu I) g = x0 conj(y) - zeta + mu w_hat
             solved by iterated Sherman-Morrison updates starting from I / mu
    w-step : w = (mu + (lambda + gamma) / N)^-1 (mu g + zeta + gamma / N w_key)
    update : zeta += mu (g_hat - w_hat);  mu = min(beta mu, mu_max)

fft2 is the unitary transform of services.dsp; the sqrt(N) factors above are
the only normalization constants in play.

Dense diagnostics (per-bin dense solve, the objective assembled as an
explicit quadratic, its exact minimizer) live at the bottom of this module.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from services.dsp import circular_correlate, fft2, ifft2

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8


class SolverError(ArithmeticError):
    """Invalid solver input or a non-finite iterate."""


@dataclass(frozen=True)
class SolverParams:
    lambda_: float = 1e-3
    gamma: float = 10.0
    mu0: float = 1.0
    beta: float = 10.0
    mu_max: float = 1000.0
    admm_iters: int = 2
    dense_bins: bool = False

    def __post_init__(self):
        for name in ("lambda_", "gamma", "mu0", "beta", "mu_max"):
            if getattr(self, name) < 0:
                raise SolverError(f"solver parameter {name} must be nonnegative, got {getattr(self, name)}")
        if self.mu0 <= 0:
            raise SolverError(f"mu0 must be positive, got {self.mu0}")
        if self.admm_iters < 1:
            raise SolverError(f"admm_iters must be at least 1, got {self.admm_iters}")


@dataclass(frozen=True)
class CropOperator:
    """Centered M-cell window inside the N-cell grid, applied as a selection."""

    full: Tuple[int, int]
    cropped: Tuple[int, int]

    def __post_init__(self):
        if self.cropped[0] > self.full[0] or self.cropped[1] > self.full[1] or min(self.cropped) < 1:
            raise SolverError(f"crop window {self.cropped} does not fit grid {self.full}")

    @property
    def n_full(self) -> int:
        return self.full[0] * self.full[1]

    @property
    def origin(self) -> Tuple[int, int]:
        return (self.full[0] // 2 - self.cropped[0] // 2, self.full[1] // 2 - self.cropped[1] // 2)

    def _window(self):
        r0, c0 = self.origin
        return slice(r0, r0 + self.cropped[0]), slice(c0, c0 + self.cropped[1])

    def crop(self, u: np.ndarray) -> np.ndarray:
        rows, cols = self._window()
        return u[rows, cols]

    def pad(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.full + v.shape[2:], dtype=v.dtype)
        rows, cols = self._window()
        out[rows, cols] = v
        return out


@dataclass
class FilterState:
    w: np.ndarray
    g_hat: np.ndarray
    zeta_hat: np.ndarray
    mu: float
    residuals: List[float] = field(default_factory=list)


def filter_spectrum(w: np.ndarray, crop: CropOperator) -> np.ndarray:
    """sqrt(N) * fft2(pad(w)): the frequency-domain image of a cropped filter."""
    return np.sqrt(crop.n_full) * fft2(crop.pad(w))


def spatial_from_spectrum(spectrum: np.ndarray, crop: CropOperator) -> np.ndarray:
    """Adjoint of ``filter_spectrum`` divided by N: crop(ifft2(spectrum)) / sqrt(N). Complex."""
    return crop.crop(ifft2(spectrum)) / np.sqrt(crop.n_full)


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverError(f"non-finite values in {name}")


def _real_part(name: str, spatial: np.ndarray) -> np.ndarray:
    """Real part of a spatial field that must come from a conjugate-symmetric spectrum."""
    scale = max(float(np.abs(spatial).max(initial=0.0)), 1.0)
    residue = float(np.abs(spatial.imag).max(initial=0.0))
    if residue > SYMMETRY_TOL * scale:
        raise SolverError(f"{name} spectrum is not conjugate-symmetric (imaginary residue {residue:.3g})")
    return spatial.real


def _sherman_morrison_solve(terms: np.ndarray, rhs: np.ndarray, mu: float) -> np.ndarray:
    """
    Solve (mu I + sum_k u_k u_k^H) g = rhs independently in every bin.

    ``terms`` has shape (K, ..., D) holding the already-weighted vectors u_k,
    ``rhs`` has shape (..., D). Each rank-1 term is folded in with the
    Sherman-Morrison identity applied to vectors only, so no D x D inverse is
    ever formed.
    """
    z_rhs = rhs / mu
    z_terms = terms / mu
    for k in range(terms.shape[0]):
        u = terms[k]
        a_u = z_terms[k]
        denom = 1.0 + np.real(np.sum(np.conj(u) * a_u, axis=-1, keepdims=True))
        z_rhs = z_rhs - a_u * (np.sum(np.conj(u) * z_rhs, axis=-1, keepdims=True) / denom)
        for j in range(k + 1, terms.shape[0]):
            z_terms[j] = z_terms[j] - a_u * (np.sum(np.conj(u) * z_terms[j], axis=-1, keepdims=True) / denom)
    return z_rhs


def _dense_solve(terms: np.ndarray, rhs: np.ndarray, mu: float) -> np.ndarray:
    d = rhs.shape[-1]
    system = mu * np.eye(d, dtype=complex) + np.einsum("k...i,k...j->...ij", terms, np.conj(terms))
    return np.linalg.solve(system, rhs[..., None])[..., 0]


def _weighted_terms(xf0: np.ndarray, context_xf: Sequence[Tuple[float, np.ndarray]]) -> np.ndarray:
    return np.stack([xf0] + [s * xf for s, xf in context_xf if s != 0])


def solve_g(
    xf0: np.ndarray,
    context_xf: Sequence[Tuple[float, np.ndarray]],
    yf: np.ndarray,
    zeta_hat: np.ndarray,
    w_hat: np.ndarray,
    mu: float,
    dense: bool = False,
) -> np.ndarray:
    """All per-bin g-subproblems at once; arrays are (..., D) spectra, ``yf`` is (...)."""
    if mu <= 0:
        raise SolverError(f"penalty mu must be positive, got {mu}")
    rhs = xf0 * np.conj(yf)[..., None] - zeta_hat + mu * w_hat
    terms = _weighted_terms(xf0, context_xf)
    if dense:
        return _dense_solve(terms, rhs, mu)
    return _sherman_morrison_solve(terms, rhs, mu)


def solve_g_bin(
    x0: np.ndarray,
    contexts: Sequence[Tuple[float, np.ndarray]],
    y: complex,
    zeta: np.ndarray,
    w_hat: np.ndarray,
    mu: float,
    dense: bool = False,
) -> np.ndarray:
    """Single frequency bin: D-vectors in, D-vector out."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=complex))
    contexts = [(s, np.atleast_1d(np.asarray(x, dtype=complex))) for s, x in contexts]
    zeta = np.broadcast_to(np.asarray(zeta, dtype=complex), x0.shape)
    w_hat = np.broadcast_to(np.asarray(w_hat, dtype=complex), x0.shape)
    return solve_g(x0, contexts, np.asarray(y, dtype=complex), zeta, w_hat, mu, dense=dense)


def solve_w(
    g_hat: np.ndarray,
    zeta_hat: np.ndarray,
    w_tilde: Optional[np.ndarray],
    params: SolverParams,
    crop: CropOperator,
    mu: float,
) -> np.ndarray:
    """
    Closed-form spatial filter. ``w_tilde`` = None disables the keyfilter
    term regardless of ``params.gamma``.
    """
    _check_finite("w-subproblem input", g_hat, zeta_hat)
    n = crop.n_full
    gamma = params.gamma if w_tilde is not None else 0.0
    g = _real_part("filter", spatial_from_spectrum(g_hat, crop))
    zeta = _real_part("multiplier", spatial_from_spectrum(zeta_hat, crop))
    numerator = mu * g + zeta
    if w_tilde is not None:
        if w_tilde.shape != g.shape:
            raise SolverError(f"keyfilter shape {w_tilde.shape} does not match filter shape {g.shape}")
        _check_finite("keyfilter", w_tilde)
        numerator = numerator + (gamma / n) * w_tilde
    return numerator / (mu + (params.lambda_ + gamma) / n)


def update_multiplier(zeta_hat: np.ndarray, g_hat: np.ndarray, w_hat: np.ndarray, mu: float) -> np.ndarray:
    if not (zeta_hat.shape == g_hat.shape == w_hat.shape):
        raise SolverError(
            f"multiplier update shape mismatch: zeta {zeta_hat.shape}, g {g_hat.shape}, w {w_hat.shape}"
        )
    return zeta_hat + mu * (g_hat - w_hat)


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=float)


def context_samples(context) -> List[Tuple[float, np.ndarray]]:
    """(S_p, features) pairs of the active patches of a ContextPatchSet (or a plain list of pairs)."""
    if context is None:
        return []
    patches = getattr(context, "patches", None)
    if patches is None:
        return [(float(s), _as_array(x)) for s, x in context if s != 0]
    out = []
    for p in patches:
        if p.score != 0:
            if p.features is None:
                raise SolverError(f"context patch at {p.center} has a score but no features")
            out.append((float(p.score), _as_array(p.features)))
    return out


def train_filter(
    target_features,
    context,
    label,
    keyfilter,
    params: SolverParams,
    crop: CropOperator,
) -> FilterState:
    """
    Run ``params.admm_iters`` ADMM iterations from zero.

    Args:
        target_features: FeatureMap or (MH, MW, D) array on the full grid.
        context: ContextPatchSet, list of (S_p, features) pairs, or None.
        label: dsp.Label or (MH, MW) desired response.
        keyfilter: KeyfilterState, (mh, mw, D) array, or None (keyfilter term off).
        params: penalty schedule and regularization weights.
        crop: centered filter window inside the full grid.
    """
    x0 = _as_array(target_features)
    y = np.asarray(getattr(label, "y", label), dtype=float)
    if x0.shape[:2] != crop.full:
        raise SolverError(f"feature grid {x0.shape[:2]} does not match crop grid {crop.full}")
    if y.shape != crop.full:
        raise SolverError(f"label grid {y.shape} does not match crop grid {crop.full}")
    samples = context_samples(context)
    for s, xp in samples:
        if xp.shape != x0.shape:
            raise SolverError(f"context features {xp.shape} do not match target features {x0.shape}")
    w_tilde = getattr(keyfilter, "w", keyfilter)
    if w_tilde is not None:
        w_tilde = np.asarray(w_tilde, dtype=float)

    xf0 = fft2(x0)
    context_xf = [(s, fft2(xp)) for s, xp in samples]
    yf = fft2(y)
    _check_finite("training input", xf0, yf, *[xf for _, xf in context_xf])

    d = x0.shape[2]
    g_hat = np.zeros(crop.full + (d,), dtype=complex)
    zeta_hat = np.zeros_like(g_hat)
    w_hat = np.zeros_like(g_hat)
    w = np.zeros(crop.cropped + (d,))
    mu = params.mu0
    residuals = []
    it = 0
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            for it in range(params.admm_iters):
                g_hat = solve_g(xf0, context_xf, yf, zeta_hat, w_hat, mu, dense=params.dense_bins)
                w = solve_w(g_hat, zeta_hat, w_tilde, params, crop, mu)
                w_hat = filter_spectrum(w, crop)
                zeta_hat = update_multiplier(zeta_hat, g_hat, w_hat, mu)
                residuals.append(float(np.linalg.norm(g_hat - w_hat)))
                _check_finite(f"ADMM iterate {it + 1}", g_hat, w, zeta_hat)
                mu = min(params.beta * mu, params.mu_max)
    except FloatingPointError as e:
        raise SolverError(f"floating-point failure in ADMM iterate {it + 1}: {e}") from e
    logger.debug("ADMM %d iterations, %d context samples, residuals %s",
                 params.admm_iters, len(context_xf), residuals)
    return FilterState(w=w, g_hat=g_hat, zeta_hat=zeta_hat, mu=mu, residuals=residuals)


def filter_response(features, g_hat: np.ndarray) -> np.ndarray:
    """Spatial correlation response of a (full-grid) feature map with a filter spectrum."""
    xf = fft2(_as_array(features))
    return np.real(ifft2(np.sum(np.conj(g_hat) * xf, axis=2)))


# ---- dense diagnostics ----

def _responses(x: np.ndarray, w: np.ndarray, crop: CropOperator) -> np.ndarray:
    padded = crop.pad(w)
    return sum(circular_correlate(x[..., d], padded[..., d]) for d in range(x.shape[2]))


def evaluate_objective(
    w: np.ndarray,
    target_features,
    context,
    label,
    params: SolverParams,
    crop: CropOperator,
    w_tilde: Optional[np.ndarray] = None,
) -> float:
    """Direct spatial-domain value of the training objective (keyfilter term off when w_tilde is None)."""
    x0 = _as_array(target_features)
    y = np.asarray(getattr(label, "y", label), dtype=float)
    if w.shape != crop.cropped + (x0.shape[2],):
        raise SolverError(f"filter shape {w.shape} does not match crop {crop.cropped} x {x0.shape[2]}")
    energy = 0.5 * np.sum((y - _responses(x0, w, crop)) ** 2)
    energy += 0.5 * params.lambda_ * np.sum(w ** 2)
    for s, xp in context_samples(context):
        energy += 0.5 * s ** 2 * np.sum(_responses(xp, w, crop) ** 2)
    if w_tilde is not None:
        energy += 0.5 * params.gamma * np.sum((w - w_tilde) ** 2)
    return float(energy)


def _operator_matrix(x: np.ndarray, crop: CropOperator) -> np.ndarray:
    """Matrix of w -> vec(sum_d x^d * pad(w^d)), columns indexed like w.ravel()."""
    shape = crop.cropped + (x.shape[2],)
    cols = []
    for j in range(int(np.prod(shape))):
        e = np.zeros(shape)
        e.flat[j] = 1.0
        cols.append(_responses(x, e, crop).ravel())
    return np.stack(cols, axis=1)


def assemble_quadratic(
    target_features,
    context,
    label,
    params: SolverParams,
    crop: CropOperator,
    w_tilde: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    The objective as 1/2 w^T H w - b^T w + c over w.ravel().
    Only meant for tiny grids.
    """
    x0 = _as_array(target_features)
    y = np.asarray(getattr(label, "y", label), dtype=float).ravel()
    a0 = _operator_matrix(x0, crop)
    gamma = params.gamma if w_tilde is not None else 0.0
    h = a0.T @ a0 + (params.lambda_ + gamma) * np.eye(a0.shape[1])
    b = a0.T @ y
    c = 0.5 * float(y @ y)
    for s, xp in context_samples(context):
        ap = _operator_matrix(xp, crop)
        h += s ** 2 * ap.T @ ap
    if w_tilde is not None:
        b = b + gamma * w_tilde.ravel()
        c += 0.5 * gamma * float(np.sum(w_tilde ** 2))
    return h, b, c


def dense_minimizer(
    target_features,
    context,
    label,
    params: SolverParams,
    crop: CropOperator,
    w_tilde: Optional[np.ndarray] = None,
) -> np.ndarray:
    x0 = _as_array(target_features)
    h, b, _ = assemble_quadratic(target_features, context, label, params, crop, w_tilde)
    return np.linalg.solve(h, b).reshape(crop.cropped + (x0.shape[2],))
