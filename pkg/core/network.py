"""
Network Core - one-hidden-layer readout, loss residual and SGD gradient
========================================================================
F(z, mu) = int c sigma(z^T w) mu(d(c, w)) for a weighted atom cloud mu,
g((z, y), mu) = y - F(z, mu) and the per-particle gradient
A(x, theta; mu) = (g sigma(z^T w), g c sigma'(z^T w) z).

Sums over particles use canonical (sorted) order, which makes every readout
independent of the storage order of the particles.
"""
from typing import Tuple, Union
import numpy as np
from scipy.special import expit

from config import Config
from models.domain import Activation, DataAtomSet, ParamMeasure

ArrayLike = Union[float, np.ndarray]


def make_activation(kind: str = "tanh") -> Activation:
    """Activation with its pinned (CONT) constants; unbounded kinds are rejected"""
    kind = kind.lower()
    if kind in Config.REJECTED_ACTIVATIONS:
        raise ValueError(Config.REJECTED_ACTIVATIONS[kind])
    if kind not in Config.ACTIVATION_CONSTANTS:
        raise ValueError(f"(CONT) unknown activation '{kind}'")
    consts = Config.ACTIVATION_CONSTANTS[kind]
    return Activation(kind=kind, c_sigma=consts["c_sigma"], l_sigma=consts["l_sigma"])


def activation_eval(act: Activation, u: ArrayLike, derivative: bool = False) -> ArrayLike:
    """sigma(u) or sigma'(u)"""
    if act.kind == "tanh":
        s = np.tanh(u)
        return 1.0 - s * s if derivative else s
    if act.kind == "logistic":
        s = expit(u)
        return s * (1.0 - s) if derivative else s
    raise ValueError(f"unsupported activation '{act.kind}'")


def canonical_sum(terms: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along axis in sorted order (storage-order free)"""
    return np.sum(np.sort(terms, axis=axis), axis=axis)


def _split(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return points[..., 0], points[..., 1:]


def readout_F(z: np.ndarray, mu: ParamMeasure, act: Activation) -> ArrayLike:
    """
    Network output at input z (shape (d',)) or at a batch of inputs (shape (K, d'))
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != mu.dim - 1:
        raise ValueError(f"readout_F: input of dimension {z.shape[-1]} for parameters of dimension {mu.dim}")
    c, w = _split(mu.points)
    pre = z @ w.T  # (N,) or (K, N)
    terms = mu.weights * c * activation_eval(act, pre)
    out = canonical_sum(terms, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def loss_residual_g(x: Tuple[np.ndarray, float], mu: ParamMeasure, act: Activation) -> float:
    """g((z, y), mu) = y - F(z, mu)"""
    z, y = x
    return float(y) - readout_F(z, mu, act)


def gradient_A(x: Tuple[np.ndarray, float], theta: np.ndarray, mu: ParamMeasure, act: Activation) -> np.ndarray:
    """SGD direction of one particle theta = (c, w) against the measure mu"""
    z, _ = x
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mu.dim,) or z.shape != (mu.dim - 1,):
        raise ValueError(f"gradient_A: theta {theta.shape}, z {z.shape} do not match dimension {mu.dim}")
    g = loss_residual_g((z, x[1]), mu, act)
    pre = float(z @ theta[1:])
    s = activation_eval(act, pre)
    ds = activation_eval(act, pre, derivative=True)
    return np.concatenate(([g * s], g * theta[0] * ds * z))


def batch_drift(points: np.ndarray, weights: np.ndarray, z: np.ndarray, y: np.ndarray,
                act: Activation) -> np.ndarray:
    """
    A(x_r, theta_{r,i}; mu_r) for R independent particle systems at once.

    points (R, N, d), weights (N,), z (R, d'), y (R,) -> (R, N, d).
    Every particle of a system sees the same frozen measure mu_r.
    """
    c, w = _split(points)
    pre = np.sum(w * z[:, None, :], axis=2)
    s = activation_eval(act, pre)
    ds = activation_eval(act, pre, derivative=True)
    g = y - canonical_sum(weights * c * s, axis=-1)
    drift_c = g[:, None] * s
    drift_w = (g[:, None] * c * ds)[:, :, None] * z[:, None, :]
    return np.concatenate((drift_c[:, :, None], drift_w), axis=2)


def atom_drift(points: np.ndarray, frozen: np.ndarray, frozen_weights: np.ndarray,
               pi: DataAtomSet, row: np.ndarray, act: Activation) -> np.ndarray:
    """
    Data-averaged drift sum_x row(x) A(x, theta_j; eta) for every point theta_j,
    with eta the frozen cloud (frozen, frozen_weights). Returns (M, d).
    """
    fc, fw = _split(frozen)
    frozen_terms = frozen_weights * fc * activation_eval(act, pi.z @ fw.T)  # (K, M')
    g = pi.y - canonical_sum(frozen_terms, axis=-1)  # (K,)
    c, w = _split(points)
    pre = w @ pi.z.T  # (M, K)
    s = activation_eval(act, pre)
    ds = activation_eval(act, pre, derivative=True)
    rg = row * g  # (K,)
    drift_c = s @ rg
    drift_w = c[:, None] * ((ds * rg) @ pi.z)
    return np.concatenate((drift_c[:, None], drift_w), axis=1)


def single_sample_loss(x: Tuple[np.ndarray, float], points: np.ndarray, act: Activation) -> float:
    """1/2 (y - F(z, uniform measure on points))^2"""
    mu = ParamMeasure(points=points, weights=np.full(points.shape[0], 1.0 / points.shape[0]))
    return 0.5 * loss_residual_g(x, mu, act) ** 2
