"""
Test-functional catalog: bounded continuous functionals of finitely many
time marginals of a trajectory, and their expectations under trajectory
measures.
"""
import math
from typing import Sequence, Optional, Tuple, List
import numpy as np

from core.network import canonical_sum
from models.domain import TestFunctional, TrajectoryMeasure, grid_position, marginal_on_grid, GRID_TIME_TOL

FUNCTIONAL_KINDS = ("constant", "tanh_marginal", "tanh_window")


class UnknownFunctionalError(KeyError):
    """Functional kind outside the registered catalog"""


def make_functional(kind: str, a: float = 1.0, v: Sequence[float] = (1.0,), b: float = 0.0,
                    t: float = 0.0, window: Optional[Tuple[float, float]] = None, name: str = "") -> TestFunctional:
    if kind not in FUNCTIONAL_KINDS:
        raise UnknownFunctionalError(kind)
    if kind == "tanh_window":
        if window is None or window[0] > window[1]:
            raise ValueError("tanh_window needs a window (t0, t1) with t0 <= t1")
        window = (float(window[0]), float(window[1]))
    return TestFunctional(kind=kind, a=float(a), v=tuple(float(x) for x in v), b=float(b),
                          t=float(t), window=window, name=name or kind)


def c_component_at(t: float, name: str = "tanh_c_T") -> TestFunctional:
    """f(w) = tanh(c-component of w_t)"""
    return make_functional("tanh_marginal", a=1.0, v=(1.0,), b=0.0, t=t, name=name)


def constant_one() -> TestFunctional:
    return make_functional("constant", name="one")


def _direction(f: TestFunctional, dim: int) -> np.ndarray:
    if len(f.v) > dim:
        raise ValueError(f"functional '{f.name}': direction of length {len(f.v)} exceeds dimension {dim}")
    # leading coordinates given, rest zero
    v = np.zeros(dim)
    v[:len(f.v)] = f.v
    return v


def path_values(f: TestFunctional, grid: np.ndarray, paths: np.ndarray, interpolation: str) -> np.ndarray:
    """f evaluated on every path; paths shaped (..., N, G, d) -> (..., N)"""
    if f.kind not in FUNCTIONAL_KINDS:
        raise UnknownFunctionalError(f.kind)
    if f.kind == "constant":
        return np.ones(paths.shape[:-2])
    v = _direction(f, paths.shape[-1])
    if f.kind == "tanh_marginal":
        points = marginal_on_grid(grid, paths, f.t, interpolation)
        return np.tanh(f.a * (points @ v) + f.b)
    t0, t1 = f.window
    mask = (grid >= t0 - GRID_TIME_TOL) & (grid <= t1 + GRID_TIME_TOL)
    if not mask.any():
        k, _ = grid_position(grid, t0)
        mask[k] = True
    return np.tanh(f.a * (paths[..., mask, :] @ v) + f.b).mean(axis=-1)


def empirical_expectation(traj: TrajectoryMeasure, f: TestFunctional) -> float:
    """theta(f) = sum_i weights_i f(path_i)"""
    if f.kind == "constant":
        return 1.0
    values = path_values(f, traj.grid, traj.paths, traj.interpolation)
    return float(traj.weights @ values)


def replica_expectations(f: TestFunctional, grid: np.ndarray, snapshots: np.ndarray,
                         weights: np.ndarray) -> np.ndarray:
    """theta^n(f) per replica from recorded snapshots shaped (R, N, G, d)"""
    if f.kind == "constant":
        return np.ones(snapshots.shape[:-3])
    return canonical_sum(path_values(f, grid, snapshots, "piecewise_constant") * weights, axis=-1)


def sgd_record_steps(f: TestFunctional, n: int, n_prime: int) -> List[int]:
    """SGD step indices k whose states f reads (cadlag lookup on the k/n grid)"""
    if f.kind not in FUNCTIONAL_KINDS:
        raise UnknownFunctionalError(f.kind)
    if f.kind == "constant":
        return [n_prime]
    if f.kind == "tanh_marginal":
        return [min(int(math.floor(n * f.t + 1e-9)), n_prime)]
    t0, t1 = f.window
    lo = min(int(math.ceil(n * t0 - 1e-9)), n_prime)
    hi = min(int(math.floor(n * t1 + 1e-9)), n_prime)
    if hi < lo:
        return [min(int(math.floor(n * t0 + 1e-9)), n_prime)]
    return list(range(lo, hi + 1))
