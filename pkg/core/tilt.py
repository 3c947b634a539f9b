"""
Tilted Data Kernels - relative entropy, step discretization, exponential tilts
==============================================================================
A tilted kernel rho is constant in time on each block of [0, T]; its cost is
R(rho) = sum_b width_b * H(rho_b | pi).
"""
import math
from typing import Optional, Tuple
import numpy as np
from scipy.special import rel_entr, logsumexp

from config import Config
from models.domain import TiltedKernel, StepKernelSequence, DataAtomSet

# +inf sentinel for entropies without absolute continuity
INFINITE_ENTROPY = math.inf


def constant_kernel(row: np.ndarray, T: float) -> TiltedKernel:
    """One-block kernel rho_t = row on [0, T]"""
    return TiltedKernel(horizon=T, block_edges=np.array([0.0, T]), probs=np.asarray(row, dtype=float)[None, :])


def base_kernel(pi: DataAtomSet, T: float) -> TiltedKernel:
    return constant_kernel(pi.probs, T)


def uniform_blocks(rows: np.ndarray, T: float) -> TiltedKernel:
    """B equal-width blocks carrying the given rows"""
    rows = np.atleast_2d(rows)
    return TiltedKernel(horizon=T, block_edges=np.linspace(0.0, T, rows.shape[0] + 1), probs=rows)


def entropy_rows(probs: np.ndarray, base: np.ndarray) -> np.ndarray:
    """H(row | base) per row, +inf where a row charges a base-null atom"""
    probs = np.atleast_2d(probs)
    if probs.shape[1] != base.shape[0]:
        raise ValueError(f"entropy_rows: rows over {probs.shape[1]} atoms, base over {base.shape[0]}")
    singular = np.any((probs > 0) & (base[None, :] <= 0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = rel_entr(probs, base[None, :])
    values = np.where(singular[:, None], 0.0, terms).sum(axis=1)
    values = np.maximum(values, 0.0)
    values[singular] = INFINITE_ENTROPY
    return values


def is_abs_continuous(rho: TiltedKernel, pi: DataAtomSet) -> bool:
    return not bool(np.any((rho.probs > 0) & (pi.probs[None, :] <= 0)))


def relative_entropy_R(rho: TiltedKernel, pi: DataAtomSet) -> float:
    """R(rho) = H(rho | dt x pi) over [0, T]"""
    if rho.probs.shape[1] != pi.size:
        raise ValueError(f"relative_entropy_R: kernel over {rho.probs.shape[1]} atoms, pi over {pi.size}")
    if not is_abs_continuous(rho, pi):
        return INFINITE_ENTROPY
    return float(np.sum(rho.widths * entropy_rows(rho.probs, pi.probs)))


def block_overlaps(starts: np.ndarray, ends: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Length of [starts_k, ends_k] intersected with every block, shape (S, B)"""
    lo = np.maximum(starts[:, None], edges[None, :-1])
    hi = np.minimum(ends[:, None], edges[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    overlap[overlap <= Config.EDGE_SNAP_TOL * max(1.0, float(edges[-1]))] = 0.0
    return overlap


def discretize_kernel(rho: TiltedKernel, n: int) -> StepKernelSequence:
    """pi_{k,n} = n * integral of rho_t over [(k-1)/n, k/n], k = 1..floor(nT)"""
    if n < 1:
        raise ValueError(f"discretize_kernel: n must be >= 1, got {n}")
    n_prime = int(math.floor(n * rho.horizon))
    k = np.arange(1, n_prime + 1, dtype=float)
    overlap = block_overlaps((k - 1) / n, k / n, rho.block_edges)
    if n_prime == 0:
        return StepKernelSequence(n=n, horizon=rho.horizon, kernels=np.zeros((0, rho.probs.shape[1])))
    mix = overlap / overlap.sum(axis=1, keepdims=True)
    # a step inside one block copies that block's row bit for bit
    kernels = mix @ rho.probs
    return StepKernelSequence(n=n, horizon=rho.horizon, kernels=kernels)


def steps_to_kernel(seq: StepKernelSequence, T: float, pi: Optional[DataAtomSet] = None) -> TiltedKernel:
    """
    Reassemble per-step kernels into a block kernel with blocks of width 1/n;
    the tail [n'/n, T] (if any) carries pi
    """
    if seq.n_prime == 0:
        raise ValueError("steps_to_kernel: empty step sequence")
    edges = np.arange(seq.n_prime + 1, dtype=float) / seq.n
    rows = np.asarray(seq.kernels)
    tail = T - edges[-1]
    if tail > Config.EDGE_SNAP_TOL * max(1.0, T):
        if pi is None:
            raise ValueError("steps_to_kernel: the tail block needs the base distribution pi")
        edges = np.append(edges, T)
        rows = np.vstack([rows, pi.probs])
    else:
        edges[-1] = T
    return TiltedKernel(horizon=T, block_edges=edges, probs=rows)


def step_entropy(seq: StepKernelSequence, pi: DataAtomSet) -> float:
    """(1/n) sum_k H(pi_{k,n} | pi)"""
    values = entropy_rows(seq.kernels, pi.probs)
    if np.any(np.isinf(values)):
        return INFINITE_ENTROPY
    return float(values.sum() / seq.n)


def check_entropy_inequality(rho: TiltedKernel, pi: DataAtomSet, n: int) -> Tuple[float, float, bool]:
    """R of the reassembled discretization against R(rho)"""
    rhs = relative_entropy_R(rho, pi)
    if math.isinf(rhs):
        raise ValueError("check_entropy_inequality: R(rho) is infinite")
    seq = discretize_kernel(rho, n)
    if seq.n_prime == 0:
        return 0.0, rhs, True
    lhs = relative_entropy_R(steps_to_kernel(seq, rho.horizon, pi), pi)
    return lhs, rhs, bool(lhs <= rhs + Config.ENTROPY_TOL)


def exponential_tilt(pi: DataAtomSet, potential: np.ndarray, beta: float) -> np.ndarray:
    """row_j proportional to p_j exp(beta * potential_j)"""
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (pi.size,) or not np.all(np.isfinite(potential)):
        raise ValueError(f"exponential_tilt: need a finite potential over {pi.size} atoms")
    if beta == 0.0 or not np.any(potential):
        return np.array(pi.probs, copy=True)
    support = pi.probs > 0
    logits = np.full(pi.size, -np.inf)
    logits[support] = np.log(pi.probs[support]) + beta * potential[support]
    row = np.exp(logits - logsumexp(logits))
    return row / row.sum()
