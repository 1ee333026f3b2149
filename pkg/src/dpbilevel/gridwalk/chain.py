"""Exact finite-chain analysis of the lazy grid walk.

The walk is a lazy Metropolis chain on cell centers: hold with probability
1/2, otherwise propose one of the 2d axis neighbors uniformly and accept
with min{1, exp(-(f'(y) - f'(x)))}; proposals off the cube are rejected.
Off-diagonal transition probabilities are therefore
(1/(4d)) * min{1, exp(-(f'(y) - f'(x)))}, and the stationary law is the
Gibbs law proportional to exp(-f') by detailed balance.

These routines build the dense transition matrix, its stationary law,
spectral gap, exact conductance by subset enumeration, exact L-infinity
mixing distances via matrix powers, and the closed-form mixing-time budget
used by the sampler.  Everything here is for audit-scale chains; the actual
sampler never materializes a matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse.csgraph

from ..errors import SizeCapError
from .evaluator import Evaluator
from .grid import EXACT_STATE_CAP, GridSpec

#: explicit constant in the mixing-time budget
K_MIX = 64
#: states above which exhaustive conductance enumeration is refused
CONDUCTANCE_STATE_CAP = 18


def transition_matrix(f_values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Dense lazy-Metropolis transition matrix for scores f' at the centers."""
    f = np.asarray(f_values, dtype=float)
    n = grid.state_count
    if f.shape != (n,):
        raise ValueError(f"need {n} scores, got shape {f.shape}")
    P = np.zeros((n, n))
    base = 1.0 / (4.0 * grid.d)
    for x in range(n):
        for y in grid.neighbors(x):
            # min(1, exp(-(f[y]-f[x]))) without overflow
            P[x, y] = base * math.exp(min(0.0, f[x] - f[y]))
        P[x, x] = 1.0 - P[x].sum()
    return P


def stationary_from_scores(f_values: np.ndarray) -> np.ndarray:
    """Gibbs law proportional to exp(-f'), computed stably."""
    f = np.asarray(f_values, dtype=float)
    w = np.exp(-(f - np.min(f)))
    return w / w.sum()


def dist_inf(p: np.ndarray, q: np.ndarray) -> float:
    """max |log(p/q)| over states; infinite if the supports differ."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p > 0) != (q > 0)):
        return math.inf
    mask = p > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(np.log(p[mask]) - np.log(q[mask]))))


@dataclass(frozen=True)
class ChainAnalysis:
    """Exact description of one finite walk chain."""

    grid: GridSpec
    f_values: np.ndarray
    transition: np.ndarray
    stationary: np.ndarray
    spectral_gap: float
    conductance_phi: Optional[float]
    reducible: bool

    def cheeger_interval(self) -> tuple[float, float]:
        """(gap/2, sqrt(2*gap)) bracket for the conductance."""
        return self.spectral_gap / 2.0, math.sqrt(2.0 * self.spectral_gap)

    def to_json_report(self) -> str:
        return json.dumps({
            "states": int(self.grid.state_count),
            "cells_per_axis": int(self.grid.cells_per_axis),
            "d": int(self.grid.d),
            "stationary": self.stationary.tolist(),
            "conductance_phi": self.conductance_phi,
            "spectral_gap": self.spectral_gap,
            "reducible": self.reducible,
        })


def _spectral_gap(P: np.ndarray, pi: np.ndarray) -> float:
    """1 - lambda_2 of the reversible chain, via its symmetrization."""
    support = pi > 0
    Ps = P[np.ix_(support, support)]
    pis = pi[support]
    root = np.sqrt(pis)
    S = (root[:, None] / root[None, :]) * Ps
    eigs = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(1.0 - eigs[-2]) if len(eigs) > 1 else 1.0


def exact_chain(
    evaluator: Evaluator | np.ndarray,
    grid: GridSpec,
    state_cap: int = EXACT_STATE_CAP,
) -> ChainAnalysis:
    """Materialize the chain at audit scale (dense matrix, exact stationary law).

    evaluator may be an Evaluator (scored at the cell centers) or a precomputed
    score vector.  Conductance is filled exactly when the state count is within
    the enumeration cap, else left as None (use the Cheeger interval instead).
    """
    n = grid.state_count
    if n > state_cap:
        raise SizeCapError(f"{n} states exceed the exact-analysis cap {state_cap}")
    if isinstance(evaluator, Evaluator) or hasattr(evaluator, "evaluate_many"):
        f = evaluator.evaluate_many(grid.centers_all())
    else:
        f = np.asarray(evaluator, dtype=float)
    P = transition_matrix(f, grid)
    pi = stationary_from_scores(f)
    ncomp, _ = scipy.sparse.csgraph.connected_components(
        P > 0, directed=True, connection="strong")
    reducible = ncomp > 1
    gap = _spectral_gap(P, pi)
    analysis = ChainAnalysis(
        grid=grid, f_values=f, transition=P, stationary=pi,
        spectral_gap=gap, conductance_phi=None, reducible=reducible,
    )
    if n <= CONDUCTANCE_STATE_CAP:
        phi = 0.0 if reducible else conductance_exact(analysis)
        analysis = ChainAnalysis(
            grid=grid, f_values=f, transition=P, stationary=pi,
            spectral_gap=gap, conductance_phi=phi, reducible=reducible,
        )
    return analysis


def conductance_exact(analysis: ChainAnalysis, state_cap: int = CONDUCTANCE_STATE_CAP) -> float:
    """Exhaustive-minimum conductance over all subsets with mass in (0, 1/2].

    Vectorized over all 2^n - 2 proper subsets; refuses above the cap.
    """
    n = analysis.grid.state_count
    if n > state_cap:
        raise SizeCapError(
            f"{n} states exceed the conductance enumeration cap {state_cap}; "
            "use the Cheeger interval from the spectral gap instead"
        )
    pi = analysis.stationary
    Q = pi[:, None] * analysis.transition  # flow matrix
    count = 1 << n
    ids = np.arange(1, count - 1, dtype=np.uint32)
    masks = ((ids[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(float)
    mass = masks @ pi
    flow_out = masks @ Q.sum(axis=1) - np.einsum("ij,ij->i", masks @ Q, masks)
    valid = (mass > 0) & (mass <= 0.5 + 1e-15)
    if not np.any(valid):
        return 1.0
    ratios = flow_out[valid] / mass[valid]
    return float(np.min(ratios))


def mixing_time_bound(
    alpha_lip: float, tau: float, d: int, eps_acc: float, zeta_bound: float,
    k_mix: float = K_MIX,
) -> int:
    """Step budget after which the walk is within eps_acc of stationary.

    k_mix * e^{12 zeta} * (alpha^2 tau^2 d^2 / eps^2) * e^{eps}
          * max(d * ln(alpha tau sqrt(d) / eps), alpha tau)

    The perturbation enters only through the e^{12 zeta} factor: a zeta-sized
    evaluation error dilates the budget by at most that much.
    """
    if eps_acc <= 0:
        raise ValueError("eps_acc must be positive")
    at = alpha_lip * tau
    log_arg = at * math.sqrt(d) / eps_acc
    log_term = d * math.log(log_arg) if log_arg > 1.0 else 0.0
    core = (at * d / eps_acc) ** 2 * math.exp(eps_acc) * max(log_term, at)
    return max(1, int(math.ceil(k_mix * math.exp(12.0 * zeta_bound) * core)))


def linf_mixing_distance(
    P: np.ndarray, pi: np.ndarray, t: int, spectral_threshold: int = 512
) -> float:
    """max over start states of dist_inf(row of P^t, pi).

    Small chains take P^t by binary powering with rows renormalized after
    every multiply to keep floating-point drift out of the log-ratio metric.
    Above spectral_threshold states, the power is taken through the
    eigendecomposition of the pi-symmetrized kernel instead — the chain is
    reversible, so this is exact up to one dense solve — because the mixing
    budget t is typically so large that repeated squaring costs dozens of
    dense multiplies.
    """
    n = P.shape[0]
    if n > spectral_threshold and np.all(pi > 0):
        root = np.sqrt(pi)
        S = (root[:, None] / root[None, :]) * P
        lam, V = np.linalg.eigh((S + S.T) / 2.0)
        lam = np.clip(lam, -1.0, 1.0)
        lam_t = np.where(t % 2 == 0, 1.0, np.sign(lam)) * np.abs(lam) ** float(t)
        R = (root[None, :] / root[:, None]) * ((V * lam_t) @ V.T)
        R /= R.sum(axis=1, keepdims=True)
        if np.any(R <= 0):
            return math.inf
        return float(np.abs(np.log(R) - np.log(pi)[None, :]).max())

    def _norm(M):
        return M / M.sum(axis=1, keepdims=True)

    result = None
    base = P.copy()
    k = t
    while k:
        if k & 1:
            result = base if result is None else _norm(result @ base)
        k >>= 1
        if k:
            base = _norm(base @ base)
    if result is None:
        result = np.eye(P.shape[0])
    return max(dist_inf(row, pi) for row in result)
