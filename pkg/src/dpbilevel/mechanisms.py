"""Private selection of the upper-level variable.

Five mechanisms, all pure functions of (problem, dataset, constants, budget,
seed):

* exponential_mechanism — samples x with density proportional to
  exp(-(eps'/(2s)) * Phi_hat(x)) over the feasible set, eps' = eps/2,
  with the remaining eps/2 covering the sampler's evaluation error and
  mixing slack (zeta = xi = eps'/6 each, entering the end-to-end ratio as
  4*zeta + 2*xi).  Pure eps-DP.
* regularized_exp_mechanism — Gibbs law of k * (Phi_hat(x) + mu_reg/2 * |x|^2)
  with mu_reg and k set from (eps, delta, n); (eps, delta)-DP.  The
  proportionality constant inside k is exposed as k_reg and validated by
  the exact hockey-stick audit rather than claimed from a proof.
* grad_norm_exp_mechanism — exponential mechanism whose score is the norm
  of the hypergradient at a tightly solved lower level; selects
  near-stationary points of nonconvex objectives.  Pure eps-DP.
* dp_second_order_gd — T projected gradient steps on inexact hypergradients
  with per-coordinate Gaussian noise; schedules (sigma, eta, T, alpha)
  follow closed forms in the declared constants and are recorded in the
  ledger.  (eps, delta)-DP when sigma meets its schedule.
* warm_start — exponential mechanism at half the budget to pick x0, then
  dp_second_order_gd at the other half starting there, with the start gap
  bound the first stage guarantees.

Every result carries a ledger sufficient to replay it bit-for-bit
(replay_mechanism) and serializes to JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError
from .gridwalk.evaluator import Evaluator
from .gridwalk.grid import GridSpec, grid_with_cells
from .gridwalk.sampler import (
    extend_to_cube,
    grid_law,
    sample_logconcave_detailed,
)
from .hypergrad import approx_hypergradient
from .inner import phi_solution_pair, solve_lower_level
from .problem import AssumptionConstants, BilevelProblem, Dataset, derive_constants
from .rng import derive_seed, make_generator

#: constant inside k = k_reg * mu_reg * n^2 eps^2 / (G^2 ln(1/delta))
K_REG = 0.125

RngLike = Union[int, np.random.Generator]


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ConfigurationError(f"delta must lie in [0, 1), got {self.delta}")

    def as_dict(self) -> dict:
        return {"epsilon": float(self.epsilon), "delta": float(self.delta)}


@dataclass(frozen=True)
class MechanismResult:
    """Output vector, spent budget, and a replayable parameter ledger."""

    x_out: np.ndarray
    budget_spent: PrivacyBudget
    ledger: dict = field(compare=False)
    trajectory: Optional[np.ndarray] = None

    def to_json(self) -> str:
        return json.dumps({
            "x_out": np.asarray(self.x_out, dtype=float).tolist(),
            "budget_spent": self.budget_spent.as_dict(),
            "ledger": self.ledger,
            "trajectory": None if self.trajectory is None
            else np.asarray(self.trajectory, dtype=float).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "MechanismResult":
        data = json.loads(text)
        return cls(
            x_out=np.array(data["x_out"], dtype=float),
            budget_spent=PrivacyBudget(**data["budget_spent"]),
            ledger=data["ledger"],
            trajectory=None if data.get("trajectory") is None
            else np.array(data["trajectory"], dtype=float),
        )


def _seed_and_generator(rng: RngLike) -> tuple[Optional[int], np.random.Generator]:
    """Normalize a seed-or-generator argument, keeping the seed for the ledger."""
    if isinstance(rng, np.random.Generator):
        return None, rng
    seed = int(rng)
    return seed, make_generator(seed)


def _child_seed(seed: Optional[int], gen: np.random.Generator, tag: str) -> int:
    """Derived integer seed for a sub-mechanism (always replayable on its own)."""
    if seed is not None:
        return derive_seed(seed, tag)
    return int(gen.integers(2**63))


def gaussian_noise(v: np.ndarray, sigma: float, rng: RngLike) -> np.ndarray:
    """v plus i.i.d. zero-mean Gaussian noise of scale sigma per coordinate.

    sigma = 0 returns v unchanged without consuming randomness, so noiseless
    control runs match plain gradient descent draw-for-draw.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be nonnegative")
    v = np.asarray(v, dtype=float)
    if sigma == 0.0:
        return v
    _, gen = _seed_and_generator(rng)
    return v + sigma * gen.standard_normal(v.shape)


def advanced_composition(
    eps_step: float, delta_step: float, T: int, delta_prime: float
) -> PrivacyBudget:
    """Total budget of T adaptive (eps_step, delta_step)-DP queries.

    eps_total = sqrt(2 T ln(1/delta')) eps + T eps (e^eps - 1);
    delta_total = T delta_step + delta_prime.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if eps_step <= 0:
        raise ConfigurationError("eps_step must be positive")
    if not (0.0 < delta_prime < 1.0):
        raise ConfigurationError("delta_prime must lie in (0, 1)")
    if not (0.0 <= delta_step < 1.0):
        raise ConfigurationError("delta_step must lie in [0, 1)")
    eps_total = (
        math.sqrt(2.0 * T * math.log(1.0 / delta_prime)) * eps_step
        + T * eps_step * math.expm1(eps_step)
    )
    return PrivacyBudget(eps_total, T * delta_step + delta_prime)


# ---------------------------------------------------------------------------
# score evaluators shared by the mechanisms and their exact-law audits
# ---------------------------------------------------------------------------

def _constant_evaluator() -> Evaluator:
    """Flat score: the mechanism degenerates to uniform sampling."""
    return Evaluator(
        eval=lambda theta: 0.0,
        zeta_bound=0.0,
        alpha_lip=0.0,
        eval_many=lambda thetas: np.zeros(len(thetas)),
    )


def _phi_evaluator(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    coeff: float,
    zeta: float,
    L_lip2: float,
) -> Evaluator:
    """Evaluator for coeff * Phi_hat with scaled error at most zeta.

    The batch path chains lower-level warm starts across consecutive
    points — the certificate keeps every value within tolerance regardless,
    and both the mechanism and the audit go through this same path, so the
    scores they see are identical.
    """
    if coeff == 0.0:
        return _constant_evaluator()
    zeta_phi = zeta / coeff

    def eval_one(x: np.ndarray) -> float:
        value, _ = phi_solution_pair(p, Z, x, zeta_phi, a)
        return coeff * value

    def eval_many(X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        warm = None
        for i, x in enumerate(X):
            value, warm = phi_solution_pair(p, Z, x, zeta_phi, a, warm_start=warm)
            out[i] = coeff * value
        return out

    return Evaluator(
        eval=eval_one,
        zeta_bound=zeta,
        alpha_lip=L_lip2 * math.sqrt(p.d_x),
        eval_many=eval_many,
    )


def _grad_norm_evaluator(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    coeff: float,
    alpha_inner: float,
    zeta: float,
    L_lip2: float,
) -> Evaluator:
    """Evaluator for coeff * ||hypergradient at a tightly solved lower level||."""
    if coeff == 0.0:
        return _constant_evaluator()

    def score(x: np.ndarray, warm):
        res = solve_lower_level(p, Z, x, alpha_inner, a, warm_start=warm)
        hg = approx_hypergradient(p, Z, x, res.y)
        return coeff * float(np.linalg.norm(hg.vector)), res.y

    def eval_one(x: np.ndarray) -> float:
        value, _ = score(x, None)
        return value

    def eval_many(X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        warm = None
        for i, x in enumerate(X):
            out[i], warm = score(x, warm)
        return out

    return Evaluator(
        eval=eval_one,
        zeta_bound=zeta,
        alpha_lip=L_lip2 * math.sqrt(p.d_x),
        eval_many=eval_many,
    )


def _alpha_fallback(a: AssumptionConstants) -> float:
    """Inner tolerance when the schedule's own formula is vacuous (C = 0)."""
    return 1e-8 * max(1.0, a.D_y)


def _exp_mech_parameters(p, Z, a, eps: float, xi: float, score: str) -> dict:
    """Derived quantities shared by a mechanism run and its exact-law audit."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if xi <= 0:
        raise ConfigurationError("xi must be positive")
    der = derive_constants(a, Z.n)
    eps_prime = eps / 2.0
    # zeta and xi both default to eps'/6 (the accounting that closes the
    # eps' + 4 zeta + 2 xi <= eps budget); a tighter request only helps.
    err = min(float(xi), eps_prime / 6.0)
    if score == "phi":
        sens, slope = der.s, der.L_bar
    elif score == "grad_norm":
        sens, slope = der.G, der.beta_phi
    else:
        raise ConfigurationError(f"unknown score kind {score!r}")
    coeff = 0.0 if sens == 0.0 else eps_prime / (2.0 * sens)
    return {
        "eps": float(eps),
        "eps_prime": eps_prime,
        "zeta": err,
        "xi_used": err,
        "sensitivity": float(sens),
        "coeff": float(coeff),
        "L_lip2": float(coeff * slope),
        "n": Z.n,
        "derived": der,
    }


def _build_score_evaluator(p, Z, a, params: dict, score: str) -> Evaluator:
    if score == "phi":
        return _phi_evaluator(p, Z, a, params["coeff"], params["zeta"], params["L_lip2"])
    der = params["derived"]
    if der.C > 0:
        # C * alpha <= the score-scale error budget zeta / coeff = G/3
        alpha_inner = der.G / (3.0 * der.C)
    else:
        alpha_inner = _alpha_fallback(a)
    return _grad_norm_evaluator(
        p, Z, a, params["coeff"], alpha_inner, params["zeta"], params["L_lip2"]
    )


def _run_exp_mechanism(p, Z, a, eps, xi, rng, score, name, force_walk, engine):
    seed, gen = _seed_and_generator(rng)
    params = _exp_mech_parameters(p, Z, a, eps, xi, score)
    evaluator = _build_score_evaluator(p, Z, a, params, score)
    detail = sample_logconcave_detailed(
        evaluator, p.domain_x, params["L_lip2"], params["xi_used"], gen,
        force_walk=force_walk, engine=engine,
    )
    ledger = {
        "mechanism": name,
        "eps": float(eps),
        "xi": float(xi),
        "seed": seed,
        "force_walk": bool(force_walk),
        "n": params["n"],
        "eps_prime": params["eps_prime"],
        "sensitivity": params["sensitivity"],
        "coeff": params["coeff"],
        "zeta": params["zeta"],
        "xi_used": params["xi_used"],
        "L_lip2": params["L_lip2"],
        "plan": detail.plan.as_dict(),
        "cell": detail.cell,
        "restarts": detail.restarts,
        "walk_faults": detail.walk_faults,
    }
    return MechanismResult(detail.theta, PrivacyBudget(eps, 0.0), ledger)


def exponential_mechanism(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    eps: float,
    xi: float,
    rng: RngLike,
    force_walk: bool = False,
    engine: str = "auto",
) -> MechanismResult:
    """Sample x with density ~ exp(-(eps/(4s)) * Phi_hat(x)); pure eps-DP.

    Half the budget drives the density's coefficient; the other half absorbs
    the inexact lower-level solves (evaluation error zeta) and the sampler's
    accuracy slack (xi), both set to eps/12.
    """
    return _run_exp_mechanism(
        p, Z, a, eps, xi, rng, "phi", "exponential_mechanism", force_walk, engine
    )


def grad_norm_exp_mechanism(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    eps: float,
    xi: float,
    rng: RngLike,
    force_walk: bool = False,
    engine: str = "auto",
) -> MechanismResult:
    """Sample x with density ~ exp(-(eps/(4G)) * ||hypergradient(x)||).

    Targets near-stationary points of nonconvex objectives; same budget
    split and error accounting as exponential_mechanism.
    """
    return _run_exp_mechanism(
        p, Z, a, eps, xi, rng, "grad_norm", "grad_norm_exp_mechanism",
        force_walk, engine,
    )


def _reg_mech_parameters(p, Z, a, eps, delta, mode, xi, k_reg) -> dict:
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError("delta must lie in (0, 1)")
    if mode not in ("erm", "population"):
        raise ConfigurationError(f"mode must be 'erm' or 'population', got {mode!r}")
    if xi <= 0:
        raise ConfigurationError("xi must be positive")
    if a.D_x <= 0:
        raise ConfigurationError("regularized mechanism needs D_x > 0")
    n = Z.n
    der = derive_constants(a, n)
    G = der.G
    ln1d = math.log(1.0 / delta)
    if G == 0.0:
        mu_reg = k = coeff_phi = 0.0
    else:
        mu_reg = G * math.sqrt(p.d_x * ln1d) / (n * a.D_x * eps)
        if mode == "population":
            mu_reg += G / (a.D_x * math.sqrt(n))
        k = k_reg * mu_reg * n**2 * eps**2 / (G**2 * ln1d)
        coeff_phi = k
    err = min(float(xi), eps / 24.0)
    L2 = k * (der.L_bar + mu_reg * p.domain_x.max_norm())
    return {
        "n": n, "derived": der, "G": float(G), "mu_reg": float(mu_reg),
        "k": float(k), "k_reg": float(k_reg), "zeta": err, "xi_used": err,
        "L_lip2": float(L2), "coeff_phi": float(coeff_phi),
    }


def _reg_mech_evaluator(p, Z, a, params: dict) -> Evaluator:
    """Evaluator for k * (Phi_hat(x) + mu_reg/2 * ||x||^2)."""
    k, mu_reg = params["k"], params["mu_reg"]
    if k == 0.0:
        return _constant_evaluator()
    base = _phi_evaluator(p, Z, a, k, params["zeta"], params["L_lip2"])

    def regularizer(x):
        return 0.5 * k * mu_reg * float(np.dot(x, x))

    return Evaluator(
        eval=lambda x: base.eval(x) + regularizer(np.asarray(x, dtype=float)),
        zeta_bound=params["zeta"],
        alpha_lip=base.alpha_lip,
        eval_many=lambda X: base.evaluate_many(X)
        + 0.5 * k * mu_reg * np.einsum("ij,ij->i", np.asarray(X, float), np.asarray(X, float)),
    )


def regularized_exp_mechanism(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    eps: float,
    delta: float,
    mode: str,
    xi: float,
    rng: RngLike,
    k_reg: float = K_REG,
    force_walk: bool = False,
    engine: str = "auto",
) -> MechanismResult:
    """Sample x ~ exp(-k (Phi_hat(x) + mu_reg ||x||^2 / 2)); (eps, delta)-DP.

    mode picks the regularization strength: "erm" optimizes empirical risk;
    "population" adds G/(D_x sqrt(n)) to mu_reg for the generalization bound
    (valid when records are drawn i.i.d.).
    """
    seed, gen = _seed_and_generator(rng)
    params = _reg_mech_parameters(p, Z, a, eps, delta, mode, xi, k_reg)
    evaluator = _reg_mech_evaluator(p, Z, a, params)
    detail = sample_logconcave_detailed(
        evaluator, p.domain_x, params["L_lip2"], params["xi_used"], gen,
        force_walk=force_walk, engine=engine,
    )
    ledger = {
        "mechanism": "regularized_exp_mechanism",
        "eps": float(eps),
        "delta": float(delta),
        "mode": mode,
        "xi": float(xi),
        "seed": seed,
        "k_reg": params["k_reg"],
        "force_walk": bool(force_walk),
        "n": params["n"],
        "G": params["G"],
        "mu_reg": params["mu_reg"],
        "k": params["k"],
        "zeta": params["zeta"],
        "xi_used": params["xi_used"],
        "L_lip2": params["L_lip2"],
        "plan": detail.plan.as_dict(),
        "cell": detail.cell,
        "restarts": detail.restarts,
        "walk_faults": detail.walk_faults,
    }
    return MechanismResult(detail.theta, PrivacyBudget(eps, delta), ledger)


def mechanism_grid_law(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    mechanism: str,
    eps: float,
    xi: float,
    delta: Optional[float] = None,
    mode: str = "erm",
    k_reg: float = K_REG,
    cells_per_axis: Optional[int] = None,
    grid: Optional[GridSpec] = None,
) -> tuple[np.ndarray, GridSpec]:
    """Exact output law of a mechanism discretized onto a grid.

    Builds the same cube-extended score the named mechanism samples from and
    returns the normalized Gibbs weights over the grid's cell centers — the
    enumerable law the DP audits check ratios on.  Pass cells_per_axis (or a
    prebuilt grid) to control the audit resolution.
    """
    if mechanism in ("exponential_mechanism", "grad_norm_exp_mechanism"):
        score = "phi" if mechanism == "exponential_mechanism" else "grad_norm"
        params = _exp_mech_parameters(p, Z, a, eps, xi, score)
        evaluator = _build_score_evaluator(p, Z, a, params, score)
    elif mechanism == "regularized_exp_mechanism":
        if delta is None:
            raise ConfigurationError("regularized mechanism law needs delta")
        params = _reg_mech_parameters(p, Z, a, eps, delta, mode, xi, k_reg)
        evaluator = _reg_mech_evaluator(p, Z, a, params)
    else:
        raise ConfigurationError(f"no enumerable law for mechanism {mechanism!r}")
    ext = extend_to_cube(evaluator, p.domain_x, params["L_lip2"])
    if grid is None:
        if cells_per_axis is None:
            raise ConfigurationError("pass cells_per_axis or a grid")
        grid = grid_with_cells(p.domain_x, cells_per_axis)
    return grid_law(ext, grid), grid


# ---------------------------------------------------------------------------
# Gradient-descent mechanism and the warm-start meta-algorithm
# ---------------------------------------------------------------------------

_GD_OVERRIDE_KEYS = {"T", "eta", "alpha", "sigma", "gap_upper_bound", "unsafe"}


def _gd_schedule(p, Z, a, eps, delta, overrides: dict) -> dict:
    """Resolve (T, eta, alpha, sigma) from the closed-form schedules."""
    n = Z.n
    der = derive_constants(a, n)
    ln1d = math.log(1.0 / delta)
    gap = float(overrides.get("gap_upper_bound", der.L_bar * a.D_x))
    if gap < 0:
        raise ConfigurationError("gap_upper_bound must be nonnegative")

    if "T" in overrides:
        T = int(overrides["T"])
        if T < 1:
            raise ConfigurationError("T override must be >= 1")
    else:
        if der.K == 0.0:
            raise ConfigurationError(
                "T schedule needs K > 0; supply overrides['T']"
            )
        T = max(1, math.ceil(
            (n * eps / math.sqrt(p.d_x * ln1d))
            * math.sqrt(der.beta_phi * gap) / der.K
        ))

    sigma_schedule = 32.0 * der.K * math.sqrt(T * ln1d) / (n * eps)
    sigma = float(overrides.get("sigma", sigma_schedule))
    if sigma < 0:
        raise ConfigurationError("sigma must be nonnegative")
    unsafe = bool(overrides.get("unsafe", False))
    certified = sigma >= sigma_schedule * (1.0 - 1e-12)
    if not certified and not unsafe:
        raise ConfigurationError(
            f"sigma {sigma:.6g} is below the schedule value "
            f"{sigma_schedule:.6g} for T = {T}; pass overrides['unsafe'] = True "
            "to run anyway (the result will not be budget-certified)"
        )

    if "eta" in overrides:
        eta = float(overrides["eta"])
        if eta <= 0:
            raise ConfigurationError("eta must be positive")
    elif der.beta_phi > 0:
        eta = 1.0 / (2.0 * der.beta_phi)
    else:
        raise ConfigurationError(
            "objective smoothness constant is 0; supply overrides['eta']"
        )

    if "alpha" in overrides:
        alpha = float(overrides["alpha"])
        if alpha <= 0:
            raise ConfigurationError("alpha must be positive")
    elif der.C > 0:
        alpha = min(
            der.K / (n * der.C),
            math.sqrt(
                der.K * math.sqrt(gap * der.beta_phi)
                * math.sqrt(p.d_x * ln1d) / (eps * n)
            ) / der.C,
        )
        if not (alpha > 0 and math.isfinite(alpha)):
            alpha = _alpha_fallback(a)
    else:
        alpha = _alpha_fallback(a)

    return {
        "T": T, "eta": eta, "alpha": alpha, "sigma": sigma,
        "sigma_schedule": sigma_schedule, "gap_upper_bound": gap,
        "privacy_certified": certified, "unsafe": unsafe,
        "K": der.K, "C": der.C, "beta_phi": der.beta_phi,
    }


def dp_second_order_gd(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    eps: float,
    delta: float,
    x0: Optional[np.ndarray] = None,
    overrides: Optional[dict] = None,
    rng: RngLike = 0,
) -> MechanismResult:
    """Noisy projected gradient descent on the implicit objective.

    Each of T steps: solve the lower level to tolerance alpha (warm-started
    from the previous step), form the hypergradient, perturb it with
    isotropic Gaussian noise of scale sigma, step with rate eta, and project
    back onto the feasible set.  The output is a uniformly chosen iterate
    x_1..x_T; the full trajectory rides along.

    (eps, delta)-DP via the Gaussian mechanism (per-step query sensitivity
    4K/n) and advanced composition, provided sigma meets its schedule —
    overriding sigma below it requires overrides['unsafe'] = True and marks
    the ledger uncertified.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError("delta must lie in (0, 1)")
    ov = dict(overrides or {})
    unknown = set(ov) - _GD_OVERRIDE_KEYS
    if unknown:
        raise ConfigurationError(f"unknown override keys: {sorted(unknown)}")
    seed, gen = _seed_and_generator(rng)
    schedule = _gd_schedule(p, Z, a, eps, delta, ov)
    T, eta, alpha, sigma = (schedule[k] for k in ("T", "eta", "alpha", "sigma"))

    x = p.domain_x.project(np.asarray(
        p.domain_x.center if x0 is None else x0, dtype=float))
    trajectory = np.empty((T + 1, p.d_x))
    trajectory[0] = x
    warm = None
    for t in range(T):
        res = solve_lower_level(p, Z, x, alpha, a, warm_start=warm)
        warm = res.y
        query = approx_hypergradient(p, Z, x, res.y).vector
        noisy = gaussian_noise(query, sigma, gen)
        x = p.domain_x.project(x - eta * noisy)
        trajectory[t + 1] = x
    pick = int(gen.integers(1, T + 1))
    x_out = trajectory[pick].copy()

    ledger = {
        "mechanism": "dp_second_order_gd",
        "eps": float(eps),
        "delta": float(delta),
        "seed": seed,
        "x0": trajectory[0].tolist(),
        "overrides": {k: (bool(v) if k == "unsafe" else
                          int(v) if k == "T" else float(v))
                      for k, v in ov.items()},
        "n": Z.n,
        "T": int(T),
        "eta": float(eta),
        "alpha": float(alpha),
        "sigma": float(sigma),
        "sigma_schedule": float(schedule["sigma_schedule"]),
        "gap_upper_bound": float(schedule["gap_upper_bound"]),
        "K": float(schedule["K"]),
        "C": float(schedule["C"]),
        "beta_phi": float(schedule["beta_phi"]),
        "picked_iterate": pick,
        "privacy_certified": bool(schedule["privacy_certified"]),
    }
    return MechanismResult(x_out, PrivacyBudget(eps, delta), ledger, trajectory)


def warm_start(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    eps: float,
    delta: float,
    xi: float,
    rng: RngLike,
    stage_b_overrides: Optional[dict] = None,
) -> MechanismResult:
    """Exponential mechanism to choose x0, then noisy gradient descent from it.

    Stage A runs exponential_mechanism at eps/2 (spending no delta; the
    paper-style even delta split is recorded alongside for comparison).
    Stage B runs dp_second_order_gd at (eps/2, delta/2) from stage A's
    output, with the gap bound Psi * d_x / (eps * n) — what stage A
    guarantees in expectation-scale — substituted into the T and alpha
    schedules.  Total spent: (eps, delta/2).
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError(
            "delta must lie in (0, 1): the descent stage requires delta > 0"
        )
    seed, gen = _seed_and_generator(rng)
    seed_a = _child_seed(seed, gen, "stage_a")
    seed_b = _child_seed(seed, gen, "stage_b")

    stage_a = exponential_mechanism(p, Z, a, eps / 2.0, xi, seed_a)

    der = derive_constants(a, Z.n)
    gap = der.Psi * p.d_x / (eps * Z.n)
    ov = dict(stage_b_overrides or {})
    ov.setdefault("gap_upper_bound", gap)
    stage_b = dp_second_order_gd(
        p, Z, a, eps / 2.0, delta / 2.0, x0=stage_a.x_out, overrides=ov,
        rng=seed_b,
    )

    spent = PrivacyBudget(eps, delta / 2.0)
    ledger = {
        "mechanism": "warm_start",
        "eps": float(eps),
        "delta": float(delta),
        "xi": float(xi),
        "seed": seed,
        "stage_b_overrides": {
            k: (bool(v) if k == "unsafe" else int(v) if k == "T" else float(v))
            for k, v in (stage_b_overrides or {}).items()
        },
        "gap_upper_bound": float(gap),
        "stage_budgets_spent": [[eps / 2.0, 0.0], [eps / 2.0, delta / 2.0]],
        "stage_budgets_paper_split": [[eps / 2.0, delta / 2.0],
                                      [eps / 2.0, delta / 2.0]],
        "total_spent": [spent.epsilon, spent.delta],
        "stage_a": stage_a.ledger,
        "stage_b": stage_b.ledger,
    }
    return MechanismResult(stage_b.x_out, spent, ledger, stage_b.trajectory)


def replay_mechanism(
    p: BilevelProblem,
    Z: Dataset,
    a: AssumptionConstants,
    result: Union[MechanismResult, dict],
) -> MechanismResult:
    """Re-run a mechanism from its ledger; bit-identical given the same seed."""
    ledger = result.ledger if isinstance(result, MechanismResult) else dict(result)
    seed = ledger.get("seed")
    if seed is None:
        raise ConfigurationError(
            "ledger has no integer seed (the run was fed a live generator); "
            "replay is only defined for seeded runs"
        )
    name = ledger["mechanism"]
    if name == "exponential_mechanism":
        return exponential_mechanism(
            p, Z, a, ledger["eps"], ledger["xi"], seed,
            force_walk=ledger.get("force_walk", False),
        )
    if name == "grad_norm_exp_mechanism":
        return grad_norm_exp_mechanism(
            p, Z, a, ledger["eps"], ledger["xi"], seed,
            force_walk=ledger.get("force_walk", False),
        )
    if name == "regularized_exp_mechanism":
        return regularized_exp_mechanism(
            p, Z, a, ledger["eps"], ledger["delta"], ledger["mode"],
            ledger["xi"], seed, k_reg=ledger.get("k_reg", K_REG),
            force_walk=ledger.get("force_walk", False),
        )
    if name == "dp_second_order_gd":
        return dp_second_order_gd(
            p, Z, a, ledger["eps"], ledger["delta"],
            x0=np.array(ledger["x0"], dtype=float),
            overrides=ledger.get("overrides") or None,
            rng=seed,
        )
    if name == "warm_start":
        return warm_start(
            p, Z, a, ledger["eps"], ledger["delta"], ledger["xi"], seed,
            stage_b_overrides=ledger.get("stage_b_overrides") or None,
        )
    raise ConfigurationError(f"unknown mechanism {name!r}")
