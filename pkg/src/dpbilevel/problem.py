"""Problem containers and constant bookkeeping for private bilevel ERM.

The upper-level objective averages a per-record loss f(x, y, z) evaluated at
the minimizer y of a strongly convex lower-level average g(x, y, z).  All
regularity constants (Lipschitz, smoothness, curvature) are declared by the
caller; the library never estimates them from data, because an estimated
constant would itself leak information about the dataset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import ConfigurationError
from .rng import make_generator

Vector = np.ndarray
Matrix = np.ndarray

#: additive slack used by probe_assumptions when comparing observed quantities
#: against declared bounds
PROBE_SLACK = 1e-6


@dataclass(frozen=True)
class Dataset:
    """A dataset of n records stored as rows of a fixed-width array.

    Adjacency throughout the package means "one record replaced", which is
    what :meth:`replaced` produces.
    """

    points: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ConfigurationError("dataset must be a nonempty 2-d array of records")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def record(self, i: int) -> np.ndarray:
        return self.points[i]

    def replaced(self, i: int, record: np.ndarray) -> "Dataset":
        """Return the adjacent dataset with record ``i`` replaced."""
        pts = self.points.copy()
        pts[i] = np.asarray(record, dtype=float)
        return Dataset(pts)

    def cached(self, key: str, build: Callable[[np.ndarray], object]):
        """Memoize a derived statistic of the record array (e.g. its mean)."""
        if key not in self._cache:
            self._cache[key] = build(self.points)
        return self._cache[key]


@dataclass(frozen=True)
class Domain:
    """A closed convex constraint set: a Euclidean ball or an axis-aligned box."""

    kind: str
    center: np.ndarray
    radius: Optional[float] = None
    half_widths: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.kind == "ball":
            if self.radius is None or self.radius < 0:
                raise ConfigurationError("ball domain needs a nonnegative radius")
        elif self.kind == "box":
            if self.half_widths is None:
                raise ConfigurationError("box domain needs half_widths")
            hw = np.asarray(self.half_widths, dtype=float)
            if hw.shape != self.center.shape or np.any(hw < 0):
                raise ConfigurationError("half_widths must be nonnegative, same shape as center")
            object.__setattr__(self, "half_widths", hw)
        else:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        """l2-diameter of the set."""
        if self.kind == "ball":
            return 2.0 * float(self.radius)
        return 2.0 * float(np.linalg.norm(self.half_widths))

    @property
    def inf_width(self) -> float:
        """Side length of the smallest axis-aligned enclosing cube."""
        if self.kind == "ball":
            return 2.0 * float(self.radius)
        return 2.0 * float(np.max(self.half_widths))

    def max_norm(self) -> float:
        """Upper bound on ||x||_2 over the set."""
        if self.kind == "ball":
            return float(np.linalg.norm(self.center)) + float(self.radius)
        return float(np.linalg.norm(np.abs(self.center) + self.half_widths))

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            v = x - self.center
            r = np.linalg.norm(v)
            if r <= self.radius:
                return x.copy()
            return self.center + v * (self.radius / r)
        return np.clip(x, self.center - self.half_widths, self.center + self.half_widths)

    def project_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "ball":
            V = X - self.center
            r = np.linalg.norm(V, axis=1)
            scale = np.ones_like(r)
            outside = r > self.radius
            scale[outside] = self.radius / r[outside]
            return self.center + V * scale[:, None]
        return np.clip(X, self.center - self.half_widths, self.center + self.half_widths)

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> bool:
        return self.distance(x) <= tol

    def distance(self, x: np.ndarray) -> float:
        """l2 distance from x to the set (0 inside)."""
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.project(x)))

    def distance_many(self, X: np.ndarray) -> np.ndarray:
        return np.linalg.norm(X - self.project_many(X), axis=1)

    def gauge(self, x: np.ndarray) -> float:
        """Minkowski gauge of x - center w.r.t. the centered set (<= 1 inside)."""
        v = np.asarray(x, dtype=float) - self.center
        if self.kind == "ball":
            if self.radius == 0:
                return 0.0 if not np.any(v) else math.inf
            return float(np.linalg.norm(v)) / self.radius
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(self.half_widths > 0, np.abs(v) / self.half_widths,
                              np.where(v == 0, 0.0, math.inf))
        return float(np.max(ratios)) if ratios.size else 0.0

    def gauge_many(self, X: np.ndarray) -> np.ndarray:
        V = X - self.center
        if self.kind == "ball":
            return np.linalg.norm(V, axis=1) / self.radius
        return np.max(np.abs(V) / self.half_widths, axis=1)

    def gauge_lip2(self) -> float:
        """l2-Lipschitz constant of the gauge function."""
        if self.kind == "ball":
            return 1.0 / float(self.radius)
        return 1.0 / float(np.min(self.half_widths))

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "ball":
            g = rng.standard_normal(self.dim)
            nrm = np.linalg.norm(g)
            if nrm == 0.0:
                return self.center.copy()
            u = rng.random() ** (1.0 / self.dim)
            return self.center + g * (self.radius * u / nrm)
        offs = rng.uniform(-1.0, 1.0, size=self.dim) * self.half_widths
        return self.center + offs


@dataclass(frozen=True)
class BilevelProblem:
    """Callbacks defining one bilevel ERM problem.

    Per-record callbacks are the primary contract.  The optional ``mean_*``
    callbacks return record-averaged quantities directly and exist purely as
    vectorized fast paths; when absent the library averages the per-record
    callbacks in a loop.
    """

    d_x: int
    d_y: int
    f_eval: Callable[[Vector, Vector, Vector], float]
    grad_f_x: Callable[[Vector, Vector, Vector], Vector]
    grad_f_y: Callable[[Vector, Vector, Vector], Vector]
    g_eval: Callable[[Vector, Vector, Vector], float]
    grad_g_y: Callable[[Vector, Vector, Vector], Vector]
    hess_g_xy: Callable[[Vector, Vector, Vector], Matrix]
    hess_g_yy: Callable[[Vector, Vector, Vector], Matrix]
    domain_x: Domain
    y_box: Domain
    mean_f: Optional[Callable[[Vector, Vector, Dataset], float]] = None
    mean_grad_f_x: Optional[Callable[[Vector, Vector, Dataset], Vector]] = None
    mean_grad_f_y: Optional[Callable[[Vector, Vector, Dataset], Vector]] = None
    mean_grad_g_y: Optional[Callable[[Vector, Vector, Dataset], Vector]] = None
    mean_hess_g_xy: Optional[Callable[[Vector, Vector, Dataset], Matrix]] = None
    mean_hess_g_yy: Optional[Callable[[Vector, Vector, Dataset], Matrix]] = None


def _mean_over_records(per_record, x, y, Z: Dataset):
    acc = None
    for i in range(Z.n):
        v = np.asarray(per_record(x, y, Z.record(i)), dtype=float)
        acc = v if acc is None else acc + v
    return acc / Z.n


def dataset_mean(p: BilevelProblem, name: str, x: Vector, y: Vector, Z: Dataset):
    """Record-average of one callback family, via the fast path if provided.

    ``name`` is one of f_eval/grad_f_x/grad_f_y/grad_g_y/hess_g_xy/hess_g_yy.
    """
    fast = {
        "f_eval": p.mean_f,
        "grad_f_x": p.mean_grad_f_x,
        "grad_f_y": p.mean_grad_f_y,
        "grad_g_y": p.mean_grad_g_y,
        "hess_g_xy": p.mean_hess_g_xy,
        "hess_g_yy": p.mean_hess_g_yy,
    }[name]
    if fast is not None:
        return np.asarray(fast(x, y, Z), dtype=float)
    return _mean_over_records(getattr(p, name), x, y, Z)


_CONSTANT_FIELDS = (
    "L_fx", "L_fy", "mu_g", "L_gy",
    "beta_fyy", "beta_fxx", "beta_fxy", "beta_gxy", "beta_gyy",
    "M_gxy", "M_gyy", "C_gxy", "C_gyy",
    "D_x", "D_y",
)


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared regularity constants of one problem instance.

    First-order bounds: L_fx, L_fy bound the per-record upper-level gradients,
    L_gy the lower-level gradient, mu_g the lower-level strong convexity.
    Second-order bounds: beta_* are smoothness constants of the gradients,
    M_* / C_* Lipschitz constants of the lower-level Hessian blocks in x / y.
    D_x and D_y are the l2-diameters of the feasible sets.
    """

    L_fx: float
    L_fy: float
    mu_g: float
    L_gy: float
    beta_fyy: float
    beta_fxx: float
    beta_fxy: float
    beta_gxy: float
    beta_gyy: float
    M_gxy: float
    M_gyy: float
    C_gxy: float
    C_gyy: float
    D_x: float
    D_y: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"constant {f.name} must be finite and >= 0, got {v}")
        if self.mu_g <= 0:
            raise ConfigurationError("mu_g must be > 0")
        if self.D_y > self.L_gy / self.mu_g * (1 + 1e-12):
            raise ConfigurationError(
                "D_y must not exceed L_gy/mu_g "
                f"({self.D_y} > {self.L_gy / self.mu_g})"
            )

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in _CONSTANT_FIELDS})

    @classmethod
    def from_json(cls, text: str) -> "AssumptionConstants":
        data = json.loads(text)
        unknown = set(data) - set(_CONSTANT_FIELDS)
        if unknown:
            raise ConfigurationError(f"unknown constant keys: {sorted(unknown)}")
        missing = set(_CONSTANT_FIELDS) - set(data)
        if missing:
            raise ConfigurationError(f"missing constant keys: {sorted(missing)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class DerivedConstants:
    """Constants computed from AssumptionConstants (and n where applicable).

    s: replace-one-record sensitivity of Phi-hat used by the exponential
    mechanism; G: Lipschitz constant of Phi-hat in x; C: hypergradient bias
    constant; K: sensitivity constant of one hypergradient query; beta_phi:
    smoothness of Phi-hat; L_bar: hypergradient norm bound; Psi: excess-risk
    scale used by the warm-start stage.
    """

    s: float
    G: float
    C: float
    K: float
    beta_phi: float
    L_bar: float
    Psi: float

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)})


def derive_constants(a: AssumptionConstants, n: int) -> DerivedConstants:
    """Evaluate the closed-form derived constants for a dataset of size n."""
    if n < 1:
        raise ConfigurationError("n must be a positive integer")
    mu = a.mu_g
    L_bar = a.L_fx + a.beta_gxy * a.L_fy / mu
    s = (2.0 / n) * (a.L_fx * a.D_x + a.L_fy * a.D_y) + 4.0 * a.L_fy * a.L_gy / mu
    G = a.L_fx + a.L_fy * a.beta_gxy / mu + a.L_gy * a.beta_fxy / mu
    C = (
        a.beta_fxy
        + a.beta_fyy * a.beta_gxy / mu
        + a.L_fy * (a.C_gxy / mu + a.C_gyy * a.beta_gxy / mu**2)
    )
    K = 2.0 * (
        a.beta_fxy * a.L_gy / mu
        + 2.0 * L_bar
        + a.beta_gxy * a.beta_fyy * a.L_gy / mu**2
        + a.L_fy * a.C_gxy * a.L_gy / mu**2
        + a.L_fy * a.beta_gxy * a.L_gy * a.C_gyy / mu**3
        + a.L_fy * a.beta_gyy * a.beta_gxy / mu**2
    )
    beta_phi = (
        a.beta_fxx
        + 2.0 * a.beta_fxy * a.beta_gxy / mu
        + a.beta_gxy**2 * a.beta_fyy / mu**2
        + (a.L_fy * a.beta_gxy / mu**2) * (a.M_gyy + a.C_gyy * a.beta_gxy / mu)
        + a.L_fy * a.C_gxy * a.beta_gxy / mu**2
        + a.L_fy * a.M_gxy / mu
    )
    Psi = a.L_fx * a.D_x + a.L_fy * a.D_y + a.L_fy * a.L_gy / mu
    return DerivedConstants(s=s, G=G, C=C, K=K, beta_phi=beta_phi, L_bar=L_bar, Psi=Psi)


@dataclass
class ProbeReport:
    """Spot-check result: worst observed/declared ratio per constant.

    A probe can only falsify declared constants, never certify them.
    """

    trials: int
    ratios: Dict[str, float] = field(default_factory=dict)
    violations: List[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def _record(self, name: str, observed: float, bound: float, witness) -> None:
        if bound > 0:
            ratio = observed / bound
        else:
            ratio = 0.0 if observed <= PROBE_SLACK else math.inf
        if ratio > self.ratios.get(name, 0.0):
            self.ratios[name] = ratio
        if observed > bound + PROBE_SLACK:
            self.violations.append(
                {"name": name, "observed": observed, "bound": bound, "witness": witness}
            )


def probe_assumptions(
    p: BilevelProblem,
    a: AssumptionConstants,
    dataset: Dataset,
    trials: int = 100,
    rng_seed: int = 0,
) -> ProbeReport:
    """Sample (x, x', y, y', z) in the declared domains and test each bound.

    Gradient-norm bounds are checked directly; smoothness and Hessian-Lipschitz
    bounds via difference quotients between paired points; strong convexity via
    the minimum eigenvalue of the record-averaged hess_g_yy.
    """
    rng = make_generator(rng_seed)
    report = ProbeReport(trials=trials)
    for _ in range(trials):
        x = p.domain_x.sample_uniform(rng)
        x2 = p.domain_x.sample_uniform(rng)
        y = p.y_box.sample_uniform(rng)
        y2 = p.y_box.sample_uniform(rng)
        z = dataset.record(int(rng.integers(dataset.n)))
        witness = {"x": x.tolist(), "x2": x2.tolist(), "y": y.tolist(), "y2": y2.tolist(),
                   "z": np.asarray(z).tolist()}

        gfx, gfy = p.grad_f_x(x, y, z), p.grad_f_y(x, y, z)
        ggy = p.grad_g_y(x, y, z)
        report._record("L_fx", float(np.linalg.norm(gfx)), a.L_fx, witness)
        report._record("L_fy", float(np.linalg.norm(gfy)), a.L_fy, witness)
        report._record("L_gy", float(np.linalg.norm(ggy)), a.L_gy, witness)

        Hxy, Hyy = p.hess_g_xy(x, y, z), p.hess_g_yy(x, y, z)
        report._record("beta_gxy", float(np.linalg.norm(Hxy, 2)), a.beta_gxy, witness)
        report._record("beta_gyy", float(np.linalg.norm(Hyy, 2)), a.beta_gyy, witness)
        asym = float(np.max(np.abs(Hyy - Hyy.T))) / (1.0 + float(np.max(np.abs(Hyy))))
        report._record("hess_g_yy_symmetry", asym, 1e-8, witness)

        Hyy_avg = dataset_mean(p, "hess_g_yy", x, y, dataset)
        lam_min = float(np.linalg.eigvalsh(0.5 * (Hyy_avg + Hyy_avg.T))[0])
        # strong convexity: mu_g - lam_min must not exceed the slack
        report._record("mu_g", max(0.0, a.mu_g - lam_min), 0.0, witness)

        dx = float(np.linalg.norm(x - x2))
        dy = float(np.linalg.norm(y - y2))
        if dx > 1e-12:
            report._record(
                "beta_fxx",
                float(np.linalg.norm(p.grad_f_x(x, y, z) - p.grad_f_x(x2, y, z))) / dx,
                a.beta_fxx, witness)
            report._record(
                "beta_fxy",
                float(np.linalg.norm(p.grad_f_y(x, y, z) - p.grad_f_y(x2, y, z))) / dx,
                a.beta_fxy, witness)
            report._record(
                "M_gxy",
                float(np.linalg.norm(p.hess_g_xy(x, y, z) - p.hess_g_xy(x2, y, z), 2)) / dx,
                a.M_gxy, witness)
            report._record(
                "M_gyy",
                float(np.linalg.norm(p.hess_g_yy(x, y, z) - p.hess_g_yy(x2, y, z), 2)) / dx,
                a.M_gyy, witness)
        if dy > 1e-12:
            report._record(
                "beta_fyy",
                float(np.linalg.norm(p.grad_f_y(x, y, z) - p.grad_f_y(x, y2, z))) / dy,
                a.beta_fyy, witness)
            report._record(
                "beta_fxy_yside",
                float(np.linalg.norm(p.grad_f_x(x, y, z) - p.grad_f_x(x, y2, z))) / dy,
                a.beta_fxy, witness)
            report._record(
                "C_gxy",
                float(np.linalg.norm(p.hess_g_xy(x, y, z) - p.hess_g_xy(x, y2, z), 2)) / dy,
                a.C_gxy, witness)
            report._record(
                "C_gyy",
                float(np.linalg.norm(p.hess_g_yy(x, y, z) - p.hess_g_yy(x, y2, z), 2)) / dy,
                a.C_gyy, witness)
    return report
