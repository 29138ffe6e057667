"""Quasiconformality checks for smooth embeddings.

The certifying quantity is the conformal defect of a Jacobian J: with
M = J^T J and conformal factor c = det(M)^(1/2n), the defect is
||M - c^2 I||_F / c^2, which vanishes exactly when the differential is
a similarity (the map is 1-quasiconformal at the point).  On top of
that sit a Beltrami residual ||J_h^T J_h - G(x)|| for candidate
solutions of the pullback equation, a composition check that inverts a
candidate numerically and confirms the reparameterized embedding is
conformal, and an empirical distortion-ratio probe over shrinking
spheres.  The probe is diagnostic only - sampled directions cannot
certify a sup/inf - so certification authority stays with the defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm as _norm
from scipy.stats import qmc

from .curvature import metric as _metric
from .jets import DomainError, SurfaceSpec, exact_or_fd_provider, graph_function

__all__ = [
    "DegenerateJacobianError",
    "MetricNotSPDError",
    "NewtonError",
    "JacobianSample",
    "QCReport",
    "SmoothMap",
    "identity_map",
    "linear_map",
    "similarity_map",
    "graph_embedding",
    "cylinder_unroll",
    "expr_vector_map",
    "induced_metric_field",
    "pullback_metric_field",
    "fd_jacobian",
    "conformal_defect",
    "qc_check_map",
    "beltrami_residual",
    "compose_check",
    "distortion_ratio",
    "unit_directions",
]

_EPS = float(np.finfo(float).eps)
_H_JAC = _EPS ** (1.0 / 3.0)


class DegenerateJacobianError(ValueError):
    """det(J^T J) <= 0: the differential is not an embedding there."""


class MetricNotSPDError(ValueError):
    """A prescribed metric field failed to be symmetric positive definite."""


class NewtonError(RuntimeError):
    """Damped Newton inversion failed to converge."""


@dataclass(frozen=True)
class JacobianSample:
    """Differential of a map at a point; jac[j, i] = df_j/dx_i (m x n)."""

    x: np.ndarray
    jac: np.ndarray
    provenance: str = "analytic"


@dataclass(frozen=True)
class QCReport:
    """Point-by-point conformality data for one check.

    kind is "conformal", "beltrami", "compose" or "distortion"; only
    the fields relevant to the kind are populated.
    """

    kind: str
    points: tuple
    defects: Optional[tuple] = None
    factors: Optional[tuple] = None
    residuals: Optional[tuple] = None
    table: Optional[tuple] = None
    skipped: int = 0

    @property
    def max_defect(self) -> float:
        return max(self.defects) if self.defects else float("nan")

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else float("nan")


# ---------------------------------------------------------------------------
# Map handles

@dataclass(frozen=True)
class SmoothMap:
    """A map R^n -> R^m with an optional analytic Jacobian."""

    fn: Callable
    n: int
    m: int
    jac: Optional[Callable] = None
    name: str = "map"

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(self.m)

    def jacobian(self, x) -> Optional[np.ndarray]:
        if self.jac is None:
            return None
        return np.asarray(self.jac(np.asarray(x, dtype=float)), dtype=float).reshape(
            self.m, self.n
        )


def identity_map(n: int) -> SmoothMap:
    return SmoothMap(lambda x: x, n, n, jac=lambda x: np.eye(n), name="identity")


def linear_map(a: np.ndarray, name: str = "linear") -> SmoothMap:
    a = np.asarray(a, dtype=float)
    m, n = a.shape
    return SmoothMap(lambda x: a @ x, n, m, jac=lambda x: a, name=name)


def similarity_map(
    n: int,
    m: Optional[int] = None,
    scale: float = 2.0,
    seed: int = 0,
    translate: bool = True,
) -> SmoothMap:
    """x -> scale * Q x + v with seeded orthonormal-column Q (m x n)."""
    m = n if m is None else int(m)
    if m < n:
        raise ValueError("similarity target dimension must satisfy m >= n")
    rng = np.random.default_rng(np.uint64(seed))
    q, r = np.linalg.qr(rng.standard_normal((m, n)))
    q = q * np.sign(np.diag(r))  # sign fix keeps Q deterministic
    v = rng.standard_normal(m) if translate else np.zeros(m)
    a = scale * q
    return SmoothMap(lambda x: a @ x + v, n, m, jac=lambda x: a, name="similarity")


def graph_embedding(spec: SurfaceSpec) -> SmoothMap:
    """The trivial parameterization x -> (x, r(x)) of a graph surface."""
    f = graph_function(spec)
    provider = exact_or_fd_provider(spec)
    n = spec.n

    def fn(x):
        return np.concatenate([x, [f(x)]])

    def jac(x):
        grad = provider.jet(x, 2).grad
        return np.vstack([np.eye(n), grad])

    return SmoothMap(fn, n, n + 1, jac=jac, name=f"graph-embedding({spec.name})")


def cylinder_unroll(n: int) -> SmoothMap:
    """x -> (x_1, ..., x_{n-1}, arcsin x_n): unrolls the cylinder graph."""

    def fn(x):
        t = x[-1]
        if abs(t) >= 1.0:
            raise DomainError(f"arcsin undefined at x_n={t}")
        out = x.copy()
        out[-1] = math.asin(t)
        return out

    def jac(x):
        t = x[-1]
        if abs(t) >= 1.0:
            raise DomainError(f"arcsin undefined at x_n={t}")
        j = np.eye(n)
        j[-1, -1] = 1.0 / math.sqrt(1.0 - t * t)
        return j

    return SmoothMap(fn, n, n, jac=jac, name="cylinder-unroll")


def expr_vector_map(components, n: int, name: str = "expr-map") -> SmoothMap:
    """Componentwise expression map; Jacobian by symbolic differentiation."""
    from . import expr as xp

    comps = tuple(components)
    derivs = [
        [xp.simplify(xp.differentiate(c, i + 1)) for i in range(n)] for c in comps
    ]

    def fn(x):
        return np.array([xp.evaluate(c, x) for c in comps])

    def jac(x):
        return np.array([[xp.evaluate(d, x) for d in row] for row in derivs])

    return SmoothMap(fn, n, len(comps), jac=jac, name=name)


# ---------------------------------------------------------------------------
# Metric fields

def induced_metric_field(spec: SurfaceSpec) -> Callable:
    """x -> first fundamental form of the graph surface at x."""
    provider = exact_or_fd_provider(spec)

    def field(x):
        return _metric(provider.jet(np.asarray(x, dtype=float), 2)).g

    return field


def pullback_metric_field(sigma: SmoothMap) -> Callable:
    """x -> J_sigma^T J_sigma, the metric a parameterization induces."""

    def field(x):
        j = sigma.jacobian(x)
        if j is None:
            j = fd_jacobian(sigma, x)
        return j.T @ j

    return field


# ---------------------------------------------------------------------------
# Core operations

def fd_jacobian(f, x, step_scale: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian with steps (eps^(1/3) or given)*(1+|x_i|)."""
    x = np.asarray(x, dtype=float)
    scale = _H_JAC if step_scale is None else float(step_scale)
    h = scale * (1.0 + np.abs(x))
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        cols.append((np.asarray(f(xp), dtype=float) - np.asarray(f(xm), dtype=float)) / (2.0 * h[i]))
    return np.stack(cols, axis=-1)


def conformal_defect(sample: JacobianSample):
    """(defect, factor) of a Jacobian sample.

    factor c = det(J^T J)^(1/2n), so a conformal differential satisfies
    J^T J = c^2 I exactly; the defect ||J^T J - c^2 I||_F / c^2 is zero
    precisely in that case.  Anchor: f = 2x has factor 2.
    """
    j = np.asarray(sample.jac, dtype=float)
    n = j.shape[1]
    m = j.T @ j
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0.0:
        raise DegenerateJacobianError("det(J^T J) <= 0 at the sampled point")
    factor = math.exp(logdet / (2.0 * n))
    c2 = factor * factor
    defect = float(np.linalg.norm(m - c2 * np.eye(n), "fro") / c2)
    return defect, factor


def _jacobian_sample(f: SmoothMap, x, step_scale=None) -> JacobianSample:
    j = f.jacobian(x)
    if j is not None:
        return JacobianSample(np.asarray(x, dtype=float), j, "analytic")
    return JacobianSample(
        np.asarray(x, dtype=float), fd_jacobian(f, x, step_scale), "finite-difference"
    )


def qc_check_map(f: SmoothMap, points, step_scale: Optional[float] = None) -> QCReport:
    """Conformal defect of f at each point (analytic Jacobian when the
    map carries one, otherwise central differences).  Points with a
    degenerate Jacobian are skipped and counted."""
    xs, defects, factors = [], [], []
    skipped = 0
    for x in points:
        try:
            defect, factor = conformal_defect(_jacobian_sample(f, x, step_scale))
        except DegenerateJacobianError:
            skipped += 1
            continue
        xs.append(np.asarray(x, dtype=float))
        defects.append(defect)
        factors.append(factor)
    return QCReport(
        kind="conformal",
        points=tuple(xs),
        defects=tuple(defects),
        factors=tuple(factors),
        skipped=skipped,
    )


def beltrami_residual(h: SmoothMap, metric_field: Callable, points) -> QCReport:
    """Residual of the pullback equation (dh/dx)^T (dh/dx) = G(x):
    ||J^T J - G||_F / (1 + ||G||_F) at each point."""
    if h.m != h.n:
        raise ValueError("a candidate solution must map R^n to R^n")
    xs, residuals = [], []
    for x in points:
        g = np.asarray(metric_field(x), dtype=float)
        if not np.allclose(g, g.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(g).max())):
            raise MetricNotSPDError(f"metric not symmetric at {tuple(np.asarray(x))}")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise MetricNotSPDError(
                f"metric not positive definite at {tuple(np.asarray(x))}"
            ) from exc
        sample = _jacobian_sample(h, x)
        j = sample.jac
        residual = float(
            np.linalg.norm(j.T @ j - g, "fro") / (1.0 + np.linalg.norm(g, "fro"))
        )
        xs.append(np.asarray(x, dtype=float))
        residuals.append(residual)
    return QCReport(
        kind="beltrami", points=tuple(xs), residuals=tuple(residuals), skipped=0
    )


def _invert_near(h: SmoothMap, z, x0, tol: float = 1e-12, max_iter: int = 50):
    """Solve h(x) = z by damped Newton seeded at x0 (a known nearby preimage)."""
    x = np.asarray(x0, dtype=float).copy()
    z = np.asarray(z, dtype=float)
    target = tol * (1.0 + float(np.linalg.norm(z)))
    res = h(x) - z
    rnorm = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if rnorm <= target:
            return x
        jac = h.jacobian(x)
        if jac is None:
            jac = fd_jacobian(h, x)
        try:
            dx = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Jacobian during inversion: {exc}") from exc
        lam = 1.0
        while True:
            x_new = x + lam * dx
            try:
                res_new = h(x_new) - z
            except DomainError:
                res_new = None
            if res_new is not None and float(np.linalg.norm(res_new)) < rnorm:
                break
            lam *= 0.5
            if lam < 1e-10:
                raise NewtonError("damping failed to reduce the residual")
        x, res = x_new, res_new
        rnorm = float(np.linalg.norm(res))
    if rnorm <= target:
        return x
    raise NewtonError(f"no convergence after {max_iter} iterations (residual {rnorm:.3e})")


def compose_check(
    sigma: SmoothMap,
    h: SmoothMap,
    points,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> QCReport:
    """Conformal defect of sigma o h^{-1} at z = h(x) for each sample x.

    h is inverted by damped Newton seeded at the known preimage; the
    Jacobian of the composition is taken by central differences, each
    evaluation running one inversion.  A vanishing defect witnesses
    numerically that a solution of the pullback equation turns the
    parameterization into a 1-quasiconformal one.
    """
    if h.m != h.n:
        raise ValueError("the inner map must be a self-map of R^n")
    xs, defects, factors = [], [], []
    skipped = 0
    for x in points:
        x = np.asarray(x, dtype=float)
        try:
            z = h(x)

            def composed(zz):
                return sigma(_invert_near(h, zz, x, tol, max_iter))

            jac = fd_jacobian(composed, z)
            defect, factor = conformal_defect(JacobianSample(z, jac, "finite-difference"))
        except (NewtonError, DegenerateJacobianError, DomainError):
            skipped += 1
            continue
        xs.append(z)
        defects.append(defect)
        factors.append(factor)
    return QCReport(
        kind="compose",
        points=tuple(xs),
        defects=tuple(defects),
        factors=tuple(factors),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Distortion probe

def unit_directions(n: int, count: int) -> np.ndarray:
    """Deterministic low-discrepancy sample of the unit sphere in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]] * ((count + 1) // 2))[:count]
    engine = qmc.Halton(d=n, scramble=False)
    engine.fast_forward(1)  # index 0 is the all-zeros point
    u = engine.random(count)
    z = _norm.ppf(u)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def distortion_ratio(f, x, radii, directions: int = 128) -> tuple:
    """Table of (radius, max/min stretch over sampled directions).

    For each radius r the image diameters |f(x + r e) - f(x)| are taken
    over a deterministic direction set; their ratio tends to the local
    dilatation as r -> 0 (equal to 1 iff the map is conformal there).
    """
    radii = [float(r) for r in radii]
    if any(r <= 0.0 for r in radii):
        raise ValueError("radii must be positive")
    if any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    x = np.asarray(x, dtype=float)
    dirs = unit_directions(x.size, directions)
    f0 = np.asarray(f(x), dtype=float)
    table = []
    for r in radii:
        lengths = np.array(
            [np.linalg.norm(np.asarray(f(x + r * e), dtype=float) - f0) for e in dirs]
        )
        smallest = float(lengths.min())
        if smallest == 0.0:
            raise ValueError(f"map collapses a direction at radius {r}")
        table.append((r, float(lengths.max()) / smallest))
    return tuple(table)
