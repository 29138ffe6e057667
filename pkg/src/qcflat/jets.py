"""Surface jets: point-local derivatives of a graph height r(x).

A SurfaceJet bundles r, its gradient, Hessian and (optionally) third
partials at one point, together with b = 1 + |grad r|^2.  Jets come
from three interchangeable providers: closed forms for the built-in
surface families (cylinder, paraboloid, ellipsoid), repeated symbolic
differentiation of a parsed expression, and central finite differences
of a black-box function.  validate_jet cross-checks two providers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as xp

__all__ = [
    "DOMAIN_MARGIN",
    "DomainError",
    "SurfaceJet",
    "SurfaceSpec",
    "BUILTIN_KINDS",
    "KINDS",
    "inside",
    "graph_function",
    "builtin_jet",
    "expr_jet",
    "fd_jet",
    "validate_jet",
    "JetDiscrepancy",
    "BuiltinJetProvider",
    "ExprJetProvider",
    "FdJetProvider",
    "jet_provider",
    "exact_or_fd_provider",
]

DOMAIN_MARGIN = 1e-9

_EPS = float(np.finfo(float).eps)
_H1 = _EPS ** (1.0 / 3.0)   # gradient step scale
_H2 = _EPS ** 0.25          # Hessian step scale
_H3 = _EPS ** 0.2           # third-partials step scale

BUILTIN_KINDS = ("cylinder", "paraboloid", "ellipsoid")
KINDS = BUILTIN_KINDS + ("graph-expr", "graph-fn")


class DomainError(ValueError):
    """A point (or finite-difference stencil point) left the surface domain."""


def _mirror_symmetric3(t: np.ndarray) -> np.ndarray:
    """Copy the canonical i<=j<=k entries to all index permutations."""
    n = t.shape[0]
    out = np.empty_like(t)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                a, b, c = sorted((i, j, k))
                out[i, j, k] = t[a, b, c]
    return out


@dataclass(frozen=True)
class SurfaceJet:
    """Derivatives of the graph height r at one point.

    The Hessian is symmetrized and the third partials mirrored from
    their canonical entries on construction, so the symmetry residual
    is exactly zero; b is always recomputed as 1 + |grad|^2.
    """

    n: int
    x: np.ndarray
    r: float
    grad: np.ndarray
    hess: np.ndarray
    third: Optional[np.ndarray] = None
    order: int = 2
    b: float = field(init=False, default=0.0)

    def __post_init__(self):
        n = int(self.n)
        x = np.array(self.x, dtype=float).reshape(n)
        grad = np.array(self.grad, dtype=float).reshape(n)
        hess = np.array(self.hess, dtype=float).reshape(n, n)
        hess = (hess + hess.T) / 2.0
        third = self.third
        if self.order == 3:
            if third is None:
                raise ValueError("order-3 jet requires third partials")
            third = _mirror_symmetric3(np.array(third, dtype=float).reshape(n, n, n))
        elif self.order == 2:
            if third is not None:
                raise ValueError("order-2 jet must not carry third partials")
        else:
            raise ValueError("jet order must be 2 or 3")
        b = 1.0 + float(grad @ grad)
        for arr in (x, grad, hess) + ((third,) if third is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", hess)
        object.__setattr__(self, "third", third)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class SurfaceSpec:
    """Description of a graph hypersurface over an axis-aligned box."""

    kind: str
    n: int
    domain: np.ndarray
    a: Optional[np.ndarray] = None
    expr: Optional[xp.ExprNode] = None
    fn: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        n = int(self.n)
        if n < 1:
            raise ValueError("dimension must be >= 1")
        domain = np.array(self.domain, dtype=float).reshape(n, 2)
        if not np.all(domain[:, 0] < domain[:, 1]):
            raise ValueError("domain box must have lo < hi on every axis")
        a = self.a
        if self.kind == "cylinder":
            if domain[-1, 0] <= -1.0 or domain[-1, 1] >= 1.0:
                raise ValueError("cylinder domain requires |x_n| < 1")
        elif self.kind == "ellipsoid":
            if a is None:
                raise ValueError("ellipsoid requires coefficients a")
            a = np.array(a, dtype=float).reshape(n)
            if np.any(a <= 0.0):
                raise ValueError("ellipsoid coefficients must be positive")
            if np.any(a == 1.0):
                raise ValueError("ellipsoid coefficients must differ from 1")
            corners = np.max(domain**2, axis=1)
            if float(a @ corners) >= 1.0:
                raise ValueError("ellipsoid domain must keep 1 - sum(a_i x_i^2) > 0")
            a.setflags(write=False)
        elif self.kind == "graph-expr":
            if self.expr is None:
                raise ValueError("graph-expr surface requires an expression")
        elif self.kind == "graph-fn":
            if not callable(self.fn):
                raise ValueError("graph-fn surface requires a callable")
        domain.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "a", a)
        if not self.name:
            object.__setattr__(self, "name", f"{self.kind}(n={n})")


def inside(spec: SurfaceSpec, x, margin: float = DOMAIN_MARGIN) -> bool:
    """Strict-interior membership (box plus surface-specific constraints)."""
    x = np.asarray(x, dtype=float).reshape(spec.n)
    lo, hi = spec.domain[:, 0], spec.domain[:, 1]
    if np.any(x <= lo + margin) or np.any(x >= hi - margin):
        return False
    if spec.kind == "cylinder":
        return abs(x[-1]) < 1.0 - margin
    if spec.kind == "ellipsoid":
        return 1.0 - float(spec.a @ (x * x)) > margin
    return True


def _require_inside(spec, x):
    if not inside(spec, x):
        raise DomainError(f"point {tuple(x)} lies outside the domain of {spec.name}")


def graph_function(spec: SurfaceSpec) -> Callable:
    """The height function r as a plain callable (for black-box use)."""
    if spec.kind == "paraboloid":
        def f(y):
            y = np.asarray(y, dtype=float)
            return float(y @ y)
        return f
    if spec.kind == "cylinder":
        def f(y):
            t = float(np.asarray(y, dtype=float)[-1])
            v = 1.0 - t * t
            if v <= 0.0:
                raise DomainError(f"cylinder graph undefined at x_n={t}")
            return math.sqrt(v)
        return f
    if spec.kind == "ellipsoid":
        a = spec.a
        def f(y):
            y = np.asarray(y, dtype=float)
            v = 1.0 - float(a @ (y * y))
            if v <= 0.0:
                raise DomainError("ellipsoid graph undefined (1 - sum a_i x_i^2 <= 0)")
            return math.sqrt(v)
        return f
    if spec.kind == "graph-expr":
        node = spec.expr
        def f(y):
            return xp.evaluate(node, np.asarray(y, dtype=float))
        return f
    return spec.fn


def builtin_jet(spec: SurfaceSpec, x, order: int = 2) -> SurfaceJet:
    """Exact analytic jet of a built-in surface family."""
    if spec.kind not in BUILTIN_KINDS:
        raise ValueError(f"builtin_jet does not handle kind {spec.kind!r}")
    if order not in (2, 3):
        raise ValueError("jet order must be 2 or 3")
    n = spec.n
    x = np.asarray(x, dtype=float).reshape(n)
    _require_inside(spec, x)

    if spec.kind == "paraboloid":
        r = float(x @ x)
        grad = 2.0 * x
        hess = 2.0 * np.eye(n)
        third = np.zeros((n, n, n)) if order == 3 else None
    elif spec.kind == "cylinder":
        t = x[-1]
        r = math.sqrt(1.0 - t * t)
        grad = np.zeros(n)
        grad[-1] = -t / r
        hess = np.zeros((n, n))
        hess[-1, -1] = -(1.0 + grad[-1] ** 2) / r
        third = None
        if order == 3:
            third = np.zeros((n, n, n))
            third[-1, -1, -1] = -3.0 * grad[-1] * hess[-1, -1] / r
    else:  # ellipsoid
        a = spec.a
        v = 1.0 - float(a @ (x * x))
        if v <= 1e-12:
            raise DomainError("ellipsoid jet singular: r -> 0")
        r = math.sqrt(v)
        grad = -a * x / r
        hess = (-np.diag(a) - np.outer(grad, grad)) / r
        third = None
        if order == 3:
            third = -(
                np.einsum("ik,j->ijk", hess, grad)
                + np.einsum("i,jk->ijk", grad, hess)
                + np.einsum("ij,k->ijk", hess, grad)
            ) / r
    return SurfaceJet(n, x, r, grad, hess, third, order)


class ExprJetProvider:
    """Jets of a parsed expression; derivative trees are built once and cached."""

    def __init__(self, node: xp.ExprNode, n: int):
        self.expr = node
        self.n = int(n)
        self._d1 = None
        self._d2 = None
        self._d3 = None

    def _first(self):
        if self._d1 is None:
            self._d1 = [
                xp.simplify(xp.differentiate(self.expr, i + 1)) for i in range(self.n)
            ]
        return self._d1

    def _second(self):
        if self._d2 is None:
            d1 = self._first()
            self._d2 = {
                (i, j): xp.simplify(xp.differentiate(d1[i], j + 1))
                for i in range(self.n)
                for j in range(i, self.n)
            }
        return self._d2

    def _third(self):
        if self._d3 is None:
            d2 = self._second()
            self._d3 = {
                (i, j, k): xp.simplify(xp.differentiate(d2[(i, j)], k + 1))
                for i in range(self.n)
                for j in range(i, self.n)
                for k in range(j, self.n)
            }
        return self._d3

    def jet(self, x, order: int = 2) -> SurfaceJet:
        if order not in (2, 3):
            raise ValueError("jet order must be 2 or 3")
        n = self.n
        x = np.asarray(x, dtype=float).reshape(n)
        r = xp.evaluate(self.expr, x)
        grad = np.array([xp.evaluate(d, x) for d in self._first()])
        d2 = self._second()
        hess = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                hess[i, j] = hess[j, i] = xp.evaluate(d2[(i, j)], x)
        third = None
        if order == 3:
            d3 = self._third()
            third = np.zeros((n, n, n))
            for i in range(n):
                for j in range(i, n):
                    for k in range(j, n):
                        third[i, j, k] = xp.evaluate(d3[(i, j, k)], x)
        return SurfaceJet(n, x, r, grad, hess, third, order)


def expr_jet(node: xp.ExprNode, x, order: int = 2) -> SurfaceJet:
    """One-shot expression jet (use ExprJetProvider for repeated points)."""
    return ExprJetProvider(node, len(np.atleast_1d(x))).jet(x, order)


def _guarded(f):
    def wrapped(y):
        try:
            return float(f(y))
        except (DomainError, xp.EvalDomainError) as exc:
            raise DomainError(f"stencil point {tuple(y)} outside the domain: {exc}") from exc
    return wrapped


def _hessian_stencil(f, x0, h, f0=None):
    """Second partials at x0: 3-point diagonal, 4-point cross off-diagonal."""
    n = x0.size
    if f0 is None:
        f0 = f(x0)
    hess = np.empty((n, n))
    for i in range(n):
        xp_ = x0.copy()
        xm = x0.copy()
        xp_[i] += h[i]
        xm[i] -= h[i]
        hess[i, i] = (f(xp_) - 2.0 * f0 + f(xm)) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            xpp = x0.copy(); xpp[i] += h[i]; xpp[j] += h[j]
            xpm = x0.copy(); xpm[i] += h[i]; xpm[j] -= h[j]
            xmp = x0.copy(); xmp[i] -= h[i]; xmp[j] += h[j]
            xmm = x0.copy(); xmm[i] -= h[i]; xmm[j] -= h[j]
            hess[i, j] = hess[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (
                4.0 * h[i] * h[j]
            )
    return hess


def fd_jet(f: Callable, x, order: int = 2) -> SurfaceJet:
    """Finite-difference jet of a black-box height function.

    Central differences with per-coordinate steps eps^(1/3), eps^(1/4)
    and eps^(1/5) (times 1+|x_i|) for the gradient, Hessian and third
    partials; fixed, non-adaptive steps keep results reproducible.
    """
    if order not in (2, 3):
        raise ValueError("jet order must be 2 or 3")
    x = np.asarray(x, dtype=float).copy()
    n = x.size
    f = _guarded(f)
    f0 = f(x)

    h1 = _H1 * (1.0 + np.abs(x))
    grad = np.empty(n)
    for i in range(n):
        xp_ = x.copy()
        xm = x.copy()
        xp_[i] += h1[i]
        xm[i] -= h1[i]
        grad[i] = (f(xp_) - f(xm)) / (2.0 * h1[i])

    h2 = _H2 * (1.0 + np.abs(x))
    hess = _hessian_stencil(f, x, h2, f0)
    hess = (hess + hess.T) / 2.0

    third = None
    if order == 3:
        h3 = _H3 * (1.0 + np.abs(x))
        slabs = []
        for i in range(n):
            xp_ = x.copy()
            xm = x.copy()
            xp_[i] += h3[i]
            xm[i] -= h3[i]
            hp = _hessian_stencil(f, xp_, h3)
            hm = _hessian_stencil(f, xm, h3)
            slabs.append((hp - hm) / (2.0 * h3[i]))
        t = np.stack(slabs)
        third = (t + np.einsum("jik->ijk", t) + np.einsum("kij->ijk", t)) / 3.0

    return SurfaceJet(n, x, f0, grad, hess, third, order)


# ---------------------------------------------------------------------------
# Cross-validation

_ORDER_NAMES = ("value", "grad", "hess", "third")


@dataclass(frozen=True)
class JetDiscrepancy:
    """Per-derivative-order discrepancies between two jets at a point."""

    ok: bool
    tol: float
    max_abs: dict
    max_rel: dict
    worst_index: dict


def validate_jet(a: SurfaceJet, b: SurfaceJet, tol: float) -> JetDiscrepancy:
    """Compare two jets entrywise; relative error uses 1 + max(|A|,|B|)."""
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} vs {b.n}")
    if not np.allclose(a.x, b.x, rtol=0.0, atol=0.0):
        raise ValueError("jets were taken at different points")
    tensors = {
        "value": (np.array([a.r]), np.array([b.r])),
        "grad": (a.grad, b.grad),
        "hess": (a.hess, b.hess),
    }
    if a.order == 3 and b.order == 3:
        tensors["third"] = (a.third, b.third)
    max_abs, max_rel, worst = {}, {}, {}
    ok = True
    for name, (ta, tb) in tensors.items():
        diff = np.abs(ta - tb)
        rel = diff / (1.0 + np.maximum(np.abs(ta), np.abs(tb)))
        idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
        max_abs[name] = float(diff.max())
        max_rel[name] = float(rel.max())
        worst[name] = tuple(int(v) for v in idx)
        if max_rel[name] > tol:
            ok = False
    return JetDiscrepancy(ok, float(tol), max_abs, max_rel, worst)


# ---------------------------------------------------------------------------
# Providers

class BuiltinJetProvider:
    """Closed-form jets for cylinder / paraboloid / ellipsoid specs."""

    def __init__(self, spec: SurfaceSpec):
        if spec.kind not in BUILTIN_KINDS:
            raise ValueError(f"no builtin jets for kind {spec.kind!r}")
        self.spec = spec
        self.n = spec.n

    def jet(self, x, order: int = 2) -> SurfaceJet:
        return builtin_jet(self.spec, x, order)


class FdJetProvider:
    """Finite-difference jets of a black-box height function."""

    def __init__(self, f: Callable, n: int):
        self._f = f
        self.n = int(n)

    def jet(self, x, order: int = 2) -> SurfaceJet:
        return fd_jet(self._f, x, order)


def jet_provider(spec: SurfaceSpec, mode: str = "analytic"):
    """Provider for a spec: exact derivatives ("analytic") or stencils ("fd")."""
    if mode == "fd":
        return FdJetProvider(graph_function(spec), spec.n)
    if mode != "analytic":
        raise ValueError(f"unknown jet mode {mode!r}")
    if spec.kind in BUILTIN_KINDS:
        return BuiltinJetProvider(spec)
    if spec.kind == "graph-expr":
        return ExprJetProvider(spec.expr, spec.n)
    raise ValueError("graph-fn surfaces have no analytic jets; use mode='fd'")


def exact_or_fd_provider(spec: SurfaceSpec):
    """Best available provider: exact when the kind supports it, else fd."""
    if spec.kind == "graph-fn":
        return jet_provider(spec, "fd")
    return jet_provider(spec, "analytic")
