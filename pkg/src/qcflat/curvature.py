"""Curvature tensors of a graph hypersurface at a point.

Everything is derived from a SurfaceJet: induced metric g = I + (grad r)(grad r)^T
with its closed-form inverse, Christoffel symbols, scalar second
fundamental form h = hess(r)/sqrt(b), shape operator g^{-1} h and its
eigenvalues (the principal curvatures), the (0,4) Riemann tensor (two
independent routes: the Gauss-equation product of second fundamental
forms, and the intrinsic Christoffel formula), Ricci, scalar curvature,
Schouten, Weyl (n >= 4) and Cotton (needs third derivatives of r or a
finite-difference pass over the Schouten field).

Index conventions are fixed by one worked anchor: for the paraboloid
r = |x|^2 at the origin with n = 4, Ricci must equal 12*I, i.e. Ricci
contracts the first and fourth Riemann slots.  Storage is dense; for
the n <= 8 sizes handled here symmetry is asserted rather than
exploited.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .jets import SurfaceJet, SurfaceSpec, exact_or_fd_provider

__all__ = [
    "MetricData",
    "CurvaturePack",
    "InvariantViolation",
    "metric",
    "christoffel",
    "second_fundamental",
    "shape_operator",
    "shape_operator_direct",
    "principal_curvatures",
    "riemann_gauss",
    "riemann_christoffel",
    "ricci_scalar",
    "schouten",
    "weyl",
    "cotton",
    "schouten_partials_analytic",
    "schouten_partials_fd",
    "schouten_field_at",
    "pack_from_jet",
    "SurfaceAnalyzer",
    "verify_pack",
    "COTTON_FD_STEP",
]

COTTON_FD_STEP = 1e-4


class InvariantViolation(RuntimeError):
    """A computed tensor failed one of its structural identities."""


@dataclass(frozen=True)
class MetricData:
    """Induced metric, its closed-form inverse, and b = 1 + |grad r|^2."""

    g: np.ndarray
    ginv: np.ndarray
    b: float


def metric(jet: SurfaceJet) -> MetricData:
    """g_ij = delta_ij + r_i r_j and g^jk = delta_jk - r_j r_k / b.

    g is always symmetric positive definite (identity plus a rank-one
    positive update), so no factorization can fail here.
    """
    n = jet.n
    g = np.eye(n) + np.outer(jet.grad, jet.grad)
    ginv = np.eye(n) - np.outer(jet.grad, jet.grad) / jet.b
    return MetricData(g=g, ginv=ginv, b=jet.b)


def _metric_partials(jet):
    """dg[p,i,k] = d g_ik / d x_p via the product rule on g = I + grad grad^T."""
    return np.einsum("ip,k->pik", jet.hess, jet.grad) + np.einsum(
        "i,kp->pik", jet.grad, jet.hess
    )


def christoffel(jet: SurfaceJet, m: MetricData) -> np.ndarray:
    """Christoffel symbols, stored gamma[m,i,j] with the upper index first."""
    dg = _metric_partials(jet)
    # s[k,i,j] = d_i g_kj + d_j g_ki - d_k g_ij
    s = np.einsum("ikj->kij", dg) + np.einsum("jki->kij", dg) - dg
    return 0.5 * np.einsum("km,kij->mij", m.ginv, s)


def _christoffel_partials(jet, m, gamma):
    """dgamma[p,m,i,j] = d gamma^m_ij / d x_p (needs third partials of r)."""
    if jet.order != 3:
        raise ValueError("Christoffel partials require an order-3 jet")
    grad, hess, third, b = jet.grad, jet.hess, jet.third, jet.b
    dg = _metric_partials(jet)
    s = np.einsum("ikj->kij", dg) + np.einsum("jki->kij", dg) - dg
    db = 2.0 * (hess @ grad)
    dginv = np.einsum("p,k,m->pkm", db, grad, grad) / b**2 - dg / b
    # d_p d_q g_kj = r_{k,q,p} r_j + r_{k,q} r_{j,p} + r_{k,p} r_{j,q} + r_k r_{j,q,p}
    ddg = (
        np.einsum("kqp,j->pqkj", third, grad)
        + np.einsum("kq,jp->pqkj", hess, hess)
        + np.einsum("kp,jq->pqkj", hess, hess)
        + np.einsum("k,jqp->pqkj", grad, third)
    )
    ds = (
        np.einsum("pikj->pkij", ddg)
        + np.einsum("pjki->pkij", ddg)
        - np.einsum("pkij->pkij", ddg)
    )
    return 0.5 * (
        np.einsum("pkm,kij->pmij", dginv, s) + np.einsum("km,pkij->pmij", m.ginv, ds)
    )


def second_fundamental(jet: SurfaceJet) -> np.ndarray:
    """Scalar second fundamental form h_ij = r_{i,j} / sqrt(b)."""
    return jet.hess / np.sqrt(jet.b)


def shape_operator(m: MetricData, h: np.ndarray) -> np.ndarray:
    """Shape operator as the matrix product g^{-1} h; entry [j,i] is s^j_i."""
    return m.ginv @ h


def shape_operator_direct(jet: SurfaceJet) -> np.ndarray:
    """Shape operator from the Weingarten route, bypassing g^{-1}:
    s^j_i = -b^{-3/2} r_j sum_k r_k r_{k,i} + b^{-1/2} r_{j,i}."""
    w = jet.hess @ jet.grad
    b = jet.b
    return -np.outer(jet.grad, w) / b**1.5 + jet.hess / np.sqrt(b)


def principal_curvatures(m: MetricData, h: np.ndarray) -> np.ndarray:
    """Eigenvalues of h v = kappa g v, ascending.

    g is factored as L L^T and the symmetric eigenproblem of
    L^{-1} h L^{-T} is solved, which guarantees real, stably ordered
    eigenvalues (eigensolving the nonsymmetric g^{-1} h does not).
    """
    try:
        lower = np.linalg.cholesky(m.g)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"metric factorization failed (corrupted input): {exc}") from exc
    w = solve_triangular(lower, h, lower=True)
    a = solve_triangular(lower, w.T, lower=True).T
    a = 0.5 * (a + a.T)
    return np.linalg.eigvalsh(a)


def riemann_gauss(jet: SurfaceJet) -> np.ndarray:
    """(0,4) Riemann tensor from the Gauss equation:
    R_ijkl = (r_{i,l} r_{j,k} - r_{i,k} r_{j,l}) / b."""
    hess = jet.hess
    return (
        np.einsum("il,jk->ijkl", hess, hess) - np.einsum("ik,jl->ijkl", hess, hess)
    ) / jet.b


def riemann_christoffel(jet: SurfaceJet, m: Optional[MetricData] = None) -> np.ndarray:
    """(0,4) Riemann tensor from the intrinsic connection formula.

    R(d_i,d_j)d_k = (d_i gamma^m_jk - d_j gamma^m_ik
                     + gamma^p_jk gamma^m_ip - gamma^p_ik gamma^m_jp) d_m,
    lowered with g_ml.  Requires an order-3 jet; exists as an
    independent cross-check of riemann_gauss.
    """
    if jet.order != 3:
        raise ValueError("riemann_christoffel requires an order-3 jet")
    if m is None:
        m = metric(jet)
    gamma = christoffel(jet, m)
    dgamma = _christoffel_partials(jet, m, gamma)
    rup = (
        np.einsum("imjk->mijk", dgamma)
        - np.einsum("jmik->mijk", dgamma)
        + np.einsum("pjk,mip->mijk", gamma, gamma)
        - np.einsum("pik,mjp->mijk", gamma, gamma)
    )
    return np.einsum("ml,mijk->ijkl", m.g, rup)


def ricci_scalar(m: MetricData, riemann: np.ndarray):
    """Ricci R_ij = g^{mn} R_{m i j n} (slots 1 and 4) and scalar R = g^{ij} R_ij."""
    ricci = np.einsum("mn,minj->ij", m.ginv, riemann)
    scalar = float(np.einsum("ij,ij->", m.ginv, ricci))
    return ricci, scalar


def schouten(m: MetricData, ricci: np.ndarray, scalar: float, n: int) -> np.ndarray:
    """Schouten tensor S_ij = (R_ij - R g_ij / (2(n-1))) / (n-2); needs n >= 3."""
    if n < 3:
        raise ValueError("Schouten tensor requires n >= 3")
    return (ricci - scalar * m.g / (2.0 * (n - 1))) / (n - 2)


def weyl(
    m: MetricData, riemann: np.ndarray, ricci: np.ndarray, scalar: float, n: int
) -> np.ndarray:
    """Weyl tensor; rejected for n <= 3.

    In dimension three the Weyl tensor vanishes identically, so
    returning it would let a caller "prove" flatness with the wrong
    criterion; the three-dimensional obstruction is the Cotton tensor.
    """
    if n <= 3:
        raise ValueError("Weyl tensor requires n >= 4 (use the Cotton tensor for n = 3)")
    g = m.g
    ricci_part = (
        np.einsum("ki,jl->ijkl", g, ricci)
        - np.einsum("il,jk->ijkl", g, ricci)
        + np.einsum("jl,ik->ijkl", g, ricci)
        - np.einsum("jk,il->ijkl", g, ricci)
    ) / (n - 2)
    scalar_part = (
        scalar
        * (np.einsum("il,jk->ijkl", g, g) - np.einsum("ki,jl->ijkl", g, g))
        / ((n - 1) * (n - 2))
    )
    return riemann + ricci_part + scalar_part


# ---------------------------------------------------------------------------
# Cotton tensor

def schouten_field_at(provider, x) -> np.ndarray:
    """Schouten tensor at x from an order-2 jet of the given provider."""
    jet = provider.jet(np.asarray(x, dtype=float), 2)
    m = metric(jet)
    ricci, scalar = ricci_scalar(m, riemann_gauss(jet))
    return schouten(m, ricci, scalar, jet.n)


def schouten_partials_analytic(jet: SurfaceJet) -> np.ndarray:
    """dS[p,i,k] = d S_ik / d x_p by exact chain rule through b, g, g^{-1},
    the Gauss-equation Riemann tensor, Ricci and the scalar curvature.
    Requires third partials of r."""
    if jet.order != 3:
        raise ValueError("analytic Schouten partials require an order-3 jet")
    n = jet.n
    grad, hess, third, b = jet.grad, jet.hess, jet.third, jet.b
    m = metric(jet)
    riem = riemann_gauss(jet)
    ricci, scalar = ricci_scalar(m, riem)

    db = 2.0 * (hess @ grad)
    dg = _metric_partials(jet)
    dginv = np.einsum("p,i,k->pik", db, grad, grad) / b**2 - dg / b
    core = np.einsum("il,jk->ijkl", hess, hess) - np.einsum("ik,jl->ijkl", hess, hess)
    dcore = (
        np.einsum("ilp,jk->pijkl", third, hess)
        + np.einsum("il,jkp->pijkl", hess, third)
        - np.einsum("ikp,jl->pijkl", third, hess)
        - np.einsum("ik,jlp->pijkl", hess, third)
    )
    driem = -np.einsum("p,ijkl->pijkl", db, core) / b**2 + dcore / b
    dricci = np.einsum("pmn,minj->pij", dginv, riem) + np.einsum(
        "mn,pminj->pij", m.ginv, driem
    )
    dscalar = np.einsum("pij,ij->p", dginv, ricci) + np.einsum(
        "ij,pij->p", m.ginv, dricci
    )
    return (
        dricci
        - (np.einsum("p,ik->pik", dscalar, m.g) + scalar * dg) / (2.0 * (n - 1))
    ) / (n - 2)


def schouten_partials_fd(provider, x, step: float = COTTON_FD_STEP) -> np.ndarray:
    """dS[p,i,k] by central differences of the Schouten field with one
    Richardson extrapolation level (step halving)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    ds = np.empty((n, n, n))

    def central(j, h):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        return (schouten_field_at(provider, xp) - schouten_field_at(provider, xm)) / (
            2.0 * h
        )

    for j in range(n):
        h = step * (1.0 + abs(x[j]))
        ds[j] = (4.0 * central(j, h / 2.0) - central(j, h)) / 3.0
    return ds


def _cotton_from_parts(ds, s, gamma):
    """Assemble C_ijk = nabla_j S_ik - nabla_k S_ij with
    nabla_j S_ik = dS_ik/dx_j - S_mk gamma^m_ij - S_im gamma^m_kj."""
    nab = (
        np.einsum("jik->ikj", ds)
        - np.einsum("mk,mij->ikj", s, gamma)
        - np.einsum("im,mkj->ikj", s, gamma)
    )
    # nab[i,k,j] = nabla_j S_ik
    return np.einsum("ikj->ijk", nab) - nab


def _cotton_with_scale(jet, provider, mode):
    m = metric(jet)
    gamma = christoffel(jet, m)
    ricci, scalar = ricci_scalar(m, riemann_gauss(jet))
    s = schouten(m, ricci, scalar, jet.n)
    if mode == "analytic":
        ds = schouten_partials_analytic(jet)
    elif mode == "fd":
        ds = schouten_partials_fd(provider, jet.x)
    else:
        raise ValueError(f"unknown Cotton mode {mode!r}")
    c = _cotton_from_parts(ds, s, gamma)
    scale = 1.0 + np.abs(s).max() * np.abs(gamma).max() + np.abs(ds).max()
    return c, scale


def cotton(source, x, mode: str = "analytic") -> np.ndarray:
    """Cotton tensor C_ijk at x.

    source is a SurfaceSpec or any jet provider (an object with a
    .jet(x, order) method).  mode "analytic" differentiates the
    Schouten tensor by exact chain rule (order-3 jets required); mode
    "fd" differentiates the Schouten field numerically, which only
    needs order-2 jets on a stencil around x.
    """
    if isinstance(source, SurfaceSpec):
        provider = exact_or_fd_provider(source)
    else:
        provider = source
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise ValueError("Cotton tensor requires n >= 3")
    jet = provider.jet(x, 3 if mode == "analytic" else 2)
    c, _ = _cotton_with_scale(jet, provider, mode)
    return c


# ---------------------------------------------------------------------------
# Full per-point pack

@dataclass(frozen=True)
class CurvaturePack:
    """Every tensor computed at a single surface point."""

    jet: SurfaceJet
    metric: MetricData
    christoffel: np.ndarray
    h: np.ndarray
    shape: np.ndarray
    kappa: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: float
    schouten: np.ndarray
    weyl: Optional[np.ndarray]
    cotton: Optional[np.ndarray] = None
    cotton_scale: Optional[float] = None
    cotton_mode: Optional[str] = None

    @property
    def n(self) -> int:
        return self.jet.n


def pack_from_jet(
    jet: SurfaceJet,
    cotton_tensor: Optional[np.ndarray] = None,
    cotton_scale: Optional[float] = None,
    cotton_mode: Optional[str] = None,
) -> CurvaturePack:
    """Assemble the algebraic tensors of a point; the Weyl slot is None
    in dimension three (hard criterion split, see weyl())."""
    n = jet.n
    if n < 3:
        raise ValueError("curvature packs require n >= 3")
    m = metric(jet)
    gamma = christoffel(jet, m)
    h = second_fundamental(jet)
    shape = shape_operator(m, h)
    kappa = principal_curvatures(m, h)
    riem = riemann_gauss(jet)
    ricci, scalar = ricci_scalar(m, riem)
    s = schouten(m, ricci, scalar, n)
    w = weyl(m, riem, ricci, scalar, n) if n >= 4 else None
    return CurvaturePack(
        jet=jet,
        metric=m,
        christoffel=gamma,
        h=h,
        shape=shape,
        kappa=kappa,
        riemann=riem,
        ricci=ricci,
        scalar=scalar,
        schouten=s,
        weyl=w,
        cotton=cotton_tensor,
        cotton_scale=cotton_scale,
        cotton_mode=cotton_mode,
    )


class SurfaceAnalyzer:
    """Per-point tensor pipeline for one surface.

    mode "analytic" uses exact jets and chain-rule Cotton partials;
    mode "fd" switches the jets to finite differences and the Cotton
    partials to Schouten-field differencing.  The Schouten field itself
    is always evaluated with the most accurate provider the surface
    kind admits, so the fd mode stresses the differencing scheme rather
    than compounding two stencil errors.
    """

    def __init__(self, spec: SurfaceSpec, mode: str = "analytic"):
        if mode not in ("analytic", "fd"):
            raise ValueError(f"unknown mode {mode!r}")
        from .jets import jet_provider  # local import keeps module init cheap

        self.spec = spec
        self.mode = mode
        self.provider = jet_provider(spec, mode)
        self._field_provider = None

    def _field(self):
        if self._field_provider is None:
            self._field_provider = exact_or_fd_provider(self.spec)
        return self._field_provider

    def pack(self, x, with_cotton: Optional[bool] = None) -> CurvaturePack:
        n = self.spec.n
        if with_cotton is None:
            with_cotton = n == 3
        order = 3 if (with_cotton and self.mode == "analytic") else 2
        jet = self.provider.jet(np.asarray(x, dtype=float), order)
        c = scale = None
        if with_cotton:
            field = self.provider if self.mode == "analytic" else self._field()
            c, scale = _cotton_with_scale(jet, field, self.mode)
        return pack_from_jet(
            jet,
            cotton_tensor=c,
            cotton_scale=scale,
            cotton_mode=self.mode if with_cotton else None,
        )


# ---------------------------------------------------------------------------
# Structural invariants

_WEYL_TRACES = (
    ("ij,ijkl->kl", "weyl_trace_12"),
    ("ik,ijkl->jl", "weyl_trace_13"),
    ("il,ijkl->jk", "weyl_trace_14"),
    ("jk,ijkl->il", "weyl_trace_23"),
    ("jl,ijkl->ik", "weyl_trace_24"),
    ("kl,ijkl->ij", "weyl_trace_34"),
)


def verify_pack(pack: CurvaturePack, tol: float = 1e-11) -> dict:
    """Assert the structural identities of every tensor in the pack.

    Residuals are compared against tol * (1 + max |tensor|).  The
    Cotton trace identity is differential (it rests on the contracted
    Bianchi identity), so for finite-difference Cotton data it is only
    checked at the accuracy of the stencil.  Returns the residuals;
    raises InvariantViolation on the first failure.
    """
    residuals = {}
    checks = []
    riem = pack.riemann
    ginv = pack.metric.ginv
    scale_r = 1.0 + np.abs(riem).max()
    checks += [
        ("riemann_antisym_12", np.abs(riem + np.einsum("jikl->ijkl", riem)).max(), tol * scale_r),
        ("riemann_antisym_34", np.abs(riem + np.einsum("ijlk->ijkl", riem)).max(), tol * scale_r),
        ("riemann_pair_sym", np.abs(riem - np.einsum("klij->ijkl", riem)).max(), tol * scale_r),
        (
            "riemann_bianchi",
            np.abs(
                riem + np.einsum("iklj->ijkl", riem) + np.einsum("iljk->ijkl", riem)
            ).max(),
            tol * scale_r,
        ),
    ]
    if pack.weyl is not None:
        scale_w = 1.0 + np.abs(pack.weyl).max()
        for spec_str, name in _WEYL_TRACES:
            checks.append(
                (name, np.abs(np.einsum(spec_str, ginv, pack.weyl)).max(), tol * scale_w)
            )
    if pack.cotton is not None:
        c = pack.cotton
        scale_c = 1.0 + np.abs(c).max()
        checks.append(
            ("cotton_antisym", np.abs(c + np.einsum("ikj->ijk", c)).max(), tol * scale_c)
        )
        trace_tol = tol if pack.cotton_mode == "analytic" else max(tol, 1e-6)
        checks.append(
            (
                "cotton_trace",
                np.abs(np.einsum("ik,ijk->j", ginv, c)).max(),
                trace_tol * scale_c,
            )
        )
    for name, value, threshold in checks:
        residuals[name] = float(value)
        if value > threshold:
            raise InvariantViolation(
                f"{name}: residual {value:.3e} exceeds {threshold:.3e}"
            )
    return residuals
