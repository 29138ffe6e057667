"""Local conformal-flatness verdicts over sampled surface domains.

Two pointwise criteria are implemented: vanishing of the Weyl tensor
(n >= 4) or the Cotton tensor (n = 3), and the coincidence of n-1
principal curvatures (valid for n >= 4 only).  A scan samples the
domain, classifies every point, and aggregates: "flat" when every
evaluated point passes, "not-flat" when at least one point fails with
a 10x margin over the tolerance, "inconclusive" otherwise.  The margin
keeps verdicts from riding the tolerance edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvature import CurvaturePack, SurfaceAnalyzer, verify_pack
from .jets import DomainError, SurfaceJet, SurfaceSpec, inside
from . import expr as xp

__all__ = [
    "ScanError",
    "PointVerdict",
    "PointResult",
    "FlatnessReport",
    "RandomSampler",
    "GridSampler",
    "classify_point",
    "pc_criterion",
    "grid_scan",
    "ellipsoid_charpoly",
    "ellipsoid_charpoly_roots",
    "ellipsoid_kappa_from_charpoly",
    "DEFAULT_TOL_ANALYTIC",
    "DEFAULT_TOL_FD",
    "CRITERIA",
]

DEFAULT_TOL_ANALYTIC = 1e-8
DEFAULT_TOL_FD = 1e-4
CRITERIA = ("weyl", "cotton", "pc")


class ScanError(RuntimeError):
    """A scan could not produce a verdict (e.g. zero evaluable points)."""


@dataclass(frozen=True)
class PointVerdict:
    """Outcome of one pointwise test: witness norm vs. threshold."""

    witness: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class PointResult:
    x: np.ndarray
    verdict: PointVerdict


@dataclass(frozen=True)
class FlatnessReport:
    surface: str
    n: int
    criterion: str
    tol: float
    mode: str
    points: tuple
    aggregate: str
    skipped: int


def classify_point(pack: CurvaturePack, tol: float) -> PointVerdict:
    """Tensor-vanishing test: max |Weyl| for n >= 4, max |Cotton| for n = 3.

    Thresholds are relative: the Weyl witness is measured against
    1 + max |Riemann|, the Cotton witness against the scale of the
    covariant-derivative data it was assembled from.
    """
    n = pack.n
    if n >= 4:
        if pack.weyl is None:
            raise ValueError("pack lacks the Weyl tensor required for n >= 4")
        witness = float(np.abs(pack.weyl).max())
        threshold = tol * (1.0 + float(np.abs(pack.riemann).max()))
    else:
        if pack.cotton is None:
            raise ValueError("pack lacks the Cotton tensor required for n = 3")
        witness = float(np.abs(pack.cotton).max())
        threshold = tol * max(1.0, float(pack.cotton_scale))
    return PointVerdict(witness, threshold, witness <= threshold)


def pc_criterion(kappa, tol: float) -> PointVerdict:
    """Principal-curvature coincidence test (n >= 4 only).

    n-1 coinciding values are contiguous once sorted, so it suffices to
    compare the spreads of kappa[1:] and kappa[:-1].
    """
    kappa = np.sort(np.asarray(kappa, dtype=float))
    n = kappa.size
    if n <= 3:
        raise ValueError("the principal-curvature criterion requires n >= 4")
    spread_tail = float(kappa[-1] - kappa[1])
    spread_head = float(kappa[-2] - kappa[0])
    witness = min(spread_tail, spread_head)
    threshold = tol * (1.0 + float(np.abs(kappa).max()))
    return PointVerdict(witness, threshold, witness <= threshold)


# ---------------------------------------------------------------------------
# Samplers

@dataclass(frozen=True)
class RandomSampler:
    """Uniform draws from the domain box, rejecting constraint violations.

    A fixed 64-bit seeded generator makes scans reproducible; rejected
    draws are reported in the skip count.
    """

    count: int
    seed: int

    def points(self, spec: SurfaceSpec):
        rng = np.random.default_rng(np.uint64(self.seed))
        lo, hi = spec.domain[:, 0], spec.domain[:, 1]
        accepted, rejected = [], 0
        attempts = 0
        limit = max(10000, 10000 * self.count)
        while len(accepted) < self.count:
            attempts += 1
            if attempts > limit:
                raise ScanError(
                    f"sampling failed: {rejected} rejections for {len(accepted)} accepted points"
                )
            x = rng.uniform(lo, hi)
            if inside(spec, x):
                accepted.append(x)
            else:
                rejected += 1
        return accepted, rejected


@dataclass(frozen=True)
class GridSampler:
    """Cell-centered per-axis grid; nodes violating constraints are skipped."""

    per_axis: tuple

    def points(self, spec: SurfaceSpec):
        counts = tuple(int(k) for k in self.per_axis)
        if len(counts) != spec.n or any(k < 1 for k in counts):
            raise ValueError("grid sampler needs one positive count per axis")
        axes = []
        for (lo, hi), k in zip(spec.domain, counts):
            width = (hi - lo) / k
            axes.append(lo + width * (np.arange(k) + 0.5))
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        accepted = [x for x in nodes if inside(spec, x)]
        return accepted, len(nodes) - len(accepted)


def _default_criterion(n: int) -> str:
    return "cotton" if n == 3 else "weyl"


def grid_scan(
    spec: SurfaceSpec,
    sampler,
    criterion: Optional[str] = None,
    tol: Optional[float] = None,
    mode: str = "analytic",
    invariant_tol: float = 1e-11,
) -> FlatnessReport:
    """Classify every sampled point of the surface and aggregate.

    Structural tensor identities are verified at every evaluated point;
    a violation aborts the scan (it signals a tool failure, not a
    property of the surface).
    """
    n = spec.n
    if n < 3:
        raise ValueError("flatness classification requires n >= 3")
    if criterion is None:
        criterion = _default_criterion(n)
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    if criterion == "cotton" and n != 3:
        raise ValueError("the Cotton criterion applies to n = 3 only")
    if criterion in ("weyl", "pc") and n < 4:
        raise ValueError(f"the {criterion} criterion requires n >= 4")
    if tol is None:
        tol = DEFAULT_TOL_FD if mode == "fd" else DEFAULT_TOL_ANALYTIC

    analyzer = SurfaceAnalyzer(spec, mode)
    sample, skipped = sampler.points(spec)
    results = []
    for x in sample:
        try:
            pack = analyzer.pack(x, with_cotton=(criterion == "cotton"))
        except (DomainError, xp.EvalDomainError):
            skipped += 1
            continue
        verify_pack(pack, invariant_tol)
        if criterion == "pc":
            verdict = pc_criterion(pack.kappa, tol)
        else:
            verdict = classify_point(pack, tol)
        results.append(PointResult(x=np.asarray(x, dtype=float), verdict=verdict))
    if not results:
        raise ScanError("zero evaluable points in the scan domain")

    if all(r.verdict.passed for r in results):
        aggregate = "flat"
    elif any(
        not r.verdict.passed and r.verdict.witness >= 10.0 * r.verdict.threshold
        for r in results
    ):
        aggregate = "not-flat"
    else:
        aggregate = "inconclusive"
    return FlatnessReport(
        surface=spec.name,
        n=n,
        criterion=criterion,
        tol=float(tol),
        mode=mode,
        points=tuple(results),
        aggregate=aggregate,
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Ellipsoid characteristic polynomial (rank-one update identity)

def _check_ellipsoid_coeffs(a):
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0.0) or np.any(a == 1.0):
        raise ValueError("ellipsoid coefficients must satisfy 0 < a_i != 1")
    return a


def ellipsoid_charpoly(jet: SurfaceJet, a, lam: float) -> float:
    """det(B - lam*I) for B = diag(1/(a_i-1)) + (r_i r_j / (a_i-1)),
    evaluated through the rank-one determinant identity:
    prod(1/(a_i-1) - lam) * (1 + sum r_i^2 / (1 - (a_i-1) lam)).

    The shape operator of the ellipsoid graph is q*I + q*B^{-1} with
    q = -1/(sqrt(b) r), so the roots of this polynomial give the
    principal curvatures through kappa = q (1 + 1/mu) — an eigenvalue
    route entirely independent of the whitened eigensolver.
    """
    a = _check_ellipsoid_coeffs(a)
    c = 1.0 / (a - 1.0)
    denominators = 1.0 - (a - 1.0) * lam
    if np.any(denominators == 0.0):
        raise ValueError("lambda coincides with a pole 1/(a_i - 1)")
    r2 = jet.grad**2
    return float(np.prod(c - lam) * (1.0 + np.sum(r2 / denominators)))


def _poly_from_linear_factors(cs):
    """Coefficients (highest degree first) of prod (c - lam)."""
    p = np.array([1.0])
    for c in cs:
        p = np.polymul(p, np.array([-1.0, c]))
    return p


def ellipsoid_charpoly_roots(jet: SurfaceJet, a) -> np.ndarray:
    """All n roots of det(B - lam*I), ascending.

    Repeated coefficients are handled exactly: a group of m equal
    values 1/(a_i-1) with nonzero gradient weight contributes the value
    itself with multiplicity m-1, and the remaining simple roots come
    from the deflated polynomial, so no multiple-root extraction is
    ever required of the numerical root finder.
    """
    a = _check_ellipsoid_coeffs(a)
    c = 1.0 / (a - 1.0)
    r2 = jet.grad**2
    groups = {}
    for ci, wi in zip(c, r2):
        groups.setdefault(float(ci), []).append(float(wi))
    fixed = []
    active_c, weights = [], []
    for cv, ws in groups.items():
        w = cv * sum(ws)
        if w == 0.0:
            fixed.extend([cv] * len(ws))
        else:
            fixed.extend([cv] * (len(ws) - 1))
            active_c.append(cv)
            weights.append(w)
    roots = list(fixed)
    if active_c:
        poly = _poly_from_linear_factors(active_c)
        for g, w in enumerate(weights):
            others = active_c[:g] + active_c[g + 1 :]
            poly = np.polyadd(poly, w * _poly_from_linear_factors(others))
        found = np.roots(poly)
        if np.abs(found.imag).max() > 1e-8 * (1.0 + np.abs(found.real).max()):
            raise ArithmeticError("characteristic polynomial produced complex roots")
        roots.extend(found.real.tolist())
    return np.sort(np.array(roots))


def ellipsoid_kappa_from_charpoly(jet: SurfaceJet, a) -> np.ndarray:
    """Principal curvatures via the characteristic-polynomial route."""
    mus = ellipsoid_charpoly_roots(jet, a)
    q = -1.0 / (np.sqrt(jet.b) * jet.r)
    return np.sort(q * (1.0 + 1.0 / mus))
