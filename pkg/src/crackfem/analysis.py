"""Exact solutions, error norms, convergence rates, junction flux balance."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cracks import SegmentedCrack
from .assembly import Coefficients, _all_gradients

# degree-2 exact rule: edge midpoints, equal weights
_TRI_MID_BARY = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)
_TRI_MID_W = np.array([1.0, 1.0, 1.0]) / 3.0

# degree-5 exact 7-point rule
_S15 = np.sqrt(15.0)
_A1 = (6.0 - _S15) / 21.0
_A2 = (6.0 + _S15) / 21.0
_TRI7_BARY = np.array(
    [[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]
    + [np.roll([1.0 - 2.0 * _A1, _A1, _A1], i).tolist() for i in range(3)]
    + [np.roll([1.0 - 2.0 * _A2, _A2, _A2], i).tolist() for i in range(3)]
)
_TRI7_W = np.concatenate(
    [[9.0 / 40.0], np.full(3, (155.0 - _S15) / 1200.0), np.full(3, (155.0 + _S15) / 1200.0)]
)

# Gauss rules on [0, 1]
_GAUSS2_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS2_W = np.array([0.5, 0.5])
_G4 = np.array([0.3399810435848563, 0.8611363115940526])
_GAUSS4_T = 0.5 + 0.5 * np.array([-_G4[1], -_G4[0], _G4[0], _G4[1]])
_GAUSS4_W = 0.5 * np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


class ExactRadialSolution:
    """Closed-form radial field with a conducting circular interface.

    Two logarithmic branches meet on the circle r = e centered at the
    origin: inside, u = log(r) (4 + e) / 5; outside,
    u = (4 - 4e) / 5 (log(r) - 5/4) + 1. The field is continuous across the
    circle, equals 0 at r = 1 and 1 at r = exp(5/4), and its radial flux
    drops by exactly 1 across the interface, balancing a unit line source
    there. The natural domain is the square (1, exp(5/4))^2, which the
    circle crosses as a single arc.
    """

    def __init__(self):
        self.interface_radius = float(np.e)
        self.outer_radius = float(np.exp(1.25))
        self.inner_radius = 1.0
        e = self.interface_radius
        self._c1 = (4.0 + e) / 5.0
        self._c2 = (4.0 - 4.0 * e) / 5.0
        self.interface_value = self._c1
        self.domain = (1.0, self.outer_radius, 1.0, self.outer_radius)
        self.crack_center = (0.0, 0.0)
        self.crack_angles = (float(np.arcsin(1.0 / e)), float(np.arccos(1.0 / e)))

    def _radius(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.hypot(pts[:, 0], pts[:, 1]), pts

    def value_inner(self, r):
        return self._c1 * np.log(r)

    def value_outer(self, r):
        return self._c2 * (np.log(r) - 1.25) + 1.0

    def value(self, points) -> np.ndarray:
        r, _ = self._radius(points)
        return np.where(
            r <= self.interface_radius, self.value_inner(r), self.value_outer(r)
        )

    def gradient(self, points) -> np.ndarray:
        r, pts = self._radius(points)
        c = np.where(r <= self.interface_radius, self._c1, self._c2)
        return (c / r**2)[:, None] * pts

    def gradient_inner(self, points) -> np.ndarray:
        r, pts = self._radius(points)
        return (self._c1 / r**2)[:, None] * pts

    def gradient_outer(self, points) -> np.ndarray:
        r, pts = self._radius(points)
        return (self._c2 / r**2)[:, None] * pts

    def radial_flux_jump(self, angles) -> np.ndarray:
        """Jump of the radial flux across the circle at the given angles:
        the outer one-sided limit of du/dr minus the inner one (unit bulk
        permeability). Equals -1, so a unit interface source balances it."""
        angles = np.asarray(angles, dtype=float)
        e = self.interface_radius
        return np.full(angles.shape, (self._c2 - self._c1) / e)


class SineProductSolution:
    """u = sin(pi x) sin(pi y), the classical clean-convergence baseline."""

    def value(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])

    def gradient(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        sx, cx = np.sin(np.pi * pts[:, 0]), np.cos(np.pi * pts[:, 0])
        sy, cy = np.sin(np.pi * pts[:, 1]), np.cos(np.pi * pts[:, 1])
        return np.pi * np.column_stack([cx * sy, sx * cy])

    def load(self, x, y):
        return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass
class NormReport:
    """Error norms of one discrete solution against an exact field."""

    level: int
    h: float
    h_crack: float
    n_dofs: int
    l2: float
    h1_semi: float
    l2_crack: float
    energy: float

    CSV_HEADER = "level,h,h_crack,n_dofs,l2,h1_semi,l2_crack,energy"

    def as_csv_row(self) -> str:
        return (
            f"{self.level},{self.h!r},{self.h_crack!r},{self.n_dofs},"
            f"{self.l2!r},{self.h1_semi!r},{self.l2_crack!r},{self.energy!r}"
        )

    def with_level(self, level: int) -> "NormReport":
        return replace(self, level=level)


def _bulk_rule(quadrature: str):
    if quadrature == "standard":
        return _TRI_MID_BARY, _TRI_MID_W
    if quadrature == "fine":
        return _TRI7_BARY, _TRI7_W
    raise ValueError(f"unknown quadrature {quadrature!r}")


def _segment_rule(quadrature: str):
    if quadrature == "standard":
        return _GAUSS2_T, _GAUSS2_W
    return _GAUSS4_T, _GAUSS4_W


def error_norms(
    solution,
    exact,
    crack: SegmentedCrack | None = None,
    coeffs: Coefficients | None = None,
    quadrature: str = "standard",
    level: int = 0,
) -> NormReport:
    """L2, H1-seminorm, interface L2 and energy error of a discrete field.

    The bulk rule is exact for quadratics (edge midpoints); segments use
    two-point Gauss. ``quadrature="fine"`` switches to a degree-5 bulk rule
    and four-point Gauss for quadrature sensitivity checks. Straddling
    elements are not subdivided; the exact field chooses its branch per
    quadrature point.
    """
    mesh = solution.mesh
    if coeffs is None:
        coeffs = Coefficients()
    bary, bw = _bulk_rule(quadrature)
    coords = mesh.vertices[mesh.triangles]  # (m, 3, 2)
    area = mesh.triangle_areas()
    pts = np.einsum("qi,mid->mqd", bary, coords)  # (m, q, 2)
    uh = np.einsum("qi,mi->mq", bary, solution.values[mesh.triangles])
    uex = exact.value(pts.reshape(-1, 2)).reshape(uh.shape)
    diff2 = (uh - uex) ** 2
    l2_sq = float(np.einsum("mq,q,m->", diff2, bw, area))

    gh = solution.gradients()  # (m, 2)
    gex = exact.gradient(pts.reshape(-1, 2)).reshape(pts.shape)
    gdiff = gh[:, None, :] - gex
    gdiff2 = np.einsum("mqd,mqd->mq", gdiff, gdiff)
    h1_sq = float(np.einsum("mq,q,m->", gdiff2, bw, area))
    a_elem = coeffs.element_permeability(coords.mean(axis=1))
    energy_sq = float(np.einsum("mq,q,m->", gdiff2, bw, area * a_elem))

    l2c_sq = 0.0
    h_crack = mesh.h_max
    if crack is not None and crack.n_segments:
        st, sw = _segment_rule(quadrature)
        a = crack.points[:, 0, :]
        d = crack.points[:, 1, :] - crack.points[:, 0, :]
        spts = a[:, None, :] + st[None, :, None] * d[:, None, :]
        own = crack.triangle_index
        grads, _ = _all_gradients(mesh)
        centroids = coords[own].mean(axis=1)
        phi = 1.0 / 3.0 + np.einsum(
            "sid,sqd->sqi", grads[own], spts - centroids[:, None, :]
        )
        uh_s = np.einsum("sqi,si->sq", phi, solution.values[mesh.triangles[own]])
        uex_s = exact.value(spts.reshape(-1, 2)).reshape(uh_s.shape)
        l2c_sq = float(
            np.einsum("sq,q,s->", (uh_s - uex_s) ** 2, sw, crack.length)
        )
        t = crack.tangents()
        gt_h = np.einsum("sd,sd->s", t, gh[own])
        gex_s = exact.gradient(spts.reshape(-1, 2)).reshape(spts.shape)
        gt_ex = np.einsum("sd,sqd->sq", t, gex_s)
        tdiff2 = (gt_h[:, None] - gt_ex) ** 2
        energy_sq += float(
            np.einsum("sq,q,s->", tdiff2, sw, crack.length * crack.permeability())
        )
        h_crack = float(mesh.triangle_diameters()[crack.crossed_triangles()].max())

    return NormReport(
        level=level,
        h=mesh.h_max,
        h_crack=h_crack,
        n_dofs=mesh.n_vertices,
        l2=float(np.sqrt(l2_sq)),
        h1_semi=float(np.sqrt(h1_sq)),
        l2_crack=float(np.sqrt(l2c_sq)),
        energy=float(np.sqrt(energy_sq)),
    )


def eoc(reports) -> dict:
    """Least-squares convergence slopes of each norm against h.

    Needs at least three reports with strictly decreasing h. Norms that
    vanish somewhere get a nan slope.
    """
    if len(reports) < 3:
        raise ValueError("eoc needs at least three levels")
    h = np.array([r.h for r in reports])
    if not (np.diff(h) < 0.0).all():
        raise ValueError("mesh sizes must be strictly decreasing")
    logh = np.log(h)
    slopes = {}
    for name in ("l2", "h1_semi", "l2_crack", "energy"):
        err = np.array([getattr(r, name) for r in reports])
        if (err <= 0.0).any():
            slopes[name] = float("nan")
            continue
        slopes[name] = float(np.polyfit(logh, np.log(err), 1)[0])
    return slopes


def kirchhoff_residual(solution, crack: SegmentedCrack) -> np.ndarray:
    """Net tangential flux into each crack node, one magnitude per node.

    For every chain incident to a node, the flux permeability * du/dt of the
    chain's segment touching that node is taken along the exterior tangent
    (pointing out of the chain); their sum vanishes for the exact solution
    at interior junctions. Degenerate at degree-1 tips, where it simply
    reports the tip flux.
    """
    tang = solution.tangential_derivative(crack)
    out = np.zeros(len(crack.nodes))
    for j in range(crack.n_chains):
        segs = crack.segments_of_chain(j)
        if segs.size == 0:
            continue
        a = crack.chain_permeability[j]
        start_node, end_node = crack.chain_nodes[j]
        out[start_node] -= a * tang[segs[0]]
        out[end_node] += a * tang[segs[-1]]
    return np.abs(out)


def _subdivided_rule(levels: int):
    """Degree-5 rule replicated over a uniform 4^levels subdivision."""
    tris = [np.eye(3)]
    for _ in range(levels):
        finer = []
        for t in tris:
            m01 = 0.5 * (t[0] + t[1])
            m12 = 0.5 * (t[1] + t[2])
            m20 = 0.5 * (t[2] + t[0])
            finer.extend(
                [
                    np.array([t[0], m01, m20]),
                    np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]),
                    np.array([m01, m12, m20]),
                ]
            )
        tris = finer
    scale = 0.25**levels
    bary = np.vstack([_TRI7_BARY @ t for t in tris])
    w = np.tile(_TRI7_W * scale, len(tris))
    return bary, w


def continuous_gradient_integrals(
    mesh, exact, refine_triangles=None, levels: int = 4
) -> np.ndarray:
    """Per-triangle integral of the exact gradient, shape (m, 2).

    Triangles listed in ``refine_triangles`` (typically the ones the
    interface crosses, where the gradient has a kink) are integrated on a
    uniformly subdivided degree-5 rule; the rest use the plain rule.
    """
    coords = mesh.vertices[mesh.triangles]
    area = mesh.triangle_areas()
    out = np.zeros((mesh.n_triangles, 2))

    def accumulate(ids, bary, w):
        pts = np.einsum("qi,mid->mqd", bary, coords[ids])
        g = exact.gradient(pts.reshape(-1, 2)).reshape(pts.shape)
        out[ids] = np.einsum("mqd,q,m->md", g, w, area[ids])

    all_ids = np.arange(mesh.n_triangles)
    if refine_triangles is None or len(refine_triangles) == 0:
        accumulate(all_ids, _TRI7_BARY, _TRI7_W)
        return out
    refine_triangles = np.asarray(refine_triangles)
    plain = np.setdiff1d(all_ids, refine_triangles)
    accumulate(plain, _TRI7_BARY, _TRI7_W)
    bary, w = _subdivided_rule(levels)
    accumulate(refine_triangles, bary, w)
    return out


def continuous_tangential_integrals(crack: SegmentedCrack, exact) -> np.ndarray:
    """Per-segment integral of the exact tangential derivative, shape (s,)."""
    if crack.n_segments == 0:
        return np.empty(0)
    a = crack.points[:, 0, :]
    d = crack.points[:, 1, :] - crack.points[:, 0, :]
    spts = a[:, None, :] + _GAUSS4_T[None, :, None] * d[:, None, :]
    g = exact.gradient(spts.reshape(-1, 2)).reshape(spts.shape)
    t = crack.tangents()
    gt = np.einsum("sd,sqd->sq", t, g)
    return np.einsum("sq,q,s->s", gt, _GAUSS4_W, crack.length)


def continuous_form_apply(
    mesh, crack, coeffs, exact, vectors, refine_triangles=None, levels: int = 4
) -> np.ndarray:
    """A(u, v_h) for exact u and nodal test vectors, shape (k,).

    The bulk term reduces to a_T grad(v_h) . integral(grad u) because P1
    test gradients are constant per element; likewise on segments.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    grads, _ = _all_gradients(mesh)
    coords = mesh.vertices[mesh.triangles]
    a_elem = coeffs.element_permeability(coords.mean(axis=1))
    bulk_int = continuous_gradient_integrals(mesh, exact, refine_triangles, levels)
    gv = np.einsum("kti,tid->ktd", vectors[:, mesh.triangles], grads)
    total = np.einsum("ktd,td,t->k", gv, bulk_int, a_elem)
    if crack is not None and crack.n_segments:
        seg_int = continuous_tangential_integrals(crack, exact)
        own = crack.triangle_index
        t = crack.tangents()
        gt_v = np.einsum("ksd,sd->ks", gv[:, own, :], t)
        total += np.einsum("ks,s,s->k", gt_v, seg_int, crack.permeability())
    return total


def energy_by_expansion(solution, exact, crack, coeffs) -> float:
    """Energy error via A(u,u) - 2 A(u,u_h) + A(u_h,u_h) on the standard rule.

    Uses the same quadrature points as error_norms, with the discrete term
    evaluated exactly through the assembled operator identity
    A(u_h, u_h) = sum over elements and segments of constant integrands.
    """
    mesh = solution.mesh
    if coeffs is None:
        coeffs = Coefficients()
    coords = mesh.vertices[mesh.triangles]
    area = mesh.triangle_areas()
    a_elem = coeffs.element_permeability(coords.mean(axis=1))
    pts = np.einsum("qi,mid->mqd", _TRI_MID_BARY, coords)
    gex = exact.gradient(pts.reshape(-1, 2)).reshape(pts.shape)
    gh = solution.gradients()
    g2 = np.einsum("mqd,mqd->mq", gex, gex)
    cross = np.einsum("mqd,md->mq", gex, gh)
    hh = np.einsum("md,md->m", gh, gh)
    total = float(np.einsum("mq,q,m->", g2, _TRI_MID_W, area * a_elem))
    total -= 2.0 * float(np.einsum("mq,q,m->", cross, _TRI_MID_W, area * a_elem))
    total += float(hh @ (area * a_elem))
    if crack is not None and crack.n_segments:
        a = crack.points[:, 0, :]
        d = crack.points[:, 1, :] - crack.points[:, 0, :]
        spts = a[:, None, :] + _GAUSS2_T[None, :, None] * d[:, None, :]
        gex_s = exact.gradient(spts.reshape(-1, 2)).reshape(spts.shape)
        t = crack.tangents()
        gt_ex = np.einsum("sd,sqd->sq", t, gex_s)
        gt_h = np.einsum("sd,sd->s", t, gh[crack.triangle_index])
        wl = crack.length * crack.permeability()
        total += float(np.einsum("sq,q,s->", gt_ex**2, _GAUSS2_W, wl))
        total -= 2.0 * float(np.einsum("sq,q,s->", gt_ex * gt_h[:, None], _GAUSS2_W, wl))
        total += float((gt_h**2) @ wl)
    return float(np.sqrt(max(total, 0.0)))
