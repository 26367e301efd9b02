"""Reference bases, quadrature rules and the global trace-space DOF map.

Trace basis: Legendre polynomials P_0..P_k per mesh edge, parameterized by the
edge's global arclength coordinate t in [-1,1] (smaller vertex index -> larger),
so both elements sharing an edge see identical basis functions.  Interior
scalar basis: monomials orthonormalized on the reference triangle.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.linalg import cholesky, solve_triangular
from scipy.special import roots_jacobi

from .mesh import BOUNDARY, INTERFACE, InvalidConfigError

_MAX_EXACTNESS = 60


class UnsupportedError(ValueError):
    """Requested quadrature exactness beyond the implemented range."""


class QuadRule:
    """Quadrature rule on the reference triangle or reference edge.

    Attributes
    ----------
    kind : "triangle" or "edge"
    points : (nq, 2) on the unit triangle (0,0),(1,0),(0,1), or (nq,) on [-1,1]
    weights : (nq,) summing to the reference measure (1/2 resp. 2)
    exactness : largest total polynomial degree integrated exactly
    """

    def __init__(self, kind, points, weights, exactness):
        self.kind = kind
        self.points = points
        self.weights = weights
        self.exactness = exactness


def quadrature_rule(kind, exactness):
    """Gauss rules: tensor Gauss-Legendre/Jacobi (triangle), Gauss-Legendre (edge)."""
    if exactness < 0:
        raise InvalidConfigError("exactness must be >= 0")
    if exactness > _MAX_EXACTNESS:
        raise UnsupportedError("exactness %d beyond supported %d" % (exactness, _MAX_EXACTNESS))
    n = (exactness + 2) // 2  # ceil((d+1)/2) Gauss points per direction
    if kind == "edge":
        x, w = leggauss(n)
        return QuadRule("edge", x, w, 2 * n - 1)
    if kind == "triangle":
        # conical product: x = u(1-v), y = v with Jacobi weight (1-v) in v
        u, wu = leggauss(n)
        u = 0.5 * (u + 1.0)
        vj, wj = roots_jacobi(n, 1.0, 0.0)
        v = 0.5 * (vj + 1.0)
        U, V = np.meshgrid(u, v, indexing="ij")
        pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
        wts = (np.outer(wu, wj) / 8.0).ravel()
        return QuadRule("triangle", pts, wts, 2 * n - 1)
    raise InvalidConfigError("unknown quadrature kind %r" % (kind,))


class EdgeBasis:
    """Legendre basis P_0..P_k on the reference edge [-1,1]."""

    def __init__(self, k):
        self.k = k

    def eval(self, t):
        """Values, shape (k+1, len(t))."""
        return legvander(np.asarray(t, dtype=float), self.k).T

    def mass_diagonal(self):
        """Diagonal of the reference mass matrix, 2/(2n+1)."""
        return 2.0 / (2.0 * np.arange(self.k + 1) + 1.0)


class TriBasis:
    """Monomial basis of P_k orthonormalized on the reference triangle."""

    def __init__(self, k):
        self.k = k
        self.exps = [(a, b) for tot in range(k + 1) for a in range(tot, -1, -1)
                     for b in [tot - a]]
        self.dim = len(self.exps)
        rule = quadrature_rule("triangle", 2 * k)
        M = self._monomials(rule.points)
        G = (M * rule.weights) @ M.T
        self._L = cholesky(G, lower=True)
        self.monomial_cond = np.linalg.cond(G)
        # Gram matrix of the orthonormalized basis (identity up to roundoff)
        check = quadrature_rule("triangle", 2 * k + 2)
        V = self.eval(check.points)
        self.gram_cond = np.linalg.cond((V * check.weights) @ V.T)

    def _monomials(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.array([x ** a * y ** b for a, b in self.exps])

    def eval(self, pts):
        """Orthonormal basis values, shape (dim, npts)."""
        return solve_triangular(self._L, self._monomials(pts), lower=True)

    def grad(self, pts):
        """Reference gradients, shape (dim, npts, 2)."""
        x, y = pts[:, 0], pts[:, 1]
        gx = np.array([a * x ** max(a - 1, 0) * y ** b if a else np.zeros_like(x)
                       for a, b in self.exps])
        gy = np.array([b * x ** a * y ** max(b - 1, 0) if b else np.zeros_like(x)
                       for a, b in self.exps])
        g = np.stack([gx, gy], axis=-1)
        return solve_triangular(self._L, g.reshape(self.dim, -1),
                                lower=True).reshape(self.dim, -1, 2)


class TraceDofMap:
    """Numbering of the trace space Lambda = Lambda_I (+) Lambda_Gamma.

    DOF layout: subdomain-interior DOFs grouped per subdomain (ascending
    subdomain index, edge-index order within), then interface DOFs as one
    contiguous block per SubdomainEdge (run order along the tangent).
    Boundary edges carry no DOFs.

    Attributes
    ----------
    k : trace degree
    n_dofs, n_interior, n_interface : sizes
    edge_dofs : (n_edges, k+1) global DOF ids, -1 on boundary edges
    owner : (n_dofs,) owning subdomain for interior DOFs, -1 for interface
    interior_by_sub : list of int arrays, per-subdomain interior DOF ids
    se_blocks : list of (start, stop) global DOF ranges per SubdomainEdge
    sub_se : list of SubdomainEdge-index lists touching each subdomain
    sub_interface_gids : per-subdomain global ids of its interface DOFs
    sub_interface_pos : same, as positions within Lambda_Gamma (0-based)
    """

    def __init__(self, mesh, k):
        if k not in (0, 1, 2):
            raise InvalidConfigError("trace degree k must be in {0,1,2}")
        self.k = k
        nds = k + 1
        ne = mesh.n_edges
        nsub = mesh.n_subdomains
        self.edge_dofs = np.full((ne, nds), -1, dtype=np.int64)

        interior_edges_by_sub = [[] for _ in range(nsub)]
        free = (mesh.edge_class != BOUNDARY)
        inter = (mesh.edge_class != INTERFACE) & free
        for e in np.where(inter)[0]:
            interior_edges_by_sub[mesh.tri_sub[mesh.edge_tris[e, 0]]].append(e)

        nxt = 0
        self.interior_by_sub = []
        owner = []
        for s in range(nsub):
            ids = []
            for e in interior_edges_by_sub[s]:
                self.edge_dofs[e] = np.arange(nxt, nxt + nds)
                ids.extend(range(nxt, nxt + nds))
                nxt += nds
            self.interior_by_sub.append(np.array(ids, dtype=np.int64))
            owner.extend([s] * len(ids))
        self.n_interior = nxt

        self.se_blocks = []
        for se in mesh.subdomain_edges:
            start = nxt
            for e in se.edges:
                self.edge_dofs[e] = np.arange(nxt, nxt + nds)
                nxt += nds
            self.se_blocks.append((start, nxt))
            owner.extend([-1] * (nxt - start))
        self.n_dofs = nxt
        self.n_interface = nxt - self.n_interior
        self.owner = np.array(owner, dtype=np.int64)

        self.sub_se = [[] for _ in range(nsub)]
        for i, se in enumerate(mesh.subdomain_edges):
            self.sub_se[se.pair[0]].append(i)
            self.sub_se[se.pair[1]].append(i)
        self.sub_interface_gids = []
        self.sub_interface_pos = []
        for s in range(nsub):
            gids = np.concatenate(
                [np.arange(*self.se_blocks[i]) for i in self.sub_se[s]]
            ) if self.sub_se[s] else np.zeros(0, dtype=np.int64)
            self.sub_interface_gids.append(gids)
            self.sub_interface_pos.append(gids - self.n_interior)


def build_trace_dof_map(mesh, k):
    """Build the TraceDofMap for degree-k traces on ``mesh``."""
    return TraceDofMap(mesh, k)


def edge_geometry(mesh, edge):
    """(v_lo, v_hi, length, midpoint) of an edge in global orientation."""
    a, b = mesh.edges[edge]
    va, vb = mesh.vertices[a], mesh.vertices[b]
    return va, vb, float(np.hypot(*(vb - va))), 0.5 * (va + vb)


def edge_points(mesh, edge, t):
    """Physical points on ``edge`` at reference parameters t in [-1,1]."""
    va, vb, _, mid = edge_geometry(mesh, edge)
    t = np.asarray(t, dtype=float)
    return mid[None, :] + 0.5 * np.outer(t, vb - va)


def project_boundary_data(mesh, g, edge, k, rule=None):
    """L2 projection of g onto P_k of a boundary edge, in the Legendre basis.

    Exact when g restricted to the edge is a P_k polynomial.
    """
    if mesh.edge_class[edge] != BOUNDARY:
        raise InvalidConfigError("edge %d is not on the domain boundary" % edge)
    if rule is None:
        rule = quadrature_rule("edge", 2 * k + 4)
    X = edge_points(mesh, edge, rule.points)
    gv = np.asarray(g(X[:, 0], X[:, 1]), dtype=float)
    P = legvander(rule.points, k).T
    # c_m = (2m+1)/2 * int_{-1}^{1} g(x(t)) P_m(t) dt
    return (P * rule.weights) @ gv * (2.0 * np.arange(k + 1) + 1.0) / 2.0
