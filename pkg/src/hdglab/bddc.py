"""BDDC preconditioners for the interface operator.

Primal constraints live on SubdomainEdges (maximal straight interface runs):
  c1(w) = int_E w ds                  (edge average, variant >= 1)
  c2(w) = int_E (beta.n) w ds         (flux-weighted average, variant >= 2)
  c3(w) = int_E (beta.n) w s ds       (flux-weighted first moment, variant 3)
with n the outward normal of the lower-indexed subdomain and s the centered
arclength along the run.  Degenerate or near-dependent rows are dropped (e.g.
c2 and c3 vanish identically when beta.n = 0 on the whole run).

The retained rows are orthonormalized and completed to an orthogonal change of
basis Q_E per SubdomainEdge.  In the transformed variables the primal DOFs are
assembled across the interface while dual DOFs stay subdomain-local; the
preconditioner is M^-1 = Rt_D^T  St^-1  Rt_D realized by per-subdomain dual
solves plus one coarse solve.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import EdgeBasis, quadrature_rule
from .mesh import InvalidConfigError

VARIANTS = ("bddc1", "bddc2", "bddc3", "all-primal", "none")

_N_FUNCTIONALS = {"bddc1": 1, "bddc2": 2, "bddc3": 3}


class PreconditionerError(RuntimeError):
    """Preconditioner construction failed."""


def _variant_name(variant):
    if variant in (1, 2, 3):
        return "bddc%d" % variant
    if variant in VARIANTS:
        return variant
    raise InvalidConfigError("unknown BDDC variant %r" % (variant,))


def constraint_rows(mesh, se, spec, k):
    """Raw functional rows (c1, c2, c3) over one SubdomainEdge's DOF block."""
    nds = k + 1
    m = se.edges.size * nds
    rule = quadrature_rule("edge", 2 * k + 4)
    P = EdgeBasis(k).eval(rule.points)
    c1 = np.zeros(m)
    c2 = np.zeros(m)
    c3 = np.zeros(m)
    for j, e in enumerate(se.edges):
        va = mesh.vertices[mesh.edges[e, 0]]
        vb = mesh.vertices[mesh.edges[e, 1]]
        elen = float(np.hypot(*(vb - va)))
        X = va[None, :] + 0.5 * np.outer(rule.points + 1.0, vb - va)
        bx, by = spec.beta_at(X[:, 0], X[:, 1])
        bn = bx * se.normal[0] + by * se.normal[1]
        s = X @ se.tangent - se.midpoint_t
        we = rule.weights * (elen / 2.0)
        sl = slice(j * nds, (j + 1) * nds)
        c1[sl] = we @ P.T
        c2[sl] = (we * bn) @ P.T
        c3[sl] = (we * bn * s) @ P.T
    return c1, c2, c3


class PrimalConstraintSet:
    """Retained, orthonormalized constraint rows per SubdomainEdge."""

    def __init__(self, variant, spec, mesh, dofs, k):
        self.variant = _variant_name(variant)
        self.spec = spec
        self.mesh = mesh
        self.k = k
        self.rows = []        # per SE: (n_pi, m) orthonormal rows
        self.kept = []        # per SE: labels of the retained functionals
        nds = k + 1
        for se in mesh.subdomain_edges:
            m = se.edges.size * nds
            if self.variant == "all-primal":
                self.rows.append(np.eye(m))
                self.kept.append(["e%d" % i for i in range(m)])
                continue
            if self.variant == "none":
                self.rows.append(np.zeros((0, m)))
                self.kept.append([])
                continue
            raw = constraint_rows(mesh, se, spec, k)
            nfun = _N_FUNCTIONALS[self.variant]
            scale = np.linalg.norm(raw[0])
            kept_rows, kept_labels = [], []
            for label, r in zip(("c1", "c2", "c3"), raw[:nfun]):
                nr = np.linalg.norm(r)
                if nr < 1e-12 * scale:
                    continue
                v = r.copy()
                for q in kept_rows:
                    v -= (q @ v) * q
                if np.linalg.norm(v) < 1e-10 * nr:
                    continue
                for q in kept_rows:     # second pass restores orthogonality
                    v -= (q @ v) * q
                kept_rows.append(v / np.linalg.norm(v))
                kept_labels.append(label)
            self.rows.append(np.array(kept_rows).reshape(len(kept_rows), m))
            self.kept.append(kept_labels)
        self.n_primal_by_se = np.array([r.shape[0] for r in self.rows])
        self.primal_offsets = np.concatenate(
            [[0], np.cumsum(self.n_primal_by_se)])
        self.n_primal = int(self.primal_offsets[-1])


def build_constraints(variant, spec, mesh, dofs, k):
    """PrimalConstraintSet for all SubdomainEdges of the mesh."""
    return PrimalConstraintSet(variant, spec, mesh, dofs, k)


def _sign_normalize(v):
    for x in v:
        if abs(x) > 1e-12:
            return v if x > 0 else -v
    return v


class EdgeBasisTransform:
    """Orthogonal change of basis on one SubdomainEdge block."""

    def __init__(self, rows, m):
        self.n_primal = rows.shape[0]
        if self.n_primal == 0:
            self.Q = np.eye(m)
        elif self.n_primal == m:
            self.Q = rows.copy()
        else:
            null = sla.null_space(rows)
            dual = np.array([_sign_normalize(null[:, j])
                             for j in range(null.shape[1])])
            self.Q = np.vstack([rows, dual])
        if not np.allclose(self.Q @ self.Q.T, np.eye(m), atol=1e-12):
            raise PreconditionerError("change of basis is not orthogonal")

    @property
    def inverse(self):
        return self.Q.T


def change_of_basis(constraints, se_index):
    """EdgeBasisTransform of SubdomainEdge ``se_index``."""
    rows = constraints.rows[se_index]
    nds = constraints.k + 1
    m = constraints.mesh.subdomain_edges[se_index].edges.size * nds
    return EdgeBasisTransform(rows, m)


class BddcPreconditioner:
    """Two-level BDDC in the transformed interface variables.

    Partially assembled layout: [primal (n_primal); dual copies per subdomain
    in subdomain order].  Dual weights are 1/2 (every interface DOF is shared
    by exactly two subdomains); primal weight is 1.
    """

    def __init__(self, subs, iface, constraints, dofs):
        self.subs = subs
        self.iface = iface
        self.constraints = constraints
        self.dofs = dofs
        self.variant = constraints.variant
        mesh = constraints.mesh
        nds = constraints.k + 1
        n_ifc = dofs.n_interface
        n_se = len(mesh.subdomain_edges)

        self.transforms = [change_of_basis(constraints, i)
                           for i in range(n_se)]
        self.Qg = sp.block_diag([t.Q for t in self.transforms],
                                format="csr") if n_se else sp.eye(0).tocsr()

        # transformed-interface index bookkeeping
        self.n_primal = constraints.n_primal
        primal_pos = []      # interface positions of primal components
        is_primal = np.zeros(n_ifc, dtype=bool)
        se_start = np.array([dofs.se_blocks[i][0] - dofs.n_interior
                             for i in range(n_se)], dtype=np.int64)
        for i in range(n_se):
            nP = constraints.n_primal_by_se[i]
            primal_pos.extend(range(se_start[i], se_start[i] + nP))
            is_primal[se_start[i]:se_start[i] + nP] = True
        self.primal_pos = np.array(primal_pos, dtype=np.int64)
        self.is_primal = is_primal

        # per-subdomain transformed Schur blocks
        self.sub_data = []
        dual_off = 0
        coo_r, coo_c, coo_v = [], [], []
        for sub in self.subs:
            pos = sub.interface_pos
            Qi = self.Qg[pos][:, pos]       # block-diagonal over the sub's SEs
            St = Qi @ sub.dense_schur() @ Qi.T
            lp = np.where(is_primal[pos])[0]
            ld = np.where(~is_primal[pos])[0]
            gp = []
            for i_se in dofs.sub_se[sub.sidx]:
                nP = constraints.n_primal_by_se[i_se]
                gp.extend(range(constraints.primal_offsets[i_se],
                                constraints.primal_offsets[i_se] + nP))
            gp = np.array(gp, dtype=np.int64)
            Sdd = St[np.ix_(ld, ld)]
            Sdp = St[np.ix_(ld, lp)]
            Spd = St[np.ix_(lp, ld)]
            Spp = St[np.ix_(lp, lp)]
            if ld.size:
                try:
                    lu_dd = sla.lu_factor(Sdd)
                except (ValueError, sla.LinAlgError) as exc:
                    raise PreconditionerError(
                        "singular dual block in subdomain %d (variant %s, "
                        "eps %g)" % (sub.sidx, self.variant,
                                     constraints.spec.eps)) from exc
                if np.min(np.abs(np.diag(lu_dd[0]))) < \
                        1e-14 * max(np.abs(Sdd).max(), 1e-300):
                    raise PreconditionerError(
                        "singular dual block in subdomain %d (variant %s, "
                        "eps %g)" % (sub.sidx, self.variant,
                                     constraints.spec.eps))
                contrib = Spp - Spd @ sla.lu_solve(lu_dd, Sdp)
            else:
                lu_dd = None
                contrib = Spp
            rr, cc = np.meshgrid(gp, gp, indexing="ij")
            coo_r.append(rr.ravel())
            coo_c.append(cc.ravel())
            coo_v.append(contrib.ravel())
            self.sub_data.append(dict(
                pos=pos, lp=lp, ld=ld, gp=gp, lu_dd=lu_dd, Sdp=Sdp, Spd=Spd,
                St=St, dual_slice=slice(dual_off, dual_off + ld.size)))
            dual_off += ld.size
        self.n_dual_total = dual_off
        self.n_tilde = self.n_primal + dual_off

        if self.n_primal:
            Fc = sp.coo_matrix(
                (np.concatenate(coo_v),
                 (np.concatenate(coo_r), np.concatenate(coo_c))),
                shape=(self.n_primal, self.n_primal)).tocsc()
            try:
                self.coarse_lu = spla.splu(Fc)
            except RuntimeError as exc:
                raise PreconditionerError(
                    "singular coarse matrix (variant %s, eps %g)"
                    % (self.variant, constraints.spec.eps)) from exc
            self.Fc = Fc
        else:
            self.coarse_lu = None
            self.Fc = sp.csc_matrix((0, 0))

    # -- restriction maps on transformed vectors ---------------------------

    def tilde_from_hat(self, c, weighted):
        """Rt (or Rt_D) applied to an assembled transformed vector c."""
        out = np.empty(self.n_tilde)
        out[:self.n_primal] = c[self.primal_pos]
        w = 0.5 if weighted else 1.0
        dual = out[self.n_primal:]
        for sd in self.sub_data:
            dual[sd["dual_slice"]] = w * c[sd["pos"][sd["ld"]]]
        return out

    def hat_from_tilde(self, t, weighted):
        """Rt^T (or Rt_D^T) applied to a partially assembled vector t."""
        out = np.zeros(self.dofs.n_interface)
        out[self.primal_pos] = t[:self.n_primal]
        w = 0.5 if weighted else 1.0
        for sd in self.sub_data:
            out[sd["pos"][sd["ld"]]] += w * t[self.n_primal:][sd["dual_slice"]]
        return out

    def inner_solve(self, rt):
        """Solve the partially assembled system St x = rt (two-level)."""
        rp = rt[:self.n_primal]
        g = rp.copy()
        ws = []
        for sd in self.sub_data:
            if sd["ld"].size:
                w = sla.lu_solve(sd["lu_dd"], rt[self.n_primal:][sd["dual_slice"]])
                g[sd["gp"]] -= sd["Spd"] @ w
            else:
                w = np.zeros(0)
            ws.append(w)
        xp = self.coarse_lu.solve(g) if self.coarse_lu is not None else g[:0]
        out = np.empty(self.n_tilde)
        out[:self.n_primal] = xp
        for sd, w in zip(self.sub_data, ws):
            if sd["ld"].size:
                xd = w - sla.lu_solve(sd["lu_dd"], sd["Sdp"] @ xp[sd["gp"]])
            else:
                xd = w
            out[self.n_primal:][sd["dual_slice"]] = xd
        return out

    def apply(self, r):
        """M^-1 r = Q^T Rt_D^T St^-1 Rt_D Q r."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.dofs.n_interface,):
            raise InvalidConfigError("interface residual has wrong length")
        c = self.Qg @ r
        xt = self.inner_solve(self.tilde_from_hat(c, weighted=True))
        return self.Qg.T @ self.hat_from_tilde(xt, weighted=True)

    def apply_average(self, t):
        """E_D t = Rt Rt_D^T t on partially assembled vectors."""
        return self.tilde_from_hat(self.hat_from_tilde(t, weighted=True),
                                   weighted=False)

    def dense_partially_assembled(self):
        """Dense St (oracle for small problems)."""
        S = np.zeros((self.n_tilde, self.n_tilde))
        for sd in self.sub_data:
            idx = np.empty(sd["pos"].size, dtype=np.int64)
            idx[sd["lp"]] = sd["gp"]
            idx[sd["ld"]] = self.n_primal + np.arange(
                sd["dual_slice"].start, sd["dual_slice"].stop)
            S[np.ix_(idx, idx)] += sd["St"]
        return S


def build_preconditioner(subs, iface, constraints, dofs):
    """Two-level BDDC preconditioner (or exact coarse for all-primal)."""
    if constraints.variant == "none":
        raise InvalidConfigError(
            "variant 'none' means unpreconditioned GMRES; no BDDC object")
    return BddcPreconditioner(subs, iface, constraints, dofs)


def apply_preconditioner(pre, r):
    return pre.apply(r)


def apply_average(pre, t):
    return pre.apply_average(t)
