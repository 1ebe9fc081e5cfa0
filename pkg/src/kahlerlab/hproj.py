"""h-projective solution layer.

A solution field packages the pair (a_ij, lambda_i) — plus the scalar mu
once a coupling constant B is fixed — as exact jet-evaluable fields on a
model manifold:

  * the comparison tensor of a metric pair
        a_ij = (det gbar / det g)^(1/(2(n+1))) g_ia gbar^ab g_bj,
  * its 1-form  lambda_k = (1/4) d_k (g^ij a_ij)  (a gradient),
  * the scalar  mu = (g^ij lambda_i,j - B tr a) / 2n.

The first-order system these should satisfy is

    a_ij,k = lambda_i g_jk + lambda_j g_ik - lbar_i J_jk - lbar_j J_ik,

with lbar_i = J^a_i lambda_a and J_jk = g_ja J^a_k; `hpr_residual` measures
its defect.  Everything here is pure and pointwise-parallel.
"""

import numpy as np

from .errors import InvalidInputError, ShapeMismatchError, SingularMetricError
from .geometry import christoffel_jet, cov_step_jet
from .jets import Jet, jet_det, jet_einsum, jet_eval, jet_matrix_inverse
from .tensors import hermitize


# -- shared geometry bundle -------------------------------------------------

class GeomCache:
    """Per-model memo of metric/connection jets keyed by point and order."""

    def __init__(self, model):
        self.model = model
        self._memo = {}

    def at(self, point, order):
        key = (point.chart, point.coords.tobytes(), order)
        hit = self._memo.get(key)
        if hit is None:
            gjet = jet_eval(self.model.metric_fn(point.chart), list(point.coords), order)
            ginv = jet_matrix_inverse(gjet)
            gamma = christoffel_jet(gjet) if order >= 1 else None
            hit = {"g": gjet, "ginv": ginv, "gamma": gamma,
                   "J": self.model.j_matrix(point.chart)}
            if len(self._memo) > 512:
                self._memo.clear()
            self._memo[key] = hit
        return hit


_geom_caches = {}


def geom(model, point, order):
    cache = _geom_caches.get(id(model))
    if cache is None or cache.model is not model:
        cache = GeomCache(model)
        _geom_caches[id(model)] = cache
    return cache.at(point, order)


# -- solution fields --------------------------------------------------------

class SolutionField:
    """Base class: jet-evaluable (a, lambda, mu) fields over one model.

    Subclasses implement ``a_jet``; the 1-form and scalar default to the
    quarter-trace gradient and the g-trace fit, which is exact for any
    actual solution of the first-order system.
    """

    def __init__(self, model, B=None):
        self.model = model
        self.B = B

    # - jets -
    def a_jet(self, point, order) -> Jet:
        raise NotImplementedError

    def lambda_scalar_jet(self, point, order) -> Jet:
        a = self.a_jet(point, order)
        ginv = geom(self.model, point, order)["ginv"]
        return jet_einsum("ij,ij->", ginv, a) * 0.25

    def lam_jet(self, point, order) -> Jet:
        return self.lambda_scalar_jet(point, order + 1).gradient()

    def mu_jet(self, point, order) -> Jet:
        if self.B is None:
            raise InvalidInputError("mu requires the coupling constant B; "
                                    "call with_B() first")
        g = geom(self.model, point, order + 1)
        lam = self.lam_jet(point, order + 1)
        dlam = cov_step_jet(lam, ("l",), g["gamma"])
        tr_dlam = jet_einsum("ij,ij->", g["ginv"].truncate(dlam.space.order), dlam)
        tr_a = jet_einsum("ij,ij->", g["ginv"].truncate(order),
                          self.a_jet(point, order))
        return (tr_dlam.truncate(order) - tr_a * self.B) * (1.0 / self.model.dim)

    # - values -
    def a_at(self, point):
        return self.a_jet(point, 0).const

    def lam_at(self, point):
        return self.lam_jet(point, 0).const

    def lambda_scalar_at(self, point):
        return float(self.lambda_scalar_jet(point, 0).const)

    def mu_at(self, point):
        return float(self.mu_jet(point, 0).const)

    def lambda_vector_at(self, point):
        """lambda^i = g^ia lambda_a as a float vector."""
        g = geom(self.model, point, 0)
        return g["ginv"].const @ self.lam_at(point)

    def lambda_bar_vector_at(self, point):
        """lbar^i = g^ia J^b_a lambda_b (the Killing direction)."""
        g = geom(self.model, point, 0)
        return g["ginv"].const @ (g["J"].T @ self.lam_at(point))

    def with_B(self, B):
        import copy
        dup = copy.copy(self)
        dup.B = float(B)
        return dup

    # - linear structure -
    def __add__(self, other):
        return CombinationSolution([(1.0, self), (1.0, other)])

    def __rmul__(self, c):
        return CombinationSolution([(float(c), self)])

    def __mul__(self, c):
        return self.__rmul__(c)

    def __sub__(self, other):
        return CombinationSolution([(1.0, self), (-1.0, other)])


class PairSolution(SolutionField):
    """Comparison-tensor solution built from two Kähler metrics on the same
    charts and complex structure."""

    def __init__(self, g_model, gbar_model, B=None):
        super().__init__(g_model, B)
        if gbar_model.dim != g_model.dim:
            raise ShapeMismatchError("metric pair must share the dimension")
        self.gbar_model = gbar_model

    def a_jet(self, point, order):
        return pair_a_jet(self.model, self.gbar_model, point, order)


class TrivialSolution(SolutionField):
    """The metric itself, scaled: (c*g, 0, -c*B)."""

    def __init__(self, model, c=1.0, B=None):
        super().__init__(model, B)
        self.c = float(c)

    def a_jet(self, point, order):
        return geom(self.model, point, order)["g"].truncate(order) * self.c

    def lam_jet(self, point, order):
        return _zero_vec_jet(self.model, point, order)

    def mu_jet(self, point, order):
        if self.B is None:
            raise InvalidInputError("mu requires B")
        return _const_scalar_jet(self.model, point, order, -self.c * self.B)


class ExplicitSolution(SolutionField):
    """Solution with caller-supplied jet builders (used for transported
    states and algebraically constructed triples)."""

    def __init__(self, model, a_builder, lam_builder=None, mu_builder=None, B=None):
        super().__init__(model, B)
        self._a = a_builder
        self._lam = lam_builder
        self._mu = mu_builder

    def a_jet(self, point, order):
        return self._a(point, order)

    def lam_jet(self, point, order):
        if self._lam is None:
            return super().lam_jet(point, order)
        return self._lam(point, order)

    def mu_jet(self, point, order):
        if self._mu is None:
            return super().mu_jet(point, order)
        return self._mu(point, order)


class CombinationSolution(SolutionField):
    """Exact linear combination of solution fields over one model."""

    def __init__(self, terms):
        flat = []
        for c, s in terms:
            if isinstance(s, CombinationSolution):
                flat.extend((c * ci, si) for ci, si in s.terms)
            else:
                flat.append((c, s))
        self.terms = flat
        model = flat[0][1].model
        Bs = {s.B for _, s in flat if s.B is not None}
        super().__init__(model, Bs.pop() if len(Bs) == 1 else None)

    def a_jet(self, point, order):
        acc = None
        for c, s in self.terms:
            j = s.a_jet(point, order) * c
            acc = j if acc is None else acc + j
        return acc

    def lam_jet(self, point, order):
        acc = None
        for c, s in self.terms:
            j = s.lam_jet(point, order) * c
            acc = j if acc is None else acc + j
        return acc

    def mu_jet(self, point, order):
        acc = None
        for c, s in self.terms:
            j = s.mu_jet(point, order) * c
            acc = j if acc is None else acc + j
        return acc


class PsiSolution(SolutionField):
    """Solution induced by an infinitesimal transformation u:

        a_u = L_u g - trace(g^-1 L_u g)/(2(n+1)) * g
    """

    def __init__(self, model, u_fn, B=None):
        super().__init__(model, B)
        self.u_fn = u_fn

    def a_jet(self, point, order):
        g = geom(self.model, point, order + 1)
        u = jet_eval(self.u_fn, list(point.coords), order + 1)
        ulow = jet_einsum("ia,a->i", g["g"], u)
        du = cov_step_jet(ulow, ("l",), g["gamma"])  # u_i,j at order
        lie = Jet(du.space, du.coef + np.swapaxes(du.coef, -1, -2))
        tr = jet_einsum("ij,ij->", g["ginv"].truncate(du.space.order), lie)
        coeff = 1.0 / (2.0 * (self.model.n + 1))
        return lie - jet_einsum(",ij->ij", tr * coeff, g["g"].truncate(du.space.order))


def _zero_vec_jet(model, point, order):
    from .jets import jet_space
    sp = jet_space(model.dim, order)
    return Jet(sp, np.zeros((sp.ncoef, model.dim)))


def _const_scalar_jet(model, point, order, value):
    from .jets import jet_space
    sp = jet_space(model.dim, order)
    coef = np.zeros((sp.ncoef,))
    coef[0] = value
    return Jet(sp, coef)


# -- pointwise constructions ------------------------------------------------

def pair_a_jet(g_model, gbar_model, point, order):
    """Jet of the comparison tensor of the pair (g, gbar) at a point."""
    n = g_model.n
    gjet = geom(g_model, point, order)["g"].truncate(order)
    gbar = jet_eval(gbar_model.metric_fn(point.chart), list(point.coords), order)
    det_g = jet_det(gjet)
    det_gbar = jet_det(gbar)
    ratio_const = float(det_gbar.const) / float(det_g.const)
    if ratio_const <= 0.0:
        raise SingularMetricError(
            f"determinant ratio {ratio_const:.3e} <= 0: the metrics do not have "
            "the same signature, the comparison tensor is undefined")
    factor = (det_gbar / det_g) ** (1.0 / (2.0 * (n + 1)))
    gbar_inv = jet_matrix_inverse(gbar)
    core = jet_einsum("ia,aj->ij", jet_einsum("ia,ab->ib", gjet, gbar_inv), gjet)
    return jet_einsum(",ij->ij", factor, core)


def a_from_pair(g_model, gbar_model, point):
    """Comparison tensor of the metric pair at a point (float matrix)."""
    return pair_a_jet(g_model, gbar_model, point, 0).const


def gbar_from_a(g_model, a, point):
    """Invert the comparison-tensor construction:

        gbar^-1 = (det a / det g)^(1/2) g^-1 a g^-1   (matrix form)

    Returns the (0,2) metric matrix. Degenerate `a` is rejected.
    """
    a = np.asarray(a, dtype=float)
    g = geom(g_model, point, 0)["g"].const
    det_ratio = float(np.linalg.det(a)) / float(np.linalg.det(g))
    if abs(det_ratio) < 1e-12:
        raise SingularMetricError("comparison tensor is degenerate; "
                                  "add a multiple of g before inverting")
    if det_ratio < 0.0:
        raise SingularMetricError(f"det a / det g = {det_ratio:.3e} < 0; "
                                  "no metric of matching signature exists")
    ginv = np.linalg.inv(g)
    gbar_inv = np.sqrt(det_ratio) * ginv @ a @ ginv
    return np.linalg.inv(gbar_inv)


def lambda_from_a(g_model, a_fn, point):
    """lambda_k = (1/4) d_k (g^ij a_ij) for an explicit tensor field a_fn."""
    gi = geom(g_model, point, 1)["ginv"]
    a = jet_eval(a_fn, list(point.coords), 1)
    tr = jet_einsum("ij,ij->", gi, a)
    return 0.25 * tr.gradient().const


def lambda_least_squares(model, sol, point):
    """Cross-fit of lambda minimizing the first-order residual at a point.

    Independent of the trace formula; disagreement flags a pair that is not
    actually h-projectively equivalent.
    """
    g = geom(model, point, 1)
    da = cov_step_jet(sol.a_jet(point, 1), ("l", "l"), g["gamma"]).const
    d = model.dim
    gm, J = g["g"].const, g["J"]
    Jlow = gm @ J
    # design matrix: residual is linear in lambda
    cols = []
    for b in range(d):
        lam = np.zeros(d)
        lam[b] = 1.0
        lbar = J.T @ lam
        rhs = (np.einsum("i,jk->ijk", lam, gm) + np.einsum("j,ik->ijk", lam, gm)
               - np.einsum("i,jk->ijk", lbar, Jlow) - np.einsum("j,ik->ijk", lbar, Jlow))
        cols.append(rhs.ravel())
    M = np.stack(cols, axis=1)
    lam, *_ = np.linalg.lstsq(M, da.ravel(), rcond=None)
    return lam


# -- residuals ---------------------------------------------------------------

def hpr_residual(model, sol, point):
    """Defect of the first-order h-projective system at a point: returns

        a_ij,k - lambda_i g_jk - lambda_j g_ik + lbar_i J_jk + lbar_j J_ik
    """
    g = geom(model, point, 1)
    da = cov_step_jet(sol.a_jet(point, 1), ("l", "l"), g["gamma"]).const
    lam = sol.lam_jet(point, 0).const
    gm, J = g["g"].const, g["J"]
    lbar = J.T @ lam
    Jlow = gm @ J
    rhs = (np.einsum("i,jk->ijk", lam, gm) + np.einsum("j,ik->ijk", lam, gm)
           - np.einsum("i,jk->ijk", lbar, Jlow) - np.einsum("j,ik->ijk", lbar, Jlow))
    return da - rhs


def killing_residual(model, v_fn, point):
    """Lie derivative of the metric along the vector field v (v_i,j + v_j,i)."""
    g = geom(model, point, 1)
    v = jet_eval(v_fn, list(point.coords), 1)
    vlow = jet_einsum("ia,a->i", g["g"], v)
    dv = cov_step_jet(vlow, ("l",), g["gamma"]).const
    return dv + dv.T


def psi_infinitesimal(model, u_fn, point):
    """Trace-adjusted Lie derivative a_u at a point (the linear map sending an
    infinitesimal transformation to a candidate solution)."""
    return PsiSolution(model, u_fn).a_jet(point, 0).const


def integrability_residual(model, sol, point, use_mu=False):
    """Second-order compatibility defect of a candidate solution:

        a_ia R^a_jkl + a_ja R^a_ikl
          - Jproj[ dl_li g_jk + dl_lj g_ik - dl_ki g_jl - dl_kj g_il ]

    with dl = nabla lambda taken from the field, or substituted from the
    prolonged system (mu g + B a) when ``use_mu`` is set.
    """
    g = geom(model, point, 2)
    gm, J = g["g"].const, g["J"]
    a = sol.a_jet(point, 0).const
    if use_mu:
        dlam = sol.mu_at(point) * gm + sol.B * a
    else:
        dlam = cov_step_jet(sol.lam_jet(point, 1), ("l",), g["gamma"]).const
    from .geometry import MetricJet, riemann
    mj = MetricJet.from_jet(point.coords, g["g"])
    R = riemann(mj)
    lhs = np.einsum("ia,ajkl->ijkl", a, R) + np.einsum("ja,aikl->ijkl", a, R)
    T = (np.einsum("li,jk->ijkl", dlam, gm) + np.einsum("lj,ik->ijkl", dlam, gm)
         - np.einsum("ki,jl->ijkl", dlam, gm) - np.einsum("kj,il->ijkl", dlam, gm))
    rhs = T + np.einsum("ai,bj,abkl->ijkl", J, J, T)
    return lhs - rhs


def c_identity_check(model, sol_a, sol_b, point, warn=None):
    """Max |c_il| for the trace-free cross-commutator of two solutions:

        c_il = ahat^r_i (nabla Lhat)_rl - Ahat^r_l (nabla lhat)_ri

    built from the trace-free parts of (a, nabla lambda) of each solution.
    Near-zero certifies the pointwise compatibility identity of independent
    solution pairs; a warning flag is reported when {g, a, A} fail the
    linear-independence hypothesis at the point.
    """
    g = geom(model, point, 1)
    gm = g["g"].const
    ginv = np.linalg.inv(gm)
    d = model.dim

    def tracefree_parts(sol):
        a = sol.a_jet(point, 0).const
        dl = cov_step_jet(sol.lam_jet(point, 1), ("l",), g["gamma"]).const
        a_tf = a - (np.einsum("ij,ij->", ginv, a) / d) * gm
        dl_tf = dl - (np.einsum("ij,ij->", ginv, dl) / d) * gm
        return a_tf, dl_tf

    a_tf, dla = tracefree_parts(sol_a)
    A_tf, dlA = tracefree_parts(sol_b)
    c = a_tf @ ginv @ dlA - dla @ ginv @ A_tf
    stack = np.stack([gm.ravel(),
                      sol_a.a_jet(point, 0).const.ravel(),
                      sol_b.a_jet(point, 0).const.ravel()])
    if warn is not None and np.linalg.matrix_rank(stack, tol=1e-8) < 3:
        warn.append(f"solutions not independent of g at {point.coords.tolist()}")
    return float(np.max(np.abs(c)))


def lambda_scalar_field(model, sol):
    """The quarter-trace scalar of a solution as a jet-evaluable function
    (suitable for the scalar-equation operations)."""

    def f(xs):
        if isinstance(xs[0], Jet):
            pt = model.point([x.const for x in xs])
            return sol.lambda_scalar_jet(pt, xs[0].space.order)
        pt = model.point([float(x) for x in xs])
        return float(sol.lambda_scalar_jet(pt, 0).const)

    return f


def lambda_bar_field(model, sol):
    """The raised J-rotated 1-form of a solution as a jet-evaluable vector
    field (the candidate Killing direction)."""

    def v(xs):
        if isinstance(xs[0], Jet):
            pt = model.point([x.const for x in xs])
            order = xs[0].space.order
            g = geom(model, pt, order)
            lam = sol.lam_jet(pt, order)
            lbar = jet_einsum("ai,a->i", g["J"], lam)
            up = jet_einsum("ia,a->i", g["ginv"].truncate(lbar.space.order), lbar)
            return [up[i] for i in range(model.dim)]
        pt = model.point([float(x) for x in xs])
        return list(sol.lambda_bar_vector_at(pt))

    return v


def is_verified_solution(model, sol, points, tol=1e-6):
    """A solution is verified when its max first-order residual over the
    sample set stays below tolerance."""
    worst = max(float(np.max(np.abs(hpr_residual(model, sol, p))))
                for p in points)
    return worst <= tol, worst


def solution_to_json(model, sol, points, with_mu=None):
    """Serialize a solution field on a sample grid: chart, grid coordinates,
    and component arrays for a, lambda (and mu when a constant is set)."""
    with_mu = (sol.B is not None) if with_mu is None else with_mu
    grid = []
    for p in points:
        entry = {"point": p.coords.tolist(),
                 "a": sol.a_jet(p, 0).const.tolist(),
                 "lambda": sol.lam_jet(p, 0).const.tolist()}
        if with_mu:
            entry["mu"] = float(sol.mu_jet(p, 0).const)
        grid.append(entry)
    return {"chart": points[0].chart, "B": sol.B, "grid": grid}


def hermitian_symmetric_basis(J):
    """Orthonormal basis (in the Frobenius sense) of symmetric J-invariant
    (0,2) tensors; dimension n^2 on a 2n-dimensional space."""
    d = J.shape[0]
    cands = []
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            cands.append(hermitize(E, J).ravel())
    M = np.stack(cands)
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    keep = s > 1e-9 * s[0]
    return [vt[k].reshape(d, d) for k in range(int(np.sum(keep)))]
