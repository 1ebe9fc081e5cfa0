"""Closed-form Kähler model manifolds with exact jets.

All models use real chart coordinates (x_1, y_1, ..., x_n, y_n) with
z_k = x_k + i*y_k and the standard complex structure acting blockwise as
the 2x2 rotation.  The projective-space metric in an affine chart is

    g = 4 * Re( h ),   h_ij = (delta_ij * s - conj(z_i) z_j) / s^2,
    s = 1 + |z|^2,

where the factor 4 pins the holomorphic sectional curvature to 1 (the
convention every curvature check in the package is calibrated against).
Linear pullbacks g_A are computed through homogeneous coordinates with
renormalization into whichever affine chart keeps the image farthest from
the coordinate hyperplane.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (InvalidInputError, OutOfDomainError,
                     UnsupportedDimensionError, UnsupportedModelError)
from .geometry import ComplexStructureJet, MetricJet, verify_kahler
from .jets import CNum, Jet, jet_eval


@dataclass(frozen=True)
class Chart:
    name: str
    dim: int
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if self.dim % 2 != 0 or self.dim < 4:
            raise UnsupportedDimensionError(
                f"chart dimension must be even and >= 4, got {self.dim}")
        if len(self.lo) != self.dim or len(self.hi) != self.dim:
            raise InvalidInputError("domain box does not match dimension")

    def contains(self, coords, margin=0.0):
        c = np.asarray(coords, dtype=float)
        return bool(np.all(c >= np.array(self.lo) + margin)
                    and np.all(c <= np.array(self.hi) - margin))


@dataclass(frozen=True)
class ChartPoint:
    chart: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


def standard_J(n):
    """Block-diagonal complex structure: J(dx_k) = dy_k, J(dy_k) = -dx_k."""
    J = np.zeros((2 * n, 2 * n))
    for k in range(n):
        J[2 * k + 1, 2 * k] = 1.0
        J[2 * k, 2 * k + 1] = -1.0
    return J


def _to_cnums(xs):
    return [CNum(xs[2 * k], xs[2 * k + 1]) for k in range(len(xs) // 2)]


def _mag(x):
    v = x.const if isinstance(x, Jet) else x
    return abs(float(np.asarray(v).flat[0])) if np.ndim(v) else abs(float(v))


def hermitian_to_real(h, scale=1.0):
    """Realify a hermitian matrix of CNum entries into a (2n, 2n) metric block."""
    n = len(h)
    g = [[None] * (2 * n) for _ in range(2 * n)]
    for i in range(n):
        for j in range(n):
            re, im = h[i][j].re * scale, h[i][j].im * scale
            g[2 * i][2 * j] = re
            g[2 * i + 1][2 * j + 1] = re
            g[2 * i][2 * j + 1] = im
            g[2 * i + 1][2 * j] = -1.0 * im
    return g


def _fs_hermitian(z):
    """Affine-chart projective metric, hermitian part (before the factor 4)."""
    n = len(z)
    s = 1.0
    for zk in z:
        s = s + zk.abs2()
    inv_s2 = 1.0 / (s * s)
    diag = CNum(s, 0.0)
    zero = CNum(0.0, 0.0)
    h = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            num = (diag if i == j else zero) - z[i].conj() * z[j]
            h[i][j] = num * inv_s2
    return h


def _flat_hermitian(z, diag):
    n = len(z)
    return [[CNum(diag[i] if i == j else 0.0, 0.0) for j in range(n)] for i in range(n)]


class KahlerModel:
    """A model manifold: named charts, a metric function per chart with exact
    jets, a constant complex structure per chart, and transition maps.

    Immutable after construction; instances are safe to share.
    """

    def __init__(self, kind, n, charts, default_chart, metric_fns, j_mats,
                 transitions=None, periods=None, factors=None, weights=None,
                 sample_halfwidth=0.9, params=None, constant_metric=False):
        self.kind = kind
        self.n = n
        self.dim = 2 * n
        self.charts = charts
        self.default_chart = default_chart
        self._metric_fns = metric_fns
        self._j_mats = j_mats
        self._transitions = transitions or {}
        self.periods = None if periods is None else np.asarray(periods, dtype=float)
        self.factors = factors
        self.weights = weights
        self.sample_halfwidth = sample_halfwidth
        self.params = params or {}
        self.constant_metric = constant_metric

    # -- chart plumbing ------------------------------------------------
    def chart(self, name=None):
        return self.charts[name or self.default_chart]

    def point(self, coords, chart=None):
        return ChartPoint(chart or self.default_chart, np.asarray(coords, dtype=float))

    def metric_fn(self, chart=None):
        return self._metric_fns[chart or self.default_chart]

    def j_matrix(self, chart=None):
        return self._j_mats[chart or self.default_chart]

    def j_fn(self, chart=None):
        J = self.j_matrix(chart)
        return lambda xs: [[float(J[i, j]) for j in range(self.dim)] for i in range(self.dim)]

    def transition_targets(self, chart):
        return sorted(t for (s, t) in self._transitions if s == chart)

    def transition(self, src, dst):
        try:
            return self._transitions[(src, dst)]
        except KeyError:
            raise OutOfDomainError(f"no transition {src} -> {dst}") from None

    def wrap(self, point: ChartPoint) -> ChartPoint:
        """Reduce torus coordinates into the fundamental domain."""
        if self.periods is None:
            return point
        p = self.periods
        c = (point.coords + p / 2.0) % p - p / 2.0
        return ChartPoint(point.chart, c)

    def rechart(self, point: ChartPoint, velocity=None):
        """Move a point (and optionally a tangent vector) to the chart whose
        coordinates are smallest in magnitude."""
        best = (float(np.max(np.abs(point.coords))), point, velocity)
        for dst in self.transition_targets(point.chart):
            fn = self._transitions[(point.chart, dst)]
            try:
                if velocity is None:
                    y = np.array(fn(list(point.coords)), dtype=float)
                    cand_v = None
                else:
                    jac_jet = jet_eval(fn, list(point.coords), 1)
                    y = jac_jet.const
                    cand_v = jac_jet.derivatives(1) @ np.asarray(velocity, dtype=float)
            except ZeroDivisionError:
                continue
            m = float(np.max(np.abs(y)))
            if m < best[0]:
                best = (m, ChartPoint(dst, y), cand_v)
        return (best[1], best[2]) if velocity is not None else best[1]

    # -- jets ------------------------------------------------------------
    def metric_jet(self, point: ChartPoint, order=3) -> MetricJet:
        return MetricJet.from_function(self.metric_fn(point.chart), list(point.coords), order)

    def complex_structure_jet(self, point: ChartPoint) -> ComplexStructureJet:
        return ComplexStructureJet.constant(point.coords, self.j_matrix(point.chart))

    def metric_at(self, point: ChartPoint) -> np.ndarray:
        return np.array(self.metric_fn(point.chart)(list(point.coords)), dtype=float)

    # -- sampling and verification ----------------------------------------
    def sample_points(self, rng, count, chart=None):
        chart = chart or self.default_chart
        w = self.sample_halfwidth
        return [ChartPoint(chart, rng.uniform(-w, w, size=self.dim))
                for _ in range(count)]

    def verify(self, rng=None, points=None, count=20, tol=1e-9, chart=None):
        if points is None:
            points = self.sample_points(rng or np.random.default_rng(0), count, chart)
        chart = points[0].chart
        return verify_kahler(self.metric_fn(chart), self.j_fn(chart),
                             [list(p.coords) for p in points], tol=tol)

    def descriptor(self):
        d = {"kind": self.kind, "n": self.n}
        d.update(self.params)
        return d


# -- constructors -----------------------------------------------------------

def _box(dim, half):
    return tuple([-half] * dim), tuple([half] * dim)


def flat_model(n, diag=None):
    """Flat C^n (optionally with a constant signature diag per complex axis)."""
    if n < 2:
        raise UnsupportedDimensionError("flat model needs n >= 2")
    diag = [1.0] * n if diag is None else [float(d) for d in diag]
    if len(diag) != n or any(d == 0 for d in diag):
        raise InvalidInputError("diag must give one nonzero weight per complex axis")
    lo, hi = _box(2 * n, 10.0)
    chart = Chart("c0", 2 * n, lo, hi)

    def fn(xs, _diag=tuple(diag)):
        return hermitian_to_real(_flat_hermitian(_to_cnums(xs), _diag))

    return KahlerModel("flat", n, {"c0": chart}, "c0", {"c0": fn},
                       {"c0": standard_J(n)}, sample_halfwidth=1.0,
                       params={"diag": diag}, constant_metric=True)


def _projective_charts(n, half=4.0):
    charts = {}
    for k in range(n + 1):
        lo, hi = _box(2 * n, half)
        charts[f"c{k}"] = Chart(f"c{k}", 2 * n, lo, hi)
    return charts


def _homogeneous(z, chart_index, n):
    hom = []
    ptr = 0
    for m in range(n + 1):
        if m == chart_index:
            hom.append(CNum(1.0, 0.0))
        else:
            hom.append(z[ptr])
            ptr += 1
    return hom


def _projective_transition(n, src_k, dst_k):
    def fn(xs):
        z = _to_cnums(xs)
        hom = _homogeneous(z, src_k, n)
        piv = hom[dst_k]
        if _mag(piv.abs2()) == 0.0:
            raise ZeroDivisionError("transition undefined on the coordinate hyperplane")
        out = []
        for m in range(n + 1):
            if m == dst_k:
                continue
            u = hom[m] / piv
            out.extend([u.re, u.im])
        return out
    return fn


def _pullback_metric_fn(n, chart_index, A):
    """Metric function of f_A^* (projective metric) in affine chart `chart_index`.

    ``A`` is a complex (n+1)x(n+1) matrix or None for the identity map.
    """

    def fn(xs):
        z = _to_cnums(xs)
        if A is None:
            return hermitian_to_real(_fs_hermitian(z), 4.0)
        hom = _homogeneous(z, chart_index, n)
        w = [sum((CNum(A[m, l].real, A[m, l].imag) * hom[l] for l in range(n + 1)),
                 CNum(0.0, 0.0)) for m in range(n + 1)]
        # land in the chart where the image is farthest from the hyperplane
        t = max(range(n + 1), key=lambda m: _mag(w[m].abs2()))
        piv = w[t]
        u = [w[m] / piv for m in range(n + 1) if m != t]
        # complex Jacobian du_m/dz_l of the chart map, rows skip slot t
        hom_cols = [l for l in range(n + 1) if l != chart_index]
        piv2 = piv * piv
        rows = [m for m in range(n + 1) if m != t]
        D = [[(CNum(A[m, lp].real, A[m, lp].imag) * piv
               - w[m] * CNum(A[t, lp].real, A[t, lp].imag)) / piv2
              for lp in hom_cols] for m in rows]
        h = _fs_hermitian(u)
        ha = [[None] * n for _ in range(n)]
        for l in range(n):
            for lp in range(n):
                acc = CNum(0.0, 0.0)
                for m in range(n):
                    for mp in range(n):
                        acc = acc + h[m][mp] * D[m][l] * D[mp][lp].conj()
                ha[l][lp] = acc
        return hermitian_to_real(ha, 4.0)

    return fn


def fubini_study(n, chart_index=0):
    """Projective space CP(n) with the invariant metric, holomorphic
    sectional curvature normalized to 1 (g(0) = 4*Id in every affine chart)."""
    if n < 2:
        raise UnsupportedDimensionError("projective model needs n >= 2 (real dim >= 4)")
    if not 0 <= chart_index <= n:
        raise InvalidInputError(f"chart_index must be in 0..{n}")
    charts = _projective_charts(n)
    metric_fns = {f"c{k}": _pullback_metric_fn(n, k, None) for k in range(n + 1)}
    j_mats = {f"c{k}": standard_J(n) for k in range(n + 1)}
    transitions = {(f"c{i}", f"c{j}"): _projective_transition(n, i, j)
                   for i in range(n + 1) for j in range(n + 1) if i != j}
    return KahlerModel("fs", n, charts, f"c{chart_index}", metric_fns, j_mats,
                       transitions=transitions, params={"chart_index": chart_index})


def pullback_fs(A, chart_index=0):
    """Pullback of the projective metric under the linear map with matrix A."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("A must be square")
    n = A.shape[0] - 1
    if n < 2:
        raise UnsupportedDimensionError("pullback model needs n >= 2")
    if abs(np.linalg.det(A)) < 1e-12 * max(np.linalg.norm(A), 1.0) ** (n + 1):
        raise InvalidInputError("A must be invertible")
    charts = _projective_charts(n)
    metric_fns = {f"c{k}": _pullback_metric_fn(n, k, A) for k in range(n + 1)}
    j_mats = {f"c{k}": standard_J(n) for k in range(n + 1)}
    transitions = {(f"c{i}", f"c{j}"): _projective_transition(n, i, j)
                   for i in range(n + 1) for j in range(n + 1) if i != j}
    return KahlerModel("pullback", n, charts, f"c{chart_index}", metric_fns, j_mats,
                       transitions=transitions,
                       params={"A": [[ [float(A[i, j].real), float(A[i, j].imag)]
                                       for j in range(n + 1)] for i in range(n + 1)]})


def product_model(factors, weights=None):
    """Block product of Kähler models with constant positive/negative weights."""
    if len(factors) < 2:
        raise InvalidInputError("product needs at least two factors")
    weights = [1.0] * len(factors) if weights is None else [float(w) for w in weights]
    if len(weights) != len(factors):
        raise InvalidInputError("one weight per factor")
    if any(w == 0.0 for w in weights):
        raise InvalidInputError("weights must be nonzero")
    n = sum(f.n for f in factors)
    dims = [f.dim for f in factors]
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    lo = sum((list(f.chart().lo) for f in factors), [])
    hi = sum((list(f.chart().hi) for f in factors), [])
    chart = Chart("c0", 2 * n, tuple(lo), tuple(hi))

    factor_fns = [f.metric_fn() for f in factors]

    def fn(xs):
        g = [[0.0] * (2 * n) for _ in range(2 * n)]
        for fi, ffn in enumerate(factor_fns):
            a, b = offsets[fi], offsets[fi + 1]
            block = ffn(xs[a:b])
            for i in range(b - a):
                for j in range(b - a):
                    g[a + i][a + j] = block[i][j] * weights[fi]
        return g

    J = np.zeros((2 * n, 2 * n))
    for fi, f in enumerate(factors):
        a, b = offsets[fi], offsets[fi + 1]
        J[a:b, a:b] = f.j_matrix()
    periods = None
    if all(f.periods is not None for f in factors):
        periods = np.concatenate([f.periods for f in factors])
    return KahlerModel("product", n, {"c0": chart}, "c0", {"c0": fn}, {"c0": J},
                       periods=periods, factors=list(factors), weights=weights,
                       sample_halfwidth=min(f.sample_halfwidth for f in factors),
                       params={"weights": weights,
                               "factors": [f.descriptor() for f in factors]},
                       constant_metric=all(f.constant_metric for f in factors))


def flat_torus(n, periods=1.0):
    """Flat torus: flat metric plus a period lattice (closedness as metadata);
    numerics operate on the fundamental domain."""
    if n < 2:
        raise UnsupportedDimensionError("torus model needs n >= 2")
    periods = np.asarray(periods, dtype=float) * np.ones(2 * n)
    if np.any(periods <= 0):
        raise InvalidInputError("periods must be positive")
    half = periods / 2.0
    chart = Chart("c0", 2 * n, tuple(-half), tuple(half))

    def fn(xs):
        return hermitian_to_real(_flat_hermitian(_to_cnums(xs), [1.0] * n))

    return KahlerModel("torus", n, {"c0": chart}, "c0", {"c0": fn},
                       {"c0": standard_J(n)}, periods=periods,
                       sample_halfwidth=float(np.min(half)) * 0.9,
                       params={"periods": periods.tolist()}, constant_metric=True)


def rescale_model(model, c):
    """The same manifold with metric multiplied by the nonzero constant c."""
    if c == 0.0:
        raise InvalidInputError("scale must be nonzero")

    fns = {}
    for name, base_fn in model._metric_fns.items():
        def fn(xs, _f=base_fn):
            g = _f(xs)
            return [[entry * c for entry in row] for row in g]
        fns[name] = fn
    scaled = KahlerModel(model.kind, model.n, model.charts, model.default_chart,
                         fns, model._j_mats, transitions=model._transitions,
                         periods=model.periods, factors=model.factors,
                         weights=model.weights,
                         sample_halfwidth=model.sample_halfwidth,
                         params={**model.params, "scale": c},
                         constant_metric=model.constant_metric)
    return scaled


def model_from_descriptor(desc):
    """Build a model from a CLI/JSON descriptor (kind, n, and kind parameters)."""
    kind = desc.get("kind")
    n = int(desc.get("n", 2))
    if kind == "flat":
        return flat_model(n, desc.get("diag"))
    if kind == "fs":
        return fubini_study(n, int(desc.get("chart_index", 0)))
    if kind == "pullback":
        A = complex_matrix_from_pairs(desc["A"])
        return pullback_fs(A, int(desc.get("chart_index", 0)))
    if kind == "torus":
        return flat_torus(n, desc.get("periods", 1.0))
    if kind == "product":
        factors = [model_from_descriptor(f) for f in desc["factors"]]
        return product_model(factors, desc.get("weights"))
    raise UnsupportedModelError(f"unknown model kind {kind!r}")


def complex_matrix_from_pairs(rows):
    """Rows of [re, im] pairs (row-major) -> complex ndarray."""
    out = np.array([[complex(entry[0], entry[1]) for entry in row] for row in rows])
    return out
