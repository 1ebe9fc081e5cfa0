"""Curve integration on model manifolds: the second-order planar-curve ODE

    xdd^i + Gamma^i_jk xd^j xd^k = alpha(t) xd^i + beta(t) J^i_j xd^j

(alpha = beta = 0 gives geodesics), membership tests for the complex-line /
projective-line images such curves must trace out, and first-integral
monitoring along geodesics.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, OutOfDomainError, UnsupportedModelError
from .models import ChartPoint
from .prolongation import _geo_floats, _geo_floats_batch


@dataclass
class CurveSample:
    """A sampled curve: strictly increasing times, chart points, velocities."""

    times: np.ndarray
    points: list
    velocities: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("sample times must be strictly increasing")
        if not (len(self.times) == len(self.points) == len(self.velocities)):
            raise InvalidInputError("times, points, velocities must align")

    def __len__(self):
        return len(self.times)

    def export_csv(self, path, extras=None):
        """Write t, chart, coordinates, velocities (and optional extra
        per-sample columns) to a CSV file."""
        d = len(self.velocities[0])
        cols = (["t", "chart"] + [f"x{i}" for i in range(d)]
                + [f"v{i}" for i in range(d)])
        extras = extras or {}
        cols += list(extras.keys())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for idx in range(len(self)):
                row = ([f"{self.times[idx]:.12g}", self.points[idx].chart]
                       + [f"{c:.17g}" for c in self.points[idx].coords]
                       + [f"{c:.17g}" for c in self.velocities[idx]])
                row += [f"{extras[k][idx]:.6e}" for k in extras]
                w.writerow(row)


def as_coefficient(c):
    """Coefficient functions of t; numbers are promoted to constants."""
    if callable(c):
        return c
    val = float(c)
    return lambda t: val


def poly_coefficient(*coeffs):
    """Polynomial coefficient function of t, constant term first."""
    cs = [float(c) for c in coeffs]

    def f(t):
        acc = 0.0
        for c in reversed(cs):
            acc = acc * t + c
        return acc

    return f


def integrate_hplanar(model, x0: ChartPoint, v0, alpha=0.0, beta=0.0,
                      t_end=1.0, step=1e-3, margin=0.05):
    """RK4 integration of the planar-curve ODE from (x0, v0).

    Samples are re-charted through the transition maps whenever they leave
    the margin-shrunk chart box; if no chart covers the point, an
    out-of-domain error carrying the last valid sample is raised.
    """
    v0 = np.asarray(v0, dtype=float)
    if float(np.linalg.norm(v0)) == 0.0:
        raise InvalidInputError("initial velocity must be nonzero")
    if step <= 0:
        raise InvalidInputError("step must be positive")
    alpha = as_coefficient(alpha)
    beta = as_coefficient(beta)
    chart, x, v = x0.chart, np.array(x0.coords, dtype=float), v0.copy()
    nsteps = int(np.ceil(t_end / step))
    times = [0.0]
    points = [ChartPoint(chart, x)]
    vels = [v.copy()]

    def acc(ch, xx, vv, t):
        gm, gamma = _geo_floats(model, ch, xx)
        J = model.j_matrix(ch)
        return (-np.einsum("ijk,j,k->i", gamma, vv, vv)
                + alpha(t) * vv + beta(t) * (J @ vv))

    for s in range(nsteps):
        t = s * step
        h = min(step, t_end - t)
        k1x, k1v = v, acc(chart, x, v, t)
        k2x, k2v = v + h / 2 * k1v, acc(chart, x + h / 2 * k1x, v + h / 2 * k1v, t + h / 2)
        k3x, k3v = v + h / 2 * k2v, acc(chart, x + h / 2 * k2x, v + h / 2 * k2v, t + h / 2)
        k4x, k4v = v + h * k3v, acc(chart, x + h * k3x, v + h * k3v, t + h)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if model.periods is not None:
            x = model.wrap(ChartPoint(chart, x)).coords
        elif not model.chart(chart).contains(x, margin):
            pt, vv = model.rechart(ChartPoint(chart, x), v)
            chart, x, v = pt.chart, pt.coords, vv
            if not model.chart(chart).contains(x):
                raise OutOfDomainError(
                    f"curve left the atlas at t={t + h:.4f}",
                    last_sample=CurveSample(times, points, vels))
        times.append(t + h)
        points.append(ChartPoint(chart, x))
        vels.append(v.copy())
    return CurveSample(np.array(times), points, vels)


def integrate_hplanar_batch(model, x0s, v0s, alphas, betas, t_end=1.0, step=1e-3):
    """Lockstep RK4 for a batch of curves in one chart (no re-charting; a
    curve that leaves the chart box raises).  Returns a list of CurveSample.
    """
    chart = x0s[0].chart
    X = np.stack([p.coords for p in x0s]).astype(float)
    V = np.stack(v0s).astype(float)
    alphas = [as_coefficient(a) for a in alphas]
    betas = [as_coefficient(b) for b in betas]
    J = model.j_matrix(chart)
    nb = X.shape[0]
    nsteps = int(np.ceil(t_end / step))
    box = model.chart(chart)
    traj_x = [X.copy()]
    traj_v = [V.copy()]
    times = [0.0]

    def acc(XX, VV, t):
        G, GAM = _geo_floats_batch(model, chart, XX)
        al = np.array([a(t) for a in alphas])
        be = np.array([b(t) for b in betas])
        return (-np.einsum("bijk,bj,bk->bi", GAM, VV, VV)
                + al[:, None] * VV + be[:, None] * (VV @ J.T))

    for s in range(nsteps):
        t = s * step
        h = min(step, t_end - t)
        k1x, k1v = V, acc(X, V, t)
        k2x, k2v = V + h / 2 * k1v, acc(X + h / 2 * k1x, V + h / 2 * k1v, t + h / 2)
        k3x, k3v = V + h / 2 * k2v, acc(X + h / 2 * k2x, V + h / 2 * k2v, t + h / 2)
        k4x, k4v = V + h * k3v, acc(X + h * k3x, V + h * k3v, t + h)
        X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        V = V + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if model.periods is None and not all(box.contains(x) for x in X):
            raise OutOfDomainError(f"a batched curve left chart {chart} at t={t + h:.4f}")
        times.append(t + h)
        traj_x.append(X.copy())
        traj_v.append(V.copy())
    tarr = np.array(times)
    out = []
    for b in range(nb):
        pts = [ChartPoint(chart, traj_x[s][b]) for s in range(len(times))]
        vels = [traj_v[s][b] for s in range(len(times))]
        out.append(CurveSample(tarr, pts, vels))
    return out


# -- defect and membership tests ----------------------------------------------

def _fd_velocity_derivative(curve):
    """4th-order central dv/dt on the interior of a uniformly sampled curve."""
    V = np.stack(curve.velocities)
    h = float(curve.times[1] - curve.times[0])
    dv = (V[:-4] - 8 * V[1:-3] + 8 * V[3:-1] - V[4:]) / (12 * h)
    return dv  # aligned with samples 2..len-3


def _wedge_defect(accel, v, J):
    """Smallest singular value of column-normalized [acc | v | Jv].

    The acceleration column norm is floored at a fraction of |v|^2 (the
    natural scale of the quadratic connection term) so that a vanishing
    covariant acceleration — a geodesic — reads as dependent rather than
    as amplified noise.
    """
    vn = float(np.linalg.norm(v))
    if vn < 1e-14:
        return 0.0
    floor = 1e-2 * vn * vn
    cols = np.stack([accel / max(float(np.linalg.norm(accel)), floor),
                     v / vn, (J @ v) / vn], axis=1)
    return float(np.linalg.svd(cols, compute_uv=False)[-1])


def _gammas_along(model, curve, idxs):
    out = [None] * len(idxs)
    by_chart = {}
    for pos, idx in enumerate(idxs):
        by_chart.setdefault(curve.points[idx].chart, []).append((pos, idx))
    for chart, items in by_chart.items():
        X = np.stack([curve.points[idx].coords for _, idx in items])
        _, GAM = _geo_floats_batch(model, chart, X)
        for (pos, _), gam in zip(items, GAM):
            out[pos] = gam
    return out


def hplanarity_defect(model, curve):
    """Per-sample planarity defect: the smallest singular value of the
    column-normalized matrix [acc | v | Jv], where the acceleration is
    recovered from the samples by finite differences (independent of the
    integrator's own right-hand side).  Zero iff the three are dependent.
    """
    if len(curve) < 5:
        raise InvalidInputError("defect needs at least 5 samples")
    dv = _fd_velocity_derivative(curve)
    idxs = list(range(2, len(curve) - 2))
    gammas = _gammas_along(model, curve, idxs)
    out = []
    for pos, idx in enumerate(idxs):
        pt = curve.points[idx]
        v = curve.velocities[idx]
        if pt.chart != curve.points[idx - 2].chart or \
           pt.chart != curve.points[idx + 2].chart:
            out.append(np.nan)  # stencil straddles a chart switch
            continue
        accel = dv[idx - 2] + np.einsum("ijk,j,k->i", gammas[pos], v, v)
        out.append(_wedge_defect(accel, v, model.j_matrix(pt.chart)))
    return np.array(out)


def _homogeneous_lift(model, pt):
    n = model.n
    k = int(pt.chart[1:])
    z = [complex(pt.coords[2 * i], pt.coords[2 * i + 1]) for i in range(n)]
    hom = np.empty(n + 1, dtype=complex)
    ptr = 0
    for m in range(n + 1):
        if m == k:
            hom[m] = 1.0
        else:
            hom[m] = z[ptr]
            ptr += 1
    return hom / np.linalg.norm(hom)


def line_deviation(model, curve, x0: ChartPoint, v0, per_sample=False):
    """Distance of the curve from the plane/line its initial data spans.

    Flat models: euclidean distance from the real 2-plane through x0
    spanned by {v0, J v0}.  Projective models (including pullbacks): the
    samples are lifted to normalized homogeneous coordinates and measured
    against the complex 2-plane spanned by the lifts of (x0, v0).
    Returns the max over samples, or the per-sample array when asked.
    """
    v0 = np.asarray(v0, dtype=float)
    if model.kind == "flat":
        J = model.j_matrix(x0.chart)
        basis = np.stack([v0, J @ v0], axis=1)
        q, _ = np.linalg.qr(basis)
        vals = []
        for pt in curve.points:
            dx = pt.coords - x0.coords
            vals.append(float(np.linalg.norm(dx - q @ (q.T @ dx))))
    elif model.kind in ("fs", "pullback"):
        n = model.n
        k = int(x0.chart[1:])
        h0 = _homogeneous_lift(model, x0)
        dv = np.zeros(n + 1, dtype=complex)
        ptr = 0
        for m in range(n + 1):
            if m == k:
                continue
            dv[m] = complex(v0[2 * ptr], v0[2 * ptr + 1])
            ptr += 1
        span = np.stack([h0, dv], axis=1)
        q, _ = np.linalg.qr(span)
        vals = []
        for pt in curve.points:
            w = _homogeneous_lift(model, pt)
            vals.append(float(np.linalg.norm(w - q @ (q.conj().T @ w))))
    else:
        raise UnsupportedModelError(f"no line notion for model kind {model.kind!r}")
    return np.array(vals) if per_sample else float(np.max(vals))


def _metrics_along(model, curve, idxs):
    """Metric matrices at selected samples, batched chart by chart."""
    out = [None] * len(idxs)
    by_chart = {}
    for pos, idx in enumerate(idxs):
        by_chart.setdefault(curve.points[idx].chart, []).append((pos, idx))
    for chart, items in by_chart.items():
        X = np.stack([curve.points[idx].coords for _, idx in items])
        G, _ = _geo_floats_batch(model, chart, X)
        for (pos, _), gm in zip(items, G):
            out[pos] = gm
    return out


def killing_integral_drift(model, curve, v_field, stride=1):
    """Max drift of g(curve velocity, v) along a geodesic sample.

    ``stride`` monitors every stride-th sample (the pairing is smooth, so a
    moderate stride loses nothing at these tolerances).
    """
    idxs = list(range(0, len(curve), max(1, stride)))
    if idxs[-1] != len(curve) - 1:
        idxs.append(len(curve) - 1)
    gms = _metrics_along(model, curve, idxs)
    vals = np.array([float(curve.velocities[idx] @ gms[pos] @ v_field(curve.points[idx]))
                     for pos, idx in enumerate(idxs)])
    return float(np.max(np.abs(vals - vals[0])))


def energy_drift(model, curve, stride=1):
    """Max drift of g(v, v) along the curve (conserved for geodesics)."""
    idxs = list(range(0, len(curve), max(1, stride)))
    if idxs[-1] != len(curve) - 1:
        idxs.append(len(curve) - 1)
    gms = _metrics_along(model, curve, idxs)
    vals = np.array([float(curve.velocities[idx] @ gms[pos] @ curve.velocities[idx])
                     for pos, idx in enumerate(idxs)])
    return float(np.max(np.abs(vals - vals[0])))


def reparametrization_invariance_check(model, curve, tol=1e-6):
    """Planarity is a property of the image, not the parametrization.

    The curve is reparametrized by the smooth monotone map
    s -> s^2 (3 - 2s) of the unit interval and the defect is recomputed on
    the reparametrized copy; the check passes iff both defects are below
    tolerance or both above.  Returns (passed, defect, reparam_defect).
    """
    if len(curve) < 5:
        raise InvalidInputError("need at least 5 samples")
    base = hplanarity_defect(model, curve)
    base_max = float(np.nanmax(base))

    t_end = float(curve.times[-1])
    dv = _fd_velocity_derivative(curve)
    idxs = list(range(2, len(curve) - 2))
    gammas = _gammas_along(model, curve, idxs)
    worst = 0.0
    for pos, idx in enumerate(idxs):
        pt = curve.points[idx]
        if pt.chart != curve.points[idx - 2].chart or \
           pt.chart != curve.points[idx + 2].chart:
            continue
        t = curve.times[idx]
        # invert t = t_end * s^2 (3 - 2 s) for s in [0, 1]
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if t_end * mid * mid * (3 - 2 * mid) < t:
                lo = mid
            else:
                hi = mid
        s = 0.5 * (lo + hi)
        td = t_end * (6 * s - 6 * s * s)
        tdd = t_end * (6 - 12 * s)
        if abs(td) < 1e-8:
            continue
        v = curve.velocities[idx]
        accel = dv[idx - 2] + np.einsum("ijk,j,k->i", gammas[pos], v, v)
        new_v = td * v
        new_acc = td * td * accel + tdd * v
        worst = max(worst, _wedge_defect(new_acc, new_v, model.j_matrix(pt.chart)))
    passed = (base_max <= tol) == (worst <= tol)
    return passed, base_max, worst


def rk4_order_ratio(model, x0, v0, alpha, beta, t_end, step):
    """Endpoint step-halving ratio |e(h) - e(h/2)| / |e(h/2) - e(h/4)|;
    close to 16 for a 4th-order integrator."""
    ends = []
    for h in (step, step / 2, step / 4):
        c = integrate_hplanar(model, x0, v0, alpha, beta, t_end, h)
        ends.append(c.points[-1].coords)
    e1 = np.linalg.norm(ends[0] - ends[1])
    e2 = np.linalg.norm(ends[1] - ends[2])
    if e2 == 0.0:
        return float("inf")
    return float(e1 / e2)
