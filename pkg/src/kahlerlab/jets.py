"""Truncated multivariate Taylor arithmetic (forward-mode jets).

A :class:`Jet` stores the Taylor coefficients of a smooth function of
``nvars`` real variables around a base point, truncated at total degree
``order``::

    f(x0 + h) = sum_alpha  c_alpha * h**alpha,      c_alpha = d^alpha f / alpha!

Coefficients live in a numpy array of shape ``(ncoef, *payload)``, so a
single Jet can carry a whole tensor (payload = component shape) and all
operations broadcast over the payload.  Derivatives are read off the
coefficients exactly; the finite-difference functions at the bottom of the
module exist only as an independent cross-check of this backend.

Model metric functions are written against plain scalar arithmetic
(``+ - * /`` and ``**``), so the same code runs on floats, on numpy arrays
(batched evaluation) and on Jets (derivative evaluation).
"""

import itertools
import math
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError


@lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> "JetSpace":
    return JetSpace(nvars, order)


class JetSpace:
    """Multi-index bookkeeping for jets in ``nvars`` variables at total
    degree <= ``order``.

    Exponent tuples are enumerated by total degree first, so the exponents
    of ``jet_space(m, p-1)`` are a prefix of those of ``jet_space(m, p)``
    and truncation is a coefficient slice.
    """

    def __init__(self, nvars, order):
        if nvars < 1 or order < 0:
            raise InvalidInputError(f"bad jet space ({nvars}, {order})")
        self.nvars = nvars
        self.order = order
        exps = []
        for deg in range(order + 1):
            block = [e for e in itertools.product(range(deg + 1), repeat=nvars)
                     if sum(e) == deg]
            block.sort(reverse=True)
            exps.extend(block)
        self.exponents = tuple(exps)
        self.ncoef = len(exps)
        self.index = {e: i for i, e in enumerate(exps)}
        self._degree = np.array([sum(e) for e in exps])
        # alpha! per coefficient, for partial-derivative extraction
        self._factorial = np.array([float(np.prod([math.factorial(k) for k in e]))
                                    for e in exps])
        self._build_mul_table()
        self._shift_cache = {}
        self._part_cache = {}

    def _build_mul_table(self):
        ia, ib, ic = [], [], []
        for i, ei in enumerate(self.exponents):
            di = sum(ei)
            for j, ej in enumerate(self.exponents):
                if di + sum(ej) > self.order:
                    continue
                ia.append(i)
                ib.append(j)
                ic.append(self.index[tuple(a + b for a, b in zip(ei, ej))])
        self._mia = np.array(ia)
        self._mib = np.array(ib)
        self._mic = np.array(ic)

    def shift_table(self, var):
        """Index maps implementing d/dx_var as a series in the order-1 lower space."""
        if var not in self._shift_cache:
            lower = jet_space(self.nvars, self.order - 1)
            src, dst, fac = [], [], []
            for i, e in enumerate(lower.exponents):
                e_up = list(e)
                e_up[var] += 1
                src.append(self.index[tuple(e_up)])
                dst.append(i)
                fac.append(float(e_up[var]))
            self._shift_cache[var] = (np.array(src), np.array(dst), np.array(fac))
        return self._shift_cache[var]

    def partial_index(self, r):
        """Coefficient index array of shape (nvars,)*r for the order-r partials."""
        if r not in self._part_cache:
            m = self.nvars
            idx = np.empty((m,) * r, dtype=int)
            fac = np.empty((m,) * r)
            for ks in itertools.product(range(m), repeat=r):
                e = [0] * m
                for k in ks:
                    e[k] += 1
                idx[ks] = self.index[tuple(e)]
                fac[ks] = self._factorial[idx[ks]]
            self._part_cache[r] = (idx, fac)
        return self._part_cache[r]


class Jet:
    __slots__ = ("space", "coef")
    __array_ufunc__ = None  # keep numpy from consuming us; defer to __r*__

    def __init__(self, space, coef):
        self.space = space
        self.coef = coef

    # -- constructors -------------------------------------------------
    @staticmethod
    def constant(space, value):
        value = np.asarray(value, dtype=float)
        coef = np.zeros((space.ncoef,) + value.shape)
        coef[0] = value
        return Jet(space, coef)

    @staticmethod
    def variable(space, value, var):
        j = Jet.constant(space, value)
        if space.order >= 1:
            e = tuple(1 if k == var else 0 for k in range(space.nvars))
            j.coef[space.index[e]] = 1.0
        return j

    @property
    def const(self):
        return self.coef[0]

    @property
    def payload_shape(self):
        return self.coef.shape[1:]

    # -- structure ----------------------------------------------------
    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.space, self.coef[(slice(None),) + idx])

    def reshape(self, *shape):
        return Jet(self.space, self.coef.reshape((self.space.ncoef,) + tuple(shape)))

    def truncate(self, order):
        if order > self.space.order:
            raise InvalidInputError("cannot truncate upward")
        lower = jet_space(self.space.nvars, order)
        return Jet(lower, self.coef[:lower.ncoef])

    def partial(self, var):
        """The jet of d(self)/dx_var, one order lower."""
        if self.space.order < 1:
            raise InvalidInputError("order-0 jet has no derivatives")
        src, dst, fac = self.space.shift_table(var)
        lower = jet_space(self.space.nvars, self.space.order - 1)
        coef = np.zeros((lower.ncoef,) + self.payload_shape)
        coef[dst] = self.coef[src] * fac.reshape((-1,) + (1,) * len(self.payload_shape))
        return Jet(lower, coef)

    def gradient(self):
        """Jet with payload gaining a trailing axis of length nvars: d/dx_k."""
        parts = [self.partial(v).coef for v in range(self.space.nvars)]
        return Jet(jet_space(self.space.nvars, self.space.order - 1),
                   np.stack(parts, axis=-1))

    def derivatives(self, r):
        """Exact order-r partial derivatives at the base point.

        Returns an array of shape (*payload, nvars, ..., nvars) with r
        trailing derivative axes, symmetric in them.
        """
        if r > self.space.order:
            raise InvalidInputError(f"jet of order {self.space.order} has no order-{r} partials")
        idx, fac = self.space.partial_index(r)
        # coef has shape (ncoef, *payload); fancy-index the leading axis,
        # then move the derivative axes behind the payload.
        arr = self.coef[idx]            # (m,)*r + payload
        arr = arr * fac.reshape(fac.shape + (1,) * len(self.payload_shape))
        return np.moveaxis(arr, tuple(range(r)), tuple(range(-r, 0)))

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = _match(self, other)
            return Jet(a.space, a.coef + b.coef)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.payload_shape, other.shape)
        coef = np.broadcast_to(self.coef, (self.space.ncoef,) + shape).copy()
        coef[0] = coef[0] + other
        return Jet(self.space, coef)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coef)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = _match(self, other)
            s = a.space
            prods = a.coef[s._mia] * b.coef[s._mib]
            out = np.zeros((s.ncoef,) + prods.shape[1:])
            np.add.at(out, s._mic, prods)
            return Jet(s, out)
        return Jet(self.space, self.coef * np.asarray(other, dtype=float))

    __rmul__ = __mul__

    def reciprocal(self):
        c0 = self.coef[0]
        if np.any(np.abs(c0) < 1e-300):
            raise ZeroDivisionError("jet reciprocal at vanishing value")
        r = Jet.constant(self.space, 1.0 / c0)
        iters = max(1, math.ceil(math.log2(self.space.order + 1)))
        for _ in range(iters):
            r = r * (2.0 - self * r)
        return r

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.space, self.coef / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) or (isinstance(p, float) and p == int(p) and p >= 0):
            k = int(p)
            out = Jet.constant(self.space, np.ones(self.payload_shape))
            base = self
            while k:
                if k & 1:
                    out = out * base
                base = base * base
                k >>= 1
            return out
        return (self.log() * p).exp()

    def log(self):
        c0 = self.coef[0]
        if np.any(c0 <= 0.0):
            raise InvalidInputError("jet log of non-positive value")
        t = self / c0 - 1.0          # nilpotent part
        acc = Jet.constant(self.space, np.zeros(self.payload_shape))
        term = t
        for k in range(1, self.space.order + 1):
            acc = acc + term * ((-1.0) ** (k + 1) / k)
            if k < self.space.order:
                term = term * t
        return acc + np.log(c0)

    def exp(self):
        c0 = self.coef[0]
        t = self - c0                # nilpotent part
        acc = Jet.constant(self.space, np.ones(self.payload_shape))
        term = Jet.constant(self.space, np.ones(self.payload_shape))
        for k in range(1, self.space.order + 1):
            term = term * t * (1.0 / k)
            acc = acc + term
        return acc * np.exp(c0)

    def sqrt(self):
        return self ** 0.5

    def __repr__(self):
        return f"Jet(m={self.space.nvars}, p={self.space.order}, payload={self.payload_shape})"


def _match(a, b):
    """Bring two jets to a common (minimum) order."""
    if a.space is b.space:
        return a, b
    if a.space.nvars != b.space.nvars:
        raise InvalidInputError("jets over different variable counts")
    p = min(a.space.order, b.space.order)
    return a.truncate(p), b.truncate(p)


# -- generic scalar helpers (work on floats, arrays and Jets) -----------

def jsqrt(x):
    """sqrt usable inside scalar-generic model/field formulas."""
    return x.sqrt() if isinstance(x, Jet) else np.sqrt(x)


def jlog(x):
    """log usable inside scalar-generic model/field formulas."""
    return x.log() if isinstance(x, Jet) else np.log(x)


def jexp(x):
    """exp usable inside scalar-generic model/field formulas."""
    return x.exp() if isinstance(x, Jet) else np.exp(x)


class CNum:
    """Complex number over generic real scalars (float, array or Jet).

    Only the rational operations needed by the chart formulas.
    """

    __slots__ = ("re", "im")

    def __init__(self, re, im=0.0):
        self.re = re
        self.im = im

    def conj(self):
        return CNum(self.re, -self.im)

    def abs2(self):
        return self.re * self.re + self.im * self.im

    def __add__(self, other):
        other = _as_cnum(other)
        return CNum(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __neg__(self):
        return CNum(-self.re, -self.im)

    def __sub__(self, other):
        return self + (-_as_cnum(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = _as_cnum(other)
        return CNum(self.re * other.re - self.im * other.im,
                    self.re * other.im + self.im * other.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_cnum(other)
        d = other.abs2()
        num = self * other.conj()
        return CNum(num.re / d, num.im / d)

    def __rtruediv__(self, other):
        return _as_cnum(other) / self


def _as_cnum(x):
    if isinstance(x, CNum):
        return x
    if isinstance(x, complex):
        return CNum(x.real, x.imag)
    return CNum(x, 0.0)


# -- evaluation of scalar-generic functions ------------------------------

def jet_variables(space, x0):
    return [Jet.variable(space, float(x0[i]) if np.ndim(x0[i]) == 0 else np.asarray(x0[i], float), i)
            for i in range(space.nvars)]


def jet_pack(space, nested):
    """Pack a nested list structure of Jets/numbers into one payload Jet."""
    def leaf(node):
        if isinstance(node, Jet):
            return node.coef
        coef = np.zeros((space.ncoef,) + np.shape(node))
        coef[0] = node
        return coef

    def walk(node):
        if isinstance(node, (list, tuple)):
            parts = [walk(ch) for ch in node]
            shape = np.broadcast_shapes(*(p.shape[1:] for p in parts))
            parts = [np.broadcast_to(p, (space.ncoef,) + shape) for p in parts]
            return np.stack(parts, axis=1)
        return leaf(node)

    return Jet(space, walk(nested))


def jet_eval(fn, x0, order):
    """Evaluate a scalar-generic function at a jet point.

    ``fn`` maps a list of scalars to a (possibly nested) structure of
    scalars; the result is a single Jet whose payload shape mirrors the
    structure.
    """
    space = jet_space(len(x0), order)
    out = fn(jet_variables(space, x0))
    return jet_pack(space, out)


# -- contractions on jet-valued tensors ----------------------------------

def jet_einsum(subscripts, a, b):
    """Binary einsum over payload axes of two jets (or a jet and an array)."""
    lhs, out_sub = subscripts.split("->")
    sa, sb = lhs.split(",")
    if isinstance(a, Jet) and isinstance(b, Jet):
        a, b = _match(a, b)
        s = a.space
        prods = np.einsum(f"t{sa},t{sb}->t{out_sub}", a.coef[s._mia], b.coef[s._mib])
        out = np.zeros((s.ncoef,) + prods.shape[1:])
        np.add.at(out, s._mic, prods)
        return Jet(s, out)
    if isinstance(a, Jet):
        return Jet(a.space, np.einsum(f"t{sa},{sb}->t{out_sub}", a.coef, np.asarray(b, float)))
    if isinstance(b, Jet):
        return Jet(b.space, np.einsum(f"{sa},t{sb}->t{out_sub}", np.asarray(a, float), b.coef))
    return np.einsum(subscripts, a, b)


def contract(subscripts, a, b):
    """einsum that dispatches on operand type (floats or jets)."""
    if isinstance(a, Jet) or isinstance(b, Jet):
        return jet_einsum(subscripts, a, b)
    return np.einsum(subscripts, a, b)


def jet_matmul(a, b):
    return jet_einsum("...ij,...jk->...ik", a, b)


def jet_matrix_inverse(a):
    """Inverse of a jet-valued matrix (payload (..., k, k)) by Newton iteration."""
    x = Jet.constant(a.space, np.linalg.inv(a.const))
    iters = max(1, math.ceil(math.log2(a.space.order + 1)))
    eye = np.eye(a.payload_shape[-1])
    for _ in range(iters):
        x = jet_matmul(x, Jet.constant(a.space, 2.0 * eye) - jet_matmul(a, x))
    return x


def generic_det(mat):
    """Determinant over generic scalars by LU with pivoting on the value part.

    ``mat`` is a square nested list (or array) of floats/Jets.
    """
    rows = [list(r) for r in mat]
    n = len(rows)

    def mag(x):
        v = x.const if isinstance(x, Jet) else x
        return float(np.max(np.abs(v))) if np.ndim(v) else abs(float(v))

    det = 1.0
    for c in range(n):
        p = max(range(c, n), key=lambda r: mag(rows[r][c]))
        if mag(rows[p][c]) == 0.0:
            return 0.0 * rows[0][0]
        if p != c:
            rows[c], rows[p] = rows[p], rows[c]
            det = det * -1.0
        det = det * rows[c][c]
        inv_piv = 1.0 / rows[c][c] if not isinstance(rows[c][c], Jet) else rows[c][c].reciprocal()
        for r in range(c + 1, n):
            f = rows[r][c] * inv_piv
            rows[r] = [rows[r][k] - f * rows[c][k] for k in range(n)]
    return det


def jet_det(a):
    """Determinant of a jet-valued matrix with payload exactly (k, k)."""
    k = a.payload_shape[-1]
    return generic_det([[a[i, j] for j in range(k)] for i in range(k)])


# -- finite-difference cross-check backend --------------------------------

_FD4 = (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0)


def fd_gradient(fn, x, step=1e-4):
    """4th-order central first partials of fn (vector -> array) at x."""
    x = np.asarray(x, dtype=float)
    offs, weights = _FD4
    cols = []
    for v in range(len(x)):
        acc = 0.0
        for o, w in zip(offs, weights):
            xp = x.copy()
            xp[v] += o * step
            acc = acc + w * np.asarray(fn(list(xp)), dtype=float)
        cols.append(acc / step)
    return np.stack(cols, axis=-1)


def fd_hessian(fn, x, step=1e-3):
    """4th-order central second partials (gradient of the FD gradient)."""
    return fd_gradient(lambda y: fd_gradient(fn, y, step), x, step)
