"""Forward-mode second-order automatic differentiation.

A :class:`Jet` carries a value together with its gradient and (optionally)
Hessian with respect to ``m`` independent variables. Jets participate in
numpy ufunc dispatch, so a log-density written with ``np.log``,
``special.ndtri`` and friends can be evaluated on plain arrays or on jets
without modification. Only the ufuncs needed by the copula densities are
supported; anything else raises ``TypeError``.

Shapes: ``val`` has the broadcast shape ``S``, ``grad`` is ``(m, *S)`` and
``hess`` is ``(m, m, *S)``.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["Jet", "variables", "value"]


def _lift(arr: np.ndarray, lead: int, ndim: int) -> np.ndarray:
    """Insert singleton axes after the ``lead`` derivative axes so that the
    trailing shape has ``ndim`` dimensions."""
    extra = ndim - (arr.ndim - lead)
    if extra <= 0:
        return arr
    return arr.reshape(arr.shape[:lead] + (1,) * extra + arr.shape[lead:])


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, None] * b[None, :]


class Jet:
    __slots__ = ("val", "grad", "hess")

    def __init__(self, val, grad, hess=None):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = None if hess is None else np.asarray(hess, dtype=float)

    @property
    def nvars(self) -> int:
        return self.grad.shape[0]

    @property
    def order(self) -> int:
        return 1 if self.hess is None else 2

    def __repr__(self) -> str:
        return f"Jet(val={self.val!r}, nvars={self.nvars}, order={self.order})"

    # -- core propagation --------------------------------------------------

    def _chain(self, f, d1, d2=None) -> "Jet":
        """Apply a scalar function with value ``f`` and derivatives ``d1``, ``d2``."""
        nd = max(np.ndim(f), self.val.ndim)
        g = _lift(self.grad, 1, nd)
        grad = d1 * g
        hess = None
        if self.hess is not None:
            hess = d1 * _lift(self.hess, 2, nd) + d2 * _outer(g, g)
        return Jet(f, grad, hess)

    def _binary(self, other, f, fa, fb, faa, fab, fbb) -> "Jet":
        """Combine two jets given the partials of ``f(a, b)``."""
        nd = max(np.ndim(f), self.val.ndim, other.val.ndim)
        ga = _lift(self.grad, 1, nd)
        gb = _lift(other.grad, 1, nd)
        grad = fa * ga + fb * gb
        hess = None
        if self.hess is not None and other.hess is not None:
            ha = _lift(self.hess, 2, nd)
            hb = _lift(other.hess, 2, nd)
            cross = _outer(ga, gb)
            hess = (
                fa * ha + fb * hb + faa * _outer(ga, ga) + fbb * _outer(gb, gb)
                + fab * (cross + np.swapaxes(cross, 0, 1))
            )
        return Jet(f, grad, hess)

    def _const(self, c) -> "Jet":
        c = np.asarray(c, dtype=float)
        m = self.nvars
        grad = np.zeros((m,) + c.shape)
        hess = None if self.hess is None else np.zeros((m, m) + c.shape)
        return Jet(c, grad, hess)

    def _as_jet(self, x) -> "Jet":
        return x if isinstance(x, Jet) else self._const(x)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            nd = max(other.ndim, self.val.ndim)
            hess = None if self.hess is None else _lift(self.hess, 2, nd)
            return Jet(self.val + other, _lift(self.grad, 1, nd), hess)
        return self._binary(other, self.val + other.val, 1.0, 1.0, 0.0, 0.0, 0.0)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = np.asarray(other, dtype=float)
            nd = max(c.ndim, self.val.ndim)
            hess = None if self.hess is None else c * _lift(self.hess, 2, nd)
            return Jet(self.val * c, c * _lift(self.grad, 1, nd), hess)
        a, b = self.val, other.val
        return self._binary(other, a * b, b, a, 0.0, 1.0, 0.0)

    __rmul__ = __mul__

    def reciprocal(self):
        inv = 1.0 / self.val
        return self._chain(inv, -inv * inv, 2.0 * inv**3)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return (p * self.log()).exp()
        p = float(p)
        x = self.val
        return self._chain(x**p, p * x ** (p - 1.0), p * (p - 1.0) * x ** (p - 2.0))

    def __rpow__(self, base):
        return (self * np.log(base)).exp()

    # -- elementary functions ----------------------------------------------

    def log(self):
        x = self.val
        return self._chain(np.log(x), 1.0 / x, -1.0 / (x * x))

    def exp(self):
        e = np.exp(self.val)
        return self._chain(e, e, e)

    def log1p(self):
        x1 = 1.0 + self.val
        return self._chain(np.log1p(self.val), 1.0 / x1, -1.0 / (x1 * x1))

    def expm1(self):
        e = np.exp(self.val)
        return self._chain(np.expm1(self.val), e, e)

    def sqrt(self):
        s = np.sqrt(self.val)
        return self._chain(s, 0.5 / s, -0.25 / (s * self.val))

    def square(self):
        return self._chain(self.val**2, 2.0 * self.val, 2.0)

    def abs(self):
        s = np.sign(self.val)
        return self._chain(np.abs(self.val), s, 0.0)

    def gammaln(self):
        x = self.val
        return self._chain(special.gammaln(x), special.digamma(x), special.polygamma(1, x))

    def ndtri(self):
        x = special.ndtri(self.val)
        inv_phi = np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
        return self._chain(x, inv_phi, x * inv_phi * inv_phi)

    def ndtr(self):
        x = self.val
        phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return self._chain(special.ndtr(x), phi, -x * phi)

    def logaddexp(self, other):
        other = self._as_jet(other)
        f = np.logaddexp(self.val, other.val)
        pa = np.exp(self.val - f)
        pb = np.exp(other.val - f)
        v = pa * pb
        return self._binary(other, f, pa, pb, v, -v, v)

    # -- numpy dispatch -----------------------------------------------------

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        if ufunc is special.stdtrit:
            return _stdtrit(*inputs)
        handler = _UNARY.get(ufunc)
        if handler is not None and len(inputs) == 1:
            return handler(inputs[0])
        binary = _BINARY.get(ufunc)
        if binary is not None and len(inputs) == 2:
            a, b = inputs
            return binary(a, b)
        raise TypeError(f"ufunc {ufunc.__name__} is not supported on Jet")


def _logaddexp(a, b):
    if isinstance(a, Jet):
        return a.logaddexp(b)
    return b.logaddexp(a)


_UNARY = {
    np.log: Jet.log,
    np.exp: Jet.exp,
    np.log1p: Jet.log1p,
    np.expm1: Jet.expm1,
    np.sqrt: Jet.sqrt,
    np.square: Jet.square,
    np.negative: Jet.__neg__,
    np.absolute: Jet.abs,
    special.gammaln: Jet.gammaln,
    special.ndtri: Jet.ndtri,
    special.ndtr: Jet.ndtr,
}

_BINARY = {
    np.add: lambda a, b: a + b if isinstance(a, Jet) else b + a,
    np.subtract: lambda a, b: a - b if isinstance(a, Jet) else (-b) + a,
    np.multiply: lambda a, b: a * b if isinstance(a, Jet) else b * a,
    np.true_divide: lambda a, b: a / b if isinstance(a, Jet) else b.__rtruediv__(a),
    np.power: lambda a, b: a**b if isinstance(a, Jet) else b.__rpow__(a),
    np.logaddexp: _logaddexp,
}


# --- Student t quantile --------------------------------------------------------

_NU_STEP = 1e-3


def _t_pdf(x, nu):
    return np.exp(
        special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu)
        - 0.5 * np.log(nu * np.pi) - 0.5 * (nu + 1.0) * np.log1p(x * x / nu)
    )


def _stdtrit(nu, u):
    """Jet-aware ``t_nu^{-1}(u)``.

    The ``u`` partials are analytic. The ``nu`` partials use five-point
    central differences of scipy's quantile (step ``1e-3 * max(1, nu)``),
    accurate to about 1e-10 on the parameter range used here.
    """
    nu_j = nu if isinstance(nu, Jet) else None
    u_j = u if isinstance(u, Jet) else None
    nu_v = nu_j.val if nu_j is not None else np.asarray(nu, dtype=float)
    u_v = u_j.val if u_j is not None else np.asarray(u, dtype=float)
    x = special.stdtrit(nu_v, u_v)
    f = _t_pdf(x, nu_v)
    xu = 1.0 / f
    xuu = (nu_v + 1.0) * x / ((nu_v + x * x) * f * f)

    ref = nu_j if nu_j is not None else u_j
    nu_j = nu_j if nu_j is not None else ref._const(nu_v)
    u_j = u_j if u_j is not None else ref._const(u_v)

    if np.all(nu_j.grad == 0) and (nu_j.hess is None or np.all(nu_j.hess == 0)):
        xn = xnn = xnu = np.zeros_like(x)
    else:
        h = _NU_STEP * np.maximum(1.0, nu_v)
        xs = [special.stdtrit(nu_v + k * h, u_v) for k in (-2, -1, 1, 2)]
        xn = (xs[0] - 8 * xs[1] + 8 * xs[2] - xs[3]) / (12 * h)
        xnn = (-xs[0] + 16 * xs[1] - 30 * x + 16 * xs[2] - xs[3]) / (12 * h * h)
        inv = [1.0 / _t_pdf(xk, nu_v + k * h) for xk, k in zip(xs, (-2, -1, 1, 2))]
        xnu = (inv[0] - 8 * inv[1] + 8 * inv[2] - inv[3]) / (12 * h)
    return nu_j._binary(u_j, x, xn, xu, xnn, xnu, xuu)


# --- construction ---------------------------------------------------------------


def variables(values, order: int = 2) -> list[Jet]:
    """Independent jets seeded with unit gradients.

    ``values`` is a sequence of scalars or arrays (broadcast-compatible).
    Variable ``i`` has gradient ``e_i``.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    vals = [np.asarray(v, dtype=float) for v in values]
    m = len(vals)
    out = []
    for i, v in enumerate(vals):
        grad = np.zeros((m,) + v.shape)
        grad[i] = 1.0
        hess = np.zeros((m, m) + v.shape) if order == 2 else None
        out.append(Jet(v, grad, hess))
    return out


def value(x):
    """Plain value of a jet or number."""
    return x.val if isinstance(x, Jet) else x
