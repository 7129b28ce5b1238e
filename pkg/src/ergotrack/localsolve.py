"""
Solvers for the one-dimensional ergodic control problems with frozen
coefficients.

The state is a Brownian motion with variance rate ``a`` that is steered
toward zero.  Running cost is ``r x^2 + l u^2``; interventions cost
``k + h |xi|`` (jumps) or ``h`` per unit of pushing (reflection).  Five
control classes are covered: regular (drift control), singular
(reflection), impulse (jumps) and regular control combined with either
jumps or reflection.

The combined classes have no elementary closed form.  Their value function
is built from Kummer's function and the free parameters (iota, U, xi) are
pinned down by bracketed root finding, see :func:`find_iota`.
"""
import enum
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .errors import ParameterError, RootFindingError
from .specfun import log_kummer_1f1

XTOL = 1e-12
MAX_ITER = 400
N_TABLE = 2001
_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


class ControlClass(str, enum.Enum):
    REGULAR = "regular"
    SINGULAR = "singular"
    IMPULSE = "impulse"
    COMBINED_IMPULSE = "combined_impulse"
    COMBINED_SINGULAR = "combined_singular"

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"combinedimpulse": "combined_impulse", "combinedsingular": "combined_singular"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown control class {tag!r}") from None

    @property
    def has_regular(self):
        return self in (ControlClass.REGULAR, ControlClass.COMBINED_IMPULSE,
                        ControlClass.COMBINED_SINGULAR)

    @property
    def has_jumps(self):
        return self in (ControlClass.IMPULSE, ControlClass.COMBINED_IMPULSE)

    @property
    def has_reflection(self):
        return self in (ControlClass.SINGULAR, ControlClass.COMBINED_SINGULAR)


_REQUIRED = {
    ControlClass.REGULAR: ("l",),
    ControlClass.SINGULAR: ("h",),
    ControlClass.IMPULSE: ("k",),
    ControlClass.COMBINED_IMPULSE: ("l", "k"),
    ControlClass.COMBINED_SINGULAR: ("l", "h"),
}


@dataclass(frozen=True)
class ModelParams:
    """Frozen coefficients (a, r, l, k, h) of one ergodic problem."""

    a: float
    r: float
    l: float = 0.0
    k: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        for name in ("a", "r", "l", "k", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise ParameterError(f"{name} must be a finite real, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.a <= 0:
            raise ParameterError("a must be > 0")
        if self.r <= 0:
            raise ParameterError("r must be > 0")
        for name in ("l", "k", "h"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    def require(self, cls):
        cls = ControlClass.parse(cls)
        for name in _REQUIRED[cls]:
            if getattr(self, name) <= 0:
                raise ParameterError(f"class {cls.value} requires {name} > 0")
        return cls

    def scaled(self, lam):
        """Same diffusion, all cost weights multiplied by ``lam``."""
        return ModelParams(self.a, lam * self.r, lam * self.l, lam * self.k, lam * self.h)

    def as_dict(self):
        return {"a": self.a, "r": self.r, "l": self.l, "k": self.k, "h": self.h}


class BoundaryAtom(NamedTuple):
    """Atom of the intervention measure.

    ``jump`` is the signed jump for impulse classes and the push direction
    (+1 or -1) for reflection classes.
    """

    location: float
    jump: float
    mass: float


# ----------------------------------------------------------------------
# densities

def _gl_panels(lo, hi, n_panels=1):
    """Gauss-Legendre nodes/weights on [lo, hi] split into equal panels."""
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


@dataclass(frozen=True)
class DensityProfile:
    """Stationary density of the optimally controlled state.

    ``kind`` is one of ``gaussian``, ``uniform``, ``trapezoid`` or
    ``tabulated``.  Tabulated profiles keep the exact density as ``func``
    next to the table on ``grid``; ``breaks`` lists the kinks inside the
    support so quadrature can split there.
    """

    kind: str
    support: tuple
    params: dict = field(default_factory=dict)
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    func: Optional[Callable] = None
    breaks: tuple = ()

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        if self.kind == "gaussian":
            s2 = self.params["sigma2"]
            out = np.exp(-0.5 * x * x / s2) / math.sqrt(2 * math.pi * s2)
        elif self.kind == "uniform":
            U = self.params["U"]
            out = np.where(np.abs(x) <= U, 0.5 / U, 0.0)
        elif self.kind == "trapezoid":
            xt, xs = self.params["x_tilde"], self.params["x_star"]
            top = 1.0 / (xs + xt)
            ax = np.abs(x)
            ramp = top * (xs - ax) / (xs - xt)
            out = np.where(ax <= xt, top, np.where(ax <= xs, ramp, 0.0))
        else:
            inside = (x >= lo) & (x <= hi)
            xc = np.clip(x, lo, hi)
            out = np.where(inside, self.func(xc), 0.0)
        return out[()] if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            out = ndtr(x / math.sqrt(self.params["sigma2"]))
        elif self.kind == "uniform":
            U = self.params["U"]
            out = np.clip((x + U) / (2 * U), 0.0, 1.0)
        elif self.kind == "trapezoid":
            xt, xs = self.params["x_tilde"], self.params["x_star"]
            top = 1.0 / (xs + xt)
            ax = np.minimum(np.abs(x), xs)
            # mass of [0, |x|]
            flat = top * np.minimum(ax, xt)
            d = np.maximum(ax - xt, 0.0)
            ramp = top * (d - 0.5 * d * d / (xs - xt))
            half = flat + ramp
            out = 0.5 + np.sign(x) * half
        else:
            xs = np.atleast_1d(x)
            out = np.array([self._integrate(self.support[0], min(v, self.support[1]))
                            if v > self.support[0] else 0.0 for v in xs])
            out = out.reshape(np.shape(x))
        return out[()] if np.ndim(out) == 0 else out

    def _integrate(self, lo, hi):
        if hi <= lo:
            return 0.0
        pts = [lo] + [b for b in self.breaks if lo < b < hi] + [hi]
        total = 0.0
        for p, q in zip(pts[:-1], pts[1:]):
            x, w = _gl_panels(p, q, 4)
            total += float(np.dot(w, self.func(x)))
        return total

    def bin_masses(self, edges):
        """Probability of each bin ``[edges[i], edges[i+1])``."""
        edges = np.asarray(edges, dtype=float)
        if self.kind != "tabulated":
            return np.diff(self.cdf(edges))
        lo, hi = self.support
        out = np.empty(edges.size - 1)
        for i in range(edges.size - 1):
            out[i] = self._integrate(max(edges[i], lo), min(edges[i + 1], hi))
        return out

    def total_mass(self):
        lo, hi = self.support
        if self.kind == "gaussian":
            return 1.0
        if self.kind == "tabulated":
            return self._integrate(lo, hi)
        return float(self.cdf(hi) - self.cdf(lo))

    def variance(self):
        if self.kind == "gaussian":
            return self.params["sigma2"]
        if self.kind == "uniform":
            return self.params["U"] ** 2 / 3.0
        lo, hi = self.support
        pts = [lo] + [b for b in self.breaks if lo < b < hi] + [hi]
        if self.kind == "trapezoid":
            xt, xs = self.params["x_tilde"], self.params["x_star"]
            pts = sorted({lo, -xt, xt, hi})
        total = 0.0
        for p, q in zip(pts[:-1], pts[1:]):
            x, w = _gl_panels(p, q, 4)
            total += float(np.dot(w, x * x * self.pdf(x)))
        return total


@dataclass(frozen=True)
class LocalSolution:
    """Optimal cost and policy data of one frozen-coefficient problem.

    For pure impulse control ``U`` is the trigger level x*, ``x_tilde`` the
    landing point and ``xi_star = U - x_tilde``.  For the regular class
    ``theta`` is the feedback gain.  Combined classes also carry
    ``omega = 1 - iota`` at full precision.
    """

    cls: ControlClass
    params: ModelParams
    cost: float
    density: DensityProfile
    iota: Optional[float] = None
    U: Optional[float] = None
    xi_star: Optional[float] = None
    x_tilde: Optional[float] = None
    theta1: Optional[float] = None
    theta2: Optional[float] = None
    theta: Optional[float] = None
    omega: Optional[float] = None
    feedback: Optional[Callable] = None
    boundary_measure: tuple = ()

    def policy_summary(self):
        keys = ("cost", "iota", "U", "xi_star", "x_tilde", "theta1", "theta2", "theta")
        out = {"class": self.cls.value}
        out.update({k: getattr(self, k) for k in keys if getattr(self, k) is not None})
        out["boundary_measure"] = [list(map(float, b)) for b in self.boundary_measure]
        return out


# ----------------------------------------------------------------------
# root finding

def _root(f, lo, hi, flo=None, fhi=None, xtol=XTOL, what="root"):
    """Root of ``f`` on a sign-changing bracket [lo, hi] (Brent's method).

    The bracket is checked first so failures carry the endpoint values.
    """
    flo = f(lo) if flo is None else flo
    fhi = f(hi) if fhi is None else fhi
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise RootFindingError(f"{what}: no sign change on bracket",
                               lo=lo, hi=hi, f_lo=flo, f_hi=fhi)
    try:
        return brentq(f, lo, hi, xtol=xtol * 1e-3, rtol=max(xtol, 4e-16), maxiter=MAX_ITER)
    except RuntimeError as exc:
        raise RootFindingError(f"{what}: {exc}", lo=lo, hi=hi) from None


# ----------------------------------------------------------------------
# closed forms

def _gaussian(sigma2):
    s = math.sqrt(sigma2)
    return DensityProfile("gaussian", (-math.inf, math.inf), {"sigma2": sigma2})


def _linear_feedback(theta, x):
    return -theta * np.asarray(x, dtype=float)


def solve_regular(p: ModelParams) -> LocalSolution:
    """Drift control only: Gaussian stationary law under u = -theta x."""
    p.require(ControlClass.REGULAR)
    theta = math.sqrt(p.r / p.l)
    cost = math.sqrt(p.a * p.a * p.r * p.l)
    return LocalSolution(ControlClass.REGULAR, p, cost, _gaussian(p.a / (2 * theta)),
                         theta=theta, feedback=partial(_linear_feedback, theta))


def solve_singular(p: ModelParams) -> LocalSolution:
    """Reflection at +-U; uniform stationary law."""
    p.require(ControlClass.SINGULAR)
    cost = (0.75 * p.a * math.sqrt(p.r) * p.h) ** (2.0 / 3.0)
    U = (0.75 * p.a * p.h / p.r) ** (1.0 / 3.0)
    m = p.a / (4 * U)
    dens = DensityProfile("uniform", (-U, U), {"U": U})
    atoms = (BoundaryAtom(-U, 1.0, m), BoundaryAtom(U, -1.0, m))
    return LocalSolution(ControlClass.SINGULAR, p, cost, dens, U=U, xi_star=0.0,
                         boundary_measure=atoms)


def impulse_system_residuals(p: ModelParams, theta1, theta2, x_tilde, x_star):
    """Residuals of the four polynomial conditions for pure impulse control."""
    P = lambda x: theta1 * x ** 4 + theta2 * x ** 2
    dP = lambda x: 4 * theta1 * x ** 3 + 2 * theta2 * x
    return np.array([
        6 * p.a * theta1 + p.r,
        dP(x_star) - p.h,
        dP(x_tilde) - p.h,
        P(x_star) - P(x_tilde) - p.k - p.h * (x_star - x_tilde),
    ])


def solve_impulse(p: ModelParams) -> LocalSolution:
    """Jumps from +-x* to +-x_tilde; quartic value function, trapezoid law.

    With ``h = 0`` the landing point is the origin and theta2 is explicit;
    otherwise theta2 is found by root finding on the cost-balance condition.
    """
    p.require(ControlClass.IMPULSE)
    a, r, k, h = p.a, p.r, p.k, p.h
    th1 = -r / (6 * a)
    if h == 0:
        th2 = math.sqrt(2 * k * r / (3 * a))
        xt = 0.0
        xs = math.sqrt(3 * a * th2 / r)
    else:
        def crossings(th2):
            # P'(x) - h = 2 th2 x - (2r/3a) x^3 - h, maximal at xm
            f = lambda x: 2 * th2 * x - (2 * r / (3 * a)) * x ** 3 - h
            xm = math.sqrt(a * th2 / r)
            xz = math.sqrt(3 * a * th2 / r)
            x1 = _root(f, 0.0, xm, what="impulse inner crossing")
            x2 = _root(f, xm, xz, what="impulse outer crossing")
            return x1, x2

        def excess(th2):
            x1, x2 = crossings(th2)
            P = lambda x: th1 * x ** 4 + th2 * x ** 2
            return P(x2) - P(x1) - h * (x2 - x1) - k

        th_min = (0.75 * h * math.sqrt(r / a)) ** (2.0 / 3.0)
        lo = th_min * (1 + 1e-12)
        hi = max(2 * th_min, math.sqrt(2 * k * r / (3 * a)) + th_min)
        for _ in range(200):
            if excess(hi) > 0:
                break
            lo, hi = hi, 2 * hi
        else:
            raise RootFindingError("impulse: could not bracket theta2", lo=lo, hi=hi)
        th2 = _root(excess, lo, hi, what="impulse theta2")
        xt, xs = crossings(th2)
    cost = a * th2
    dens = DensityProfile("trapezoid", (-xs, xs), {"x_tilde": xt, "x_star": xs})
    m = 0.5 * a / (xs * xs - xt * xt)
    atoms = (BoundaryAtom(-xs, xs - xt, m), BoundaryAtom(xs, -(xs - xt), m))
    return LocalSolution(ControlClass.IMPULSE, p, cost, dens, U=xs, xi_star=xs - xt,
                         x_tilde=xt, theta1=th1, theta2=th2, boundary_measure=atoms)


# ----------------------------------------------------------------------
# combined classes: value-function profile
#
# Internally the profile is parametrized by omega = 1 - iota, which keeps
# full relative precision when iota is extremely close to 1 (large h or k).

def _zscale(p):
    # z = c x^2 with c = sqrt(r/l)/a
    return math.sqrt(p.r / p.l) / p.a


def _g(z, om):
    a0 = 0.25 * om
    out = np.exp(log_kummer_1f1(a0 + 1, 1.5, z) - log_kummer_1f1(a0, 0.5, z))
    return out[()] if isinstance(out, np.ndarray) else out


def _gp(z, om):
    a0 = 0.25 * om
    l0 = log_kummer_1f1(a0, 0.5, z)
    g = np.exp(log_kummer_1f1(a0 + 1, 1.5, z) - l0)
    f2 = np.exp(log_kummer_1f1(a0 + 2, 2.5, z) - l0)
    out = (2.0 * (a0 + 1) / 3.0) * f2 - 2 * a0 * g * g
    return out[()] if isinstance(out, np.ndarray) else out


def _h(x, om, p):
    x = np.asarray(x, dtype=float)
    s = 2 * math.sqrt(p.r * p.l)
    out = s * x * (1 - om * _g(_zscale(p) * x * x, om))
    return out[()] if out.ndim == 0 else out


def _hp(x, om, p):
    x = np.asarray(x, dtype=float)
    s = 2 * math.sqrt(p.r * p.l)
    z = _zscale(p) * x * x
    out = s * (1 - om * _g(z, om) - 2 * om * z * _gp(z, om))
    return out[()] if out.ndim == 0 else out


def _w(x, om, p):
    x = np.asarray(x, dtype=float)
    z = _zscale(p) * x * x
    out = math.sqrt(p.r * p.l) * x * x - 2 * p.a * p.l * log_kummer_1f1(0.25 * om, 0.5, z)
    return out[()] if out.ndim == 0 else out


def g_function(z, iota):
    """Ratio 1F1(a0+1; 3/2; z) / 1F1(a0; 1/2; z) with a0 = (1 - iota)/4."""
    return _g(z, 1.0 - iota)


def g_prime(z, iota):
    """Derivative of :func:`g_function` in z."""
    return _gp(z, 1.0 - iota)


def h_function(x, iota, p: ModelParams):
    """Derivative w'(x) of the combined-class value function on x >= 0."""
    return _h(x, 1.0 - iota, p)


def h_prime(x, iota, p: ModelParams):
    """Second derivative w''(x), analytic in terms of g and g'."""
    return _hp(x, 1.0 - iota, p)


def w_profile(x, iota, p: ModelParams):
    """sqrt(rl) x^2 - 2 a l log 1F1((1-iota)/4; 1/2; c x^2) (no linear extension)."""
    return _w(x, 1.0 - iota, p)


def _first_zero(om, p):
    c = _zscale(p)
    phi = lambda z: om * _g(z, om) - 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if phi(hi) > 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise RootFindingError("no zero of h found", omega=om, z_hi=hi)
    f = lambda x: -phi(c * x * x)
    return _root(f, math.sqrt(lo / c), math.sqrt(hi / c), what="first zero of h")


def _h_max(om, p, xbar=None):
    xbar = _first_zero(om, p) if xbar is None else xbar
    U = _root(lambda x: _hp(x, om, p), 0.0, xbar, what="argmax of h")
    return U, float(_h(U, om, p))


def first_zero(iota, p: ModelParams):
    """First positive zero of h(.; iota), by geometric scan then Brent iteration."""
    return _first_zero(1.0 - iota, p)


def h_max(iota, p: ModelParams):
    """(argmax, max) of h(.; iota) on [0, x_bar]; h is concave there."""
    return _h_max(1.0 - iota, p)


def _crossings(om, p):
    """Points x1 <= U_max <= x2 with h(x) = p.h, plus x_bar."""
    xbar = _first_zero(om, p)
    if p.h == 0:
        return 0.0, xbar, xbar
    xm, hm = _h_max(om, p, xbar)
    if hm < p.h:
        raise RootFindingError("max h below proportional cost", omega=om, h_max=hm, h=p.h)
    f = lambda x: float(_h(x, om, p)) - p.h
    x1 = _root(f, 0.0, xm, what="rising crossing")
    x2 = _root(f, xm, xbar, what="falling crossing")
    return x1, x2, xbar


def _K(om, p):
    x1, x2, _ = _crossings(om, p)
    return float(_w(x2, om, p) - _w(x1, om, p)) - p.h * (x2 - x1)


def K_integral(iota, p: ModelParams):
    """Excess area  int_{x1}^{x2} (h(x) - h) dx  between the two crossings.

    Evaluated exactly through the antiderivative w.
    """
    return _K(1.0 - iota, p)


class IotaResult(NamedTuple):
    iota: float
    U: float
    xi_star: float
    omega: float  # 1 - iota, kept separately for precision


IOTA_MARGIN = 1e-6
OMEGA_MIN = 1e-300


def _root_log(f, om_lo, om_hi, what):
    """Root in log(omega) for a function decreasing in omega."""
    g = lambda t: f(math.exp(t))
    t = _root(g, math.log(om_lo), math.log(om_hi), xtol=1e-14, what=what)
    return math.exp(t)


def find_iota(p: ModelParams, cls) -> IotaResult:
    """Free-boundary parameters (iota, U, xi_star) of a combined class.

    For jumps (k > 0) the two crossings of h with the proportional cost
    enclose an excess area equal to k; U is the outer crossing and
    xi_star their distance.  For reflection (k treated as 0), U is where
    h peaks at exactly the proportional cost and xi_star = 0.
    """
    cls = p.require(cls)
    if cls is ControlClass.COMBINED_IMPULSE:
        # largest omega whose profile still reaches h
        if p.h == 0:
            om_top = 1.0
        else:
            om_top = _root_log(lambda om: _h_max(om, p)[1] - p.h, OMEGA_MIN, 1 - 1e-12,
                                 what="iota lower bound")
        hi = om_top * (1 - IOTA_MARGIN)
        f = lambda om: _K(om, p) - p.k
        if f(hi) < 0:
            om = _root_log(f, OMEGA_MIN, hi, what="iota (K = k)")
        else:
            om = _root_log(f, OMEGA_MIN, om_top * (1 - 1e-13), what="iota (K = k)")
        x1, x2, _ = _crossings(om, p)
        return IotaResult(1.0 - om, x2, x2 - x1, om)
    if cls is ControlClass.COMBINED_SINGULAR:
        f = lambda om: _h_max(om, p)[1] - p.h
        om = _root_log(f, OMEGA_MIN, 1 - IOTA_MARGIN, what="iota (max h = h)")
        U, _ = _h_max(om, p)
        return IotaResult(1.0 - om, U, 0.0, om)
    raise ParameterError(f"find_iota needs a combined class, got {cls.value}")


# stationary law of the combined classes

def _combined_feedback(p, om, U, x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    inner = _h(np.minimum(ax, U), om, p)
    out = -np.sign(x) * np.where(ax <= U, inner, p.h) / (2 * p.l)
    return out[()] if out.ndim == 0 else out


class _CombinedDensity:
    """Exact stationary density p(x) = q(|x|)/Z for a combined class."""

    def __init__(self, p, cls, om, U, xi_star):
        self.p, self.cls, self.om, self.U = p, cls, om, U
        self.xm = U - xi_star if cls is ControlClass.COMBINED_IMPULSE else U
        self.scale = p.a * p.l
        self.phi_xm = float(_w(self.xm, om, p)) / self.scale
        self.Z = 1.0
        self.Z = 2 * self._mass(0.0, U)

    def _phi(self, x):
        return _w(x, self.om, self.p) / self.scale

    def q(self, x):
        """Unnormalized density on x >= 0."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        mid = x <= self.xm
        out[mid] = np.exp(-self._phi(x[mid]))
        if self.cls is ControlClass.COMBINED_IMPULSE:
            out[mid] *= self._tail(np.array([self.xm]))[0] * math.exp(self.phi_xm)
            if (~mid).any():
                out[~mid] = self._tail(x[~mid])
        return out

    def _tail(self, x):
        # int_x^U exp(phi(s) - phi(x)) ds, Gauss-Legendre per point
        half = 0.5 * (self.U - x)
        s = 0.5 * (self.U + x)[:, None] + half[:, None] * _GL_X[None, :]
        ph = self._phi(s.ravel()).reshape(s.shape)
        ex = np.exp(ph - self._phi(x)[:, None])
        return half * (ex @ _GL_W)

    def _mass(self, lo, hi):
        pts = sorted({lo, hi} | ({self.xm} if lo < self.xm < hi else set()))
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            x, w = _gl_panels(a, b, 6)
            total += float(np.dot(w, self.q(x)))
        return total

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.q(np.abs(x).ravel()).reshape(x.shape) / self.Z
        return out


def stationary_density(p: ModelParams, cls, iota, U, xi_star=0.0, omega=None):
    """Stationary law of a combined class by flux reduction.

    On each smooth piece ``a/2 p' - u p`` is constant.  With reflection the
    constant is zero everywhere, so ``p`` is proportional to
    ``exp(-w/(a l))``.  With jumps the flux equals the jump rate on the
    outer pieces (where ``p`` vanishes at +-U) and zero on the middle piece
    between the landing points.

    Returns
    -------
    density : DensityProfile
        Tabulated profile on 2001 uniform nodes of [-U, U].
    boundary_mass : float
        Mass of each boundary atom (jump rate, or a/2 p(U) for reflection).
    """
    cls = ControlClass.parse(cls)
    if not cls.has_regular or cls is ControlClass.REGULAR:
        raise ParameterError("stationary_density handles the combined classes")
    om = 1.0 - iota if omega is None else omega
    dens = _CombinedDensity(p, cls, om, U, xi_star)
    grid = np.linspace(-U, U, N_TABLE)
    values = dens(grid)
    if cls is ControlClass.COMBINED_IMPULSE:
        values[0] = values[-1] = 0.0
        mass = p.a / (2 * dens.Z)
        breaks = tuple(sorted({-dens.xm, 0.0, dens.xm}))
    else:
        mass = 0.5 * p.a * float(dens(np.array([U]))[0])
        breaks = (0.0,)
    prof = DensityProfile("tabulated", (-U, U), {"iota": iota, "U": U, "xi_star": xi_star},
                          grid=grid, values=values, func=dens, breaks=breaks)
    return prof, mass


def _solve_combined(p, cls):
    iota, U, xi, om = find_iota(p, cls)
    dens, mass = stationary_density(p, cls, iota, U, xi, omega=om)
    cost = iota * p.a * math.sqrt(p.r * p.l)
    if cls is ControlClass.COMBINED_IMPULSE:
        atoms = (BoundaryAtom(-U, xi, mass), BoundaryAtom(U, -xi, mass))
    else:
        atoms = (BoundaryAtom(-U, 1.0, mass), BoundaryAtom(U, -1.0, mass))
    return LocalSolution(cls, p, cost, dens, iota=iota, U=U, xi_star=xi, omega=om,
                         theta=math.sqrt(p.r / p.l),
                         feedback=partial(_combined_feedback, p, om, U),
                         boundary_measure=atoms)


def solve_combined_impulse(p: ModelParams) -> LocalSolution:
    """Drift control inside (-U, U), jumps of size xi_star at the boundary."""
    p.require(ControlClass.COMBINED_IMPULSE)
    return _solve_combined(p, ControlClass.COMBINED_IMPULSE)


def solve_combined_singular(p: ModelParams) -> LocalSolution:
    """Drift control inside (-U, U), reflection at the boundary."""
    p.require(ControlClass.COMBINED_SINGULAR)
    return _solve_combined(p, ControlClass.COMBINED_SINGULAR)


_SOLVERS = {
    ControlClass.REGULAR: solve_regular,
    ControlClass.SINGULAR: solve_singular,
    ControlClass.IMPULSE: solve_impulse,
    ControlClass.COMBINED_IMPULSE: solve_combined_impulse,
    ControlClass.COMBINED_SINGULAR: solve_combined_singular,
}


def solve(p: ModelParams, cls) -> LocalSolution:
    """Dispatch to the solver of ``cls``."""
    return _SOLVERS[ControlClass.parse(cls)](p)


def solve_cost(p: ModelParams, cls) -> float:
    """Optimal cost only; skips the density for the combined classes."""
    cls = ControlClass.parse(cls)
    if cls.has_regular and cls is not ControlClass.REGULAR:
        iota = find_iota(p, cls).iota
        return iota * p.a * math.sqrt(p.r * p.l)
    return _SOLVERS[cls](p).cost


# ----------------------------------------------------------------------
# verification helpers

def _check_combined(sol):
    if sol.cls not in (ControlClass.COMBINED_IMPULSE, ControlClass.COMBINED_SINGULAR):
        raise ParameterError(f"expected a combined class, got {sol.cls.value}")


def value_function_eval(sol: LocalSolution, x):
    """Value function w(x), extended linearly with slope h beyond +-U."""
    _check_combined(sol)
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    inner = _w(np.minimum(ax, sol.U), sol.omega, sol.params)
    out = inner + sol.params.h * np.maximum(ax - sol.U, 0.0)
    return out[()] if out.ndim == 0 else out


class HJBResidual(NamedTuple):
    interior: np.ndarray
    boundary: np.ndarray


def hjb_residual(sol: LocalSolution, xs) -> HJBResidual:
    """Residuals of the reduced HJB equation and of the boundary conditions.

    Interior: ``a/2 w'' - (w')^2/(4l) + r x^2 - I`` at ``xs``.
    Boundary: for jumps, ``w(x - sgn(x) xi) + k + h xi - w(x)`` at ``x = -+U``;
    for reflection, the smooth-fit residual ``|w'(+-U)| - h``.
    """
    _check_combined(sol)
    p = sol.params
    xs = np.asarray(xs, dtype=float)
    ax = np.abs(xs)
    w1 = _h(ax, sol.omega, p)
    w2 = _hp(ax, sol.omega, p)
    interior = 0.5 * p.a * w2 - w1 ** 2 / (4 * p.l) + p.r * xs ** 2 - sol.cost
    U, xi = sol.U, sol.xi_star
    if sol.cls is ControlClass.COMBINED_IMPULSE:
        b = [float(value_function_eval(sol, s * (U - xi))) + p.k + p.h * xi
             - float(value_function_eval(sol, s * U)) for s in (-1.0, 1.0)]
    else:
        b = [float(_h(U, sol.omega, p)) - p.h] * 2
    return HJBResidual(np.atleast_1d(interior), np.array(b))


def smooth_fit_residuals(sol: LocalSolution):
    """w'(U) - h and, for jumps, w'(U - xi) - h."""
    _check_combined(sol)
    p = sol.params
    out = [float(_h(sol.U, sol.omega, p)) - p.h]
    if sol.cls is ControlClass.COMBINED_IMPULSE:
        out.append(float(_h(sol.U - sol.xi_star, sol.omega, p)) - p.h)
    else:
        out.append(float(_hp(sol.U, sol.omega, p)))
    return np.array(out)


def robin_residuals(sol: LocalSolution):
    """Zero-flux residual a/2 p'(x) - u*(x) p(x) at x = -U and x = +U.

    Uses the analytic derivative of the density, which for the reflecting
    class is p' = -(w'/(a l)) p.
    """
    if sol.cls is not ControlClass.COMBINED_SINGULAR:
        raise ParameterError("Robin residual applies to the reflecting combined class")
    p = sol.params
    f = sol.density.func
    out = []
    for x in (-sol.U, sol.U):
        px = float(f(np.array([x]))[0])
        dp = -np.sign(x) * float(_h(abs(x), sol.omega, p)) / (p.a * p.l) * px
        u = float(sol.feedback(x))
        out.append(0.5 * p.a * dp - u * px)
    return np.array(out)
