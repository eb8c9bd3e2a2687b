"""Pointwise kernels of the mixed local/nonlocal p-Laplace operator.

Scalar maps used by the discrete energies (the nonlinearity ``|t|^(p-2) t``,
the interaction weight ``|x-y|^(-N-ps)``, truncations) together with the two
analytic repairs of the pairwise quadrature: the near-diagonal correction and
the far-field tail beyond the exterior collar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate


class HypothesisError(ValueError):
    """Arguments fall outside the hypotheses of the requested inequality."""


@dataclass(frozen=True)
class KernelParams:
    """Exponents of the operator: ``p > 1``, ``0 < s < 1``, dimension ``N``."""

    p: float
    s: float
    N: int = 1

    def __post_init__(self) -> None:
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.N not in (1, 2):
            raise ValueError(f"N must be 1 or 2, got {self.N}")

    @property
    def ps(self) -> float:
        return self.p * self.s

    @property
    def kernel_exponent(self) -> float:
        return self.N + self.p * self.s


def a_kernel(t, p: float):
    """``|t|^(p-2) t``, written so that ``t = 0`` maps to 0 for every ``p > 1``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    t = np.asarray(t, dtype=float)
    out = np.sign(t) * np.abs(t) ** (p - 1)
    return out if out.ndim else float(out)


def kernel_weight(x, y, kp: KernelParams) -> float:
    """Interaction density ``|x - y|^(-N - ps)``."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    if r == 0.0:
        raise ValueError("kernel_weight is singular on the diagonal x == y")
    return r ** (-kp.kernel_exponent)


def truncate(t, level: float):
    """Clamp to ``[-level, level]``."""
    if not level > 0:
        raise ValueError("truncation level must be positive")
    out = np.clip(np.asarray(t, dtype=float), -level, level)
    return out if out.ndim else float(out)


def g_trunc(l, k: float, delta: float):
    """``min(l^-delta, k)`` for ``l > 0`` and ``k`` for ``l <= 0``."""
    _check_k_delta(k, delta)
    l = np.asarray(l, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        pos = np.minimum(np.where(l > 0, l, 1.0) ** (-delta), k)
    out = np.where(l > 0, pos, k)
    return out if out.ndim else float(out)


def G_trunc(l, k: float, delta: float):
    """Primitive of :func:`g_trunc` vanishing at 0 (piecewise exact)."""
    _check_k_delta(k, delta)
    l = np.asarray(l, dtype=float)
    lk = k ** (-1.0 / delta)
    tail_arg = np.maximum(l, lk)
    if delta == 1.0:
        tail = np.log(tail_arg / lk)
    else:
        tail = (tail_arg ** (1 - delta) - lk ** (1 - delta)) / (1 - delta)
    out = np.where(l <= lk, k * l, k * lk + tail)
    return out if out.ndim else float(out)


def G_trunc_dd(l, k: float, delta: float):
    """Second derivative of :func:`G_trunc` (zero on the flat part)."""
    _check_k_delta(k, delta)
    l = np.asarray(l, dtype=float)
    lk = k ** (-1.0 / delta)
    return np.where(l > lk, -delta * np.maximum(l, lk) ** (-delta - 1), 0.0)


def _check_k_delta(k, delta):
    if not k > 0:
        raise ValueError("k must be positive")
    if not delta > 0:
        raise ValueError("delta must be positive")


@lru_cache(maxsize=None)
def angular_constant(p: float, N: int) -> float:
    """Integral of ``|z . e|^p`` over the unit sphere in dimension ``N``.

    Equals 2 on the 0-sphere; on the circle it is computed once by adaptive
    quadrature to relative accuracy 1e-12.
    """
    if N == 1:
        return 2.0
    if N == 2:
        val, _ = integrate.quad(
            lambda th: np.cos(th) ** p, 0.0, 0.5 * math.pi, epsabs=0.0, epsrel=1e-13, limit=200
        )
        return 4.0 * val
    raise ValueError(f"unsupported dimension {N}")


def sphere_measure(N: int) -> float:
    return {1: 2.0, 2: 2.0 * math.pi}[N]


def near_field_correction(radius: float, kp: KernelParams, grad_p_norm: float) -> float:
    """Pair energy of a linear function over ``|x - y| < radius``.

    For ``u(y) = u(x) + grad . (y - x)`` the inner integral over the ball is
    ``|grad|^p * A * radius^(p-ps) / (p-ps)`` with ``A`` the angular constant;
    ``grad_p_norm`` is the already integrated ``|grad u|^p``.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    e = kp.p - kp.ps
    return grad_p_norm * angular_constant(kp.p, kp.N) * radius**e / e


def far_field_tail(R: float, u_abs_p: float, kp: KernelParams) -> float:
    """``u_abs_p`` times the kernel mass outside the ball of radius ``R``."""
    if not R > 0:
        raise ValueError("R must be positive")
    return u_abs_p * sphere_measure(kp.N) * R ** (-kp.ps) / kp.ps


def default_ai_constant(p: float) -> float:
    """Largest constant for which the monotonicity inequality holds uniformly.

    ``p - 1`` for ``p < 2``; ``2^(2-p)`` for ``p >= 2`` (attained at ``b = -a``).
    """
    return p - 1.0 if p < 2 else 2.0 ** (2.0 - p)


def _power_map_primitive(t, delta, p):
    # G(t) = int_0^t g'(r)^(1/p) dr for g(t) = sign(t)|t|^delta
    e = (delta + p - 1) / p
    return np.sign(t) * delta ** (1 / p) / e * np.abs(t) ** e


def inequality_oracle(kind: str, *, rtol: float = 1e-12, **args) -> bool:
    """Check one instance of a pointwise inequality.

    kind="AI"
        ``<|a|^(p-2)a - |b|^(p-2)b, a-b> >= C |a-b|^2 / (|a|+|b|)^(2-p)``;
        args ``a, b, p`` and optional ``C`` (default :func:`default_ai_constant`).
        ``sign_only=True`` checks nonnegativity of the left side instead.
    kind="BrPr"
        ``|a-b|^(p-2)(a-b)(g(a)-g(b)) >= |G(a)-G(b)|^p`` for the increasing power map
        ``g(t) = sign(t)|t|^delta``; args ``a, b, p, delta``.
    kind="Cn"
        ``|x-y| <= eps^(1-q) |x^q - y^q|`` on ``{x >= eps, y >= 0} U {y >= eps, x >= 0}``;
        args ``x, y, q, eps``.
    """
    if kind == "AI":
        p = float(args["p"])
        if not p > 1:
            raise HypothesisError("AI requires p > 1")
        a = np.atleast_1d(np.asarray(args["a"], float))
        b = np.atleast_1d(np.asarray(args["b"], float))
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        va = na ** (p - 2) * a if na > 0 else np.zeros_like(a)
        vb = nb ** (p - 2) * b if nb > 0 else np.zeros_like(b)
        lhs = float(np.dot(va - vb, a - b))
        scale = (na + nb) ** p
        if args.get("sign_only", False):
            return lhs >= -rtol * scale
        if na + nb == 0:
            return lhs >= 0
        C = float(args.get("C", default_ai_constant(p)))
        rhs = C * float(np.dot(a - b, a - b)) * (na + nb) ** (p - 2)
        return lhs >= rhs - rtol * scale
    if kind == "BrPr":
        p = float(args["p"])
        delta = float(args["delta"])
        if not p > 1 or not delta > 0:
            raise HypothesisError("BrPr requires p > 1 and delta > 0")
        a, b = float(args["a"]), float(args["b"])
        d = a - b
        lhs = float(a_kernel(d, p)) * (np.sign(a) * abs(a) ** delta - np.sign(b) * abs(b) ** delta)
        rhs = abs(_power_map_primitive(a, delta, p) - _power_map_primitive(b, delta, p)) ** p
        scale = max(abs(lhs), rhs, 1e-300)
        return lhs >= rhs - rtol * scale
    if kind == "Cn":
        q, eps = float(args["q"]), float(args["eps"])
        x, y = float(args["x"]), float(args["y"])
        if not q > 1 or not eps > 0:
            raise HypothesisError("Cn requires q > 1 and eps > 0")
        if not ((x >= eps and y >= 0) or (y >= eps and x >= 0)):
            raise HypothesisError("(x, y) must lie in S_eps^x or S_eps^y")
        lhs = abs(x - y)
        rhs = eps ** (1 - q) * abs(x**q - y**q)
        return lhs <= rhs + rtol * max(rhs, lhs)
    raise ValueError(f"unknown inequality kind {kind!r}")
