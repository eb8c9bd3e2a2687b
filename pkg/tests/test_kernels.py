from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mixedplap.kernels import (
    G_trunc,
    HypothesisError,
    KernelParams,
    a_kernel,
    angular_constant,
    default_ai_constant,
    far_field_tail,
    g_trunc,
    inequality_oracle,
    kernel_weight,
    near_field_correction,
    truncate,
)

p_values = st.floats(1.05, 6.0)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(1.0, 0.5)
    with pytest.raises(ValueError):
        KernelParams(2.0, 1.0)
    with pytest.raises(ValueError):
        KernelParams(2.0, 0.5, 3)
    assert KernelParams(2.0, 0.5, 2).kernel_exponent == 3.0


def test_a_kernel_examples():
    assert a_kernel(0.0, 1.3) == 0.0
    assert a_kernel(3.5, 2.0) == 3.5
    assert a_kernel(-2.0, 3.0) == -4.0


@given(p_values, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_a_kernel_odd_and_increasing(p, s, t):
    assert a_kernel(-s, p) == -a_kernel(s, p)
    if s < t:
        assert a_kernel(s, p) < a_kernel(t, p)


def test_kernel_weight_examples():
    kp = KernelParams(2.0, 0.5, 1)
    assert kernel_weight(0.0, 1.0, kp) == 1.0
    assert kernel_weight(0.0, 2.0, kp) == 0.25
    with pytest.raises(ValueError):
        kernel_weight(0.3, 0.3, kp)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_kernel_weight_symmetric(xy):
    kp = KernelParams(2.5, 0.3, 2)
    x, y = np.array(xy[:2]), np.array(xy[2:])
    if np.linalg.norm(x - y) > 1e-6:
        assert kernel_weight(x, y, kp) == kernel_weight(y, x, kp)


def test_truncate_examples():
    assert truncate(0.5, 1.0) == 0.5
    assert truncate(2.0, 1.0) == 1.0
    assert truncate(-3.0, 1.0) == -1.0
    with pytest.raises(ValueError):
        truncate(1.0, 0.0)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 50))
def test_truncate_properties(s, t, mu):
    assert abs(truncate(s, mu)) <= mu
    if abs(s) <= mu:
        assert truncate(s, mu) == s
    assert truncate(-s, mu) == -truncate(s, mu)
    assert abs(truncate(s, mu) - truncate(t, mu)) <= abs(s - t)


def test_g_trunc_examples():
    assert g_trunc(1.0, 10.0, 1.0) == 1.0
    assert g_trunc(0.01, 10.0, 1.0) == 10.0
    assert g_trunc(-5.0, 10.0, 1.0) == 10.0


@given(st.floats(0.1, 3.0), st.floats(0.1, 100.0), st.floats(1e-4, 20), st.floats(1e-4, 20))
def test_g_trunc_range_and_monotone(delta, k, a, b):
    lo, hi = sorted((a, b))
    assert 0 < g_trunc(hi, k, delta) <= g_trunc(lo, k, delta) <= k


@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("l", [-1.0, 0.0, 0.003, 0.2, 1.0, 7.5])
def test_G_trunc_is_the_primitive(delta, l):
    k = 10.0
    ref, _ = integrate.quad(lambda t: g_trunc(t, k, delta), 0, l, points=[k ** (-1 / delta)], epsabs=1e-13)
    assert G_trunc(l, k, delta) == pytest.approx(ref, rel=1e-9, abs=1e-12)
    assert G_trunc(0.0, k, delta) == 0.0


def test_near_field_examples():
    kp = KernelParams(2.0, 0.5, 1)
    assert near_field_correction(1.0, kp, 0.0) == 0.0
    assert near_field_correction(1.0, kp, 1.0) == pytest.approx(2.0)
    vals = [near_field_correction(h, kp, 1.0) for h in (1e-1, 1e-2, 1e-3)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-2


def test_angular_constant_2d_against_closed_form():
    # int_circle |cos|^p = 2 sqrt(pi) Gamma((p+1)/2) / Gamma(p/2 + 1)
    for p in (1.5, 2.0, 3.0, 4.5):
        ref = 2 * math.sqrt(math.pi) * math.gamma((p + 1) / 2) / math.gamma(p / 2 + 1)
        assert angular_constant(p, 2) == pytest.approx(ref, rel=1e-12)


def test_far_field_examples():
    kp = KernelParams(2.0, 0.5, 1)
    assert far_field_tail(1.0, 0.0, kp) == 0.0
    assert far_field_tail(1.0, 1.0, kp) == pytest.approx(2.0)
    kp2 = KernelParams(3.0, 0.4, 2)
    assert far_field_tail(4.0, 1.3, kp2) < far_field_tail(2.0, 1.3, kp2)
    # 2D: kernel mass outside radius R, by quadrature
    ref, _ = integrate.quad(lambda r: 2 * math.pi * r * r ** (-2 - kp2.ps), 2.0, np.inf)
    assert far_field_tail(2.0, 1.0, kp2) == pytest.approx(ref, rel=1e-10)


def test_oracle_trivial_examples():
    assert inequality_oracle("AI", a=[1.0, 2.0], b=[1.0, 2.0], p=3.0)
    assert inequality_oracle("Cn", x=3.0, y=1.0, q=2.0, eps=1.0)
    assert inequality_oracle("BrPr", a=0.7, b=0.7, p=2.5, delta=0.4)


def test_oracle_hypotheses():
    with pytest.raises(HypothesisError):
        inequality_oracle("Cn", x=0.1, y=0.2, q=2.0, eps=1.0)
    with pytest.raises(HypothesisError):
        inequality_oracle("AI", a=[1.0], b=[0.0], p=1.0)
    with pytest.raises(ValueError):
        inequality_oracle("XYZ")


def test_oracle_detects_violations():
    # a constant above the sharp one must fail at b = -a
    assert not inequality_oracle("AI", a=[1.0], b=[-1.0], p=3.0, C=0.75)
    assert inequality_oracle("AI", a=[1.0], b=[-1.0], p=3.0, C=default_ai_constant(3.0))


def test_default_ai_constant_is_sharp_for_p_above_2():
    # equality at b = -a: lhs = 2^p |a|^p, rhs = C 4|a|^2 (2|a|)^(p-2)
    for p in (2.0, 2.5, 4.0):
        lhs = 4 * 0.8**p
        rhs = default_ai_constant(p) * 4 * 0.64 * (1.6) ** (p - 2)
        assert lhs == pytest.approx(rhs, rel=1e-12)


vec = st.lists(st.floats(-10, 10), min_size=2, max_size=2)


@given(vec, vec, p_values)
def test_ai_sign_property(a, b, p):
    assert inequality_oracle("AI", a=a, b=b, p=p, sign_only=True)


@given(vec, vec, p_values)
def test_ai_with_default_constant(a, b, p):
    assert inequality_oracle("AI", a=a, b=b, p=p)


@given(st.floats(-10, 10), st.floats(-10, 10), p_values, st.floats(0.05, 3.0))
def test_brpr(a, b, p, delta):
    assert inequality_oracle("BrPr", a=a, b=b, p=p, delta=delta)


@given(st.floats(0, 50), st.floats(0, 50), st.floats(1.01, 5.0), st.floats(0.01, 5.0))
def test_cn(x, y, q, eps):
    if not ((x >= eps and y >= 0) or (y >= eps and x >= 0)):
        return
    assert inequality_oracle("Cn", x=x, y=y, q=q, eps=eps)
