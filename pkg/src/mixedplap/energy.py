"""Discrete energies, functionals and the weak-form residual.

The mixed seminorm (p-th power, unrooted) on interior nodal values ``x`` is

    Phi(x) = alpha * E_loc(x) + beta * E_nl(x)

with ``E_loc`` a lattice quadrature of ``int |grad u|^p`` and ``E_nl`` the
Gagliardo double integral over ordered pairs, split into

* interior pairs ``|x_i - x_j| >= 1.5 h``: plain lattice sum,
* interior/exterior pairs: ``2 h^N kappa_i |x_i|^p`` where ``kappa_i`` is the
  kernel mass of the exterior (lattice collar plus analytic tail),
* near-diagonal pairs: ``near_field_correction`` applied to ``E_loc``.

Every term is a convex, p-homogeneous function of ``x``; energies are never
smoothed. Hessians (used only as the Newton metric) floor ``|t|`` at
``eps * scale`` so that ``p != 2`` does not produce singular or infinite
curvature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, signal, sparse

from .grid import Grid, GridError, GridFunction, zero_extend
from .kernels import KernelParams, G_trunc, G_trunc_dd, far_field_tail, g_trunc, near_field_correction

PAIR_CUTOFF = 1.5  # in units of h
HESS_EPS = 1e-10
HESS_EPS_SUB2 = 1e-15


@dataclass(frozen=True)
class OperatorParams:
    """Kernel exponents plus the local/nonlocal toggles.

    ``(alpha, beta) = (1, 0)`` is the p-Laplacian alone, ``(0, 1)`` the
    fractional p-Laplacian alone and ``(1, 1)`` the mixed operator.
    """

    kp: KernelParams
    alpha_local: float = 1.0
    beta_nonlocal: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha_local", "beta_nonlocal"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        if self.alpha_local + self.beta_nonlocal < 1:
            raise ValueError("at least one of the local and nonlocal parts must be active")

    @property
    def p(self) -> float:
        return self.kp.p

    @classmethod
    def make(cls, p: float, s: float = 0.5, N: int = 1, alpha: float = 1, beta: float = 1):
        return cls(KernelParams(p, s, N), alpha, beta)


@dataclass(frozen=True)
class EnergyBreakdown:
    local: float
    nonlocal_: float
    source: float

    @property
    def total(self) -> float:
        return self.local + self.nonlocal_ + self.source


# ----------------------------------------------------------------------------
# lattice operators


@dataclass(frozen=True, eq=False)
class GradientStencil:
    """Sampled gradients ``g_k = sum_c G[c] x`` with quadrature weights ``w``.

    In 1D the samples are the lattice edges (weight ``h``). In 2D every cell
    contributes the four one-sided gradients at its corners (weight ``h^2/4``),
    which keeps ``|grad u|^p`` isotropic and reduces to the 5-point sum for p=2.
    """

    comps: tuple[sparse.csr_matrix, ...]
    weights: np.ndarray


@lru_cache(maxsize=32)
def gradient_stencil(grid: Grid) -> GradientStencil:
    n, h = grid.nodes_per_axis, grid.h
    interior_idx = np.flatnonzero(grid.interior_mask.ravel())
    if grid.dim == 1:
        rows = np.arange(n - 1)
        D = sparse.coo_matrix(
            (np.r_[-np.ones(n - 1), np.ones(n - 1)] / h, (np.r_[rows, rows], np.r_[rows, rows + 1])),
            shape=(n - 1, n),
        ).tocsc()
        G = D[:, interior_idx].tocsr()
        keep = np.flatnonzero(G.getnnz(axis=1))
        return GradientStencil((G[keep],), np.full(keep.size, h))

    idx = np.arange(n * n).reshape(n, n)
    c00, c10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c01, c11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    m = c00.size
    # (x-difference pair, y-difference pair) for each corner
    corners = [
        ((c00, c10), (c00, c01)),
        ((c00, c10), (c10, c11)),
        ((c01, c11), (c00, c01)),
        ((c01, c11), (c10, c11)),
    ]

    def diff(a, b):
        r = np.arange(m)
        return sparse.coo_matrix(
            (np.r_[-np.ones(m), np.ones(m)] / h, (np.r_[r, r], np.r_[a, b])), shape=(m, n * n)
        )

    gx = sparse.vstack([diff(*cx) for cx, _ in corners]).tocsc()[:, interior_idx].tocsr()
    gy = sparse.vstack([diff(*cy) for _, cy in corners]).tocsc()[:, interior_idx].tocsr()
    keep = np.flatnonzero(gx.getnnz(axis=1) + gy.getnnz(axis=1))
    return GradientStencil((gx[keep], gy[keep]), np.full(keep.size, h * h / 4))


def near_field_radius(grid: Grid, kp: KernelParams) -> float:
    """Radius of the ball carrying the same kernel mass as the dropped pairs.

    In 1D the dropped offsets cover exactly ``|z| < 1.5h``. In 2D they cover the
    3x3 cell block; the radius is chosen so that ``int |z|^(p-2-ps)`` over the
    disk matches the block.
    """
    r0 = PAIR_CUTOFF * grid.h
    if grid.dim == 1:
        return r0
    e = kp.p - kp.ps
    val, _ = integrate.quad(lambda th: np.cos(th) ** (-e), 0.0, 0.25 * math.pi, epsrel=1e-13)
    return r0 * (4.0 / math.pi * val) ** (1.0 / e)


@dataclass(frozen=True, eq=False)
class NonlocalWeights:
    pair: np.ndarray  # (M, M) ordered-pair weights h^{2N} r^{-N-ps}
    exterior: np.ndarray  # (M,) weight of |x_i|^p for interior/exterior pairs
    near_field: float  # multiplier of E_loc
    kappa: np.ndarray  # exterior kernel mass per interior node


@lru_cache(maxsize=32)
def nonlocal_weights(grid: Grid, kp: KernelParams) -> NonlocalWeights:
    if kp.N != grid.dim:
        raise GridError(f"kernel dimension {kp.N} != grid dimension {grid.dim}")
    h, N = grid.h, grid.dim
    hN = h**N
    expo = kp.kernel_exponent
    cut = PAIR_CUTOFF * h * (1 - 1e-12)

    xs = grid.interior_coords
    diff = xs[:, None, :] - xs[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    with np.errstate(divide="ignore"):
        pair = np.where(r >= cut, hN * hN * r ** (-expo), 0.0)

    # exterior kernel mass: lattice sum over the collar, analytic tail beyond it
    R = grid.collar_radius
    K = int(math.ceil(R / h))
    offs = np.arange(-K, K + 1) * h
    zz = np.meshgrid(*([offs] * N), indexing="ij")
    rz = np.sqrt(sum(z * z for z in zz))
    with np.errstate(divide="ignore"):
        ker = np.where((rz >= cut) & (rz < R), hN * rz ** (-expo), 0.0)
    ext = np.pad((~grid.interior_mask).astype(float), K, constant_values=1.0)
    mass = signal.correlate(ext, ker, mode="valid", method="direct")
    kappa = mass[grid.interior_mask] + far_field_tail(R, 1.0, kp)

    nf = near_field_correction(near_field_radius(grid, kp), kp, 1.0)
    pair.setflags(write=False)
    return NonlocalWeights(pair, 2.0 * hN * kappa, nf, kappa)


# ----------------------------------------------------------------------------
# the mixed seminorm on interior vectors


class MixedSeminorm:
    """``Phi(x)``: p-th power of the mixed norm, with gradient and Newton metric."""

    def __init__(self, grid: Grid, op: OperatorParams):
        if op.kp.N != grid.dim:
            raise GridError(f"operator dimension {op.kp.N} != grid dimension {grid.dim}")
        self.grid = grid
        self.op = op
        self.p = op.p
        self.stencil = gradient_stencil(grid)
        self.local_coef = float(op.alpha_local)
        self.nl = nonlocal_weights(grid, op.kp) if op.beta_nonlocal else None
        if self.nl is not None:
            self.local_coef += self.nl.near_field

    # local part, near-field correction included through local_coef
    def _grads(self, x):
        return [G @ x for G in self.stencil.comps]

    def local(self, x) -> float:
        g = self._grads(x)
        mag2 = sum(c * c for c in g)
        return float(np.sum(self.stencil.weights * mag2 ** (0.5 * self.p)))

    def _local_grad(self, x):
        g = self._grads(x)
        mag2 = sum(c * c for c in g)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(mag2 > 0, mag2 ** (0.5 * self.p - 1), 0.0)
        fac *= self.p * self.stencil.weights
        return sum(G.T @ (fac * c) for G, c in zip(self.stencil.comps, g))

    def _local_hess(self, x, eps):
        p = self.p
        g = self._grads(x)
        s = sum(c * c for c in g) + eps * eps
        base = p * self.stencil.weights * s ** (0.5 * p - 1)
        comps = self.stencil.comps
        H = 0
        for a, Ga in enumerate(comps):
            for b, Gb in enumerate(comps):
                ratio = np.divide(g[a] * g[b], s, out=np.zeros_like(s), where=s > 0)
                c = base * ((a == b) + (p - 2) * ratio)
                H = H + Ga.T @ sparse.diags(c) @ Gb
        return H.toarray()

    def nonlocal_pairs(self, x) -> float:
        D = np.abs(x[:, None] - x[None, :])
        return float(np.sum(self.nl.pair * D**self.p))

    def value(self, x) -> float:
        x = np.asarray(x, float)
        val = self.local_coef * self.local(x) if self.local_coef else 0.0
        if self.nl is not None:
            val += self.nonlocal_pairs(x) + float(np.sum(self.nl.exterior * np.abs(x) ** self.p))
        return val

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        p = self.p
        out = self.local_coef * self._local_grad(x) if self.local_coef else np.zeros_like(x)
        if self.nl is not None:
            D = x[:, None] - x[None, :]
            psi = np.sign(D) * np.abs(D) ** (p - 1)
            out = out + 2.0 * p * np.sum(self.nl.pair * psi, axis=1)
            out = out + p * self.nl.exterior * np.sign(x) * np.abs(x) ** (p - 1)
        return out

    def flux_sensitivity(self, x, eta: float) -> np.ndarray:
        """Bound on the change of ``grad/p`` when every nodal value moves by ``eta``.

        Worst case over perturbations: each flux ``|t|^(p-2) t`` is evaluated
        with its argument displaced by the matching worst-case amount.
        """
        x = np.asarray(x, float)
        p = self.p

        def dflux(t, d):
            t = np.abs(t)
            return (t + d) ** (p - 1) - t ** (p - 1)

        out = np.zeros_like(x)
        if self.local_coef:
            comps = self.stencil.comps
            g = [G @ x for G in comps]
            mag = np.sqrt(sum(c * c for c in g))
            dg = 2 * eta * math.sqrt(len(comps)) / self.grid.h
            cell = self.stencil.weights * dflux(mag, dg)
            out += self.local_coef * sum(abs(G).T @ cell for G in comps)
        if self.nl is not None:
            D = x[:, None] - x[None, :]
            out += 2.0 * np.sum(self.nl.pair * dflux(D, 2 * eta), axis=1)
            out += self.nl.exterior * dflux(x, eta)
        return out

    def hess(self, x, eps_rel: float | None = None) -> np.ndarray:
        x = np.asarray(x, float)
        p = self.p
        if eps_rel is None:
            # below p = 2 the metric must see differences near the rounding level
            eps_rel = HESS_EPS if p >= 2 else HESS_EPS_SUB2
        scale = max(float(np.max(np.abs(x))), 1e-300) if x.size else 1.0
        eps = eps_rel * scale
        M = x.size
        H = np.zeros((M, M))
        if self.local_coef:
            H += self.local_coef * self._local_hess(x, eps / self.grid.h)
        if self.nl is not None:
            D = x[:, None] - x[None, :]
            slope = p - 1
            c = 2.0 * p * slope * self.nl.pair * (D * D + eps * eps) ** (0.5 * p - 1)
            H -= c
            H[np.diag_indices(M)] += c.sum(axis=1)
            H[np.diag_indices(M)] += p * slope * self.nl.exterior * (x * x + eps * eps) ** (0.5 * p - 1)
        return H


@lru_cache(maxsize=64)
def seminorm(grid: Grid, op: OperatorParams) -> MixedSeminorm:
    return MixedSeminorm(grid, op)


# ----------------------------------------------------------------------------
# nodal source terms: -sum_i w_i psi(x_i)


class SourceTerm:
    """Concave nodal term ``sum_i w_i psi(x_i)`` subtracted from ``Phi/p``.

    ``domain_lo`` is the exclusive lower bound on ``x_i`` wherever ``w_i > 0``
    (``-inf`` when ``psi`` is finite everywhere).
    """

    domain_lo = -np.inf

    def __init__(self, weights: np.ndarray):
        self.w = np.asarray(weights, float)

    def psi(self, x):
        raise NotImplementedError

    def dpsi(self, x):
        raise NotImplementedError

    def ddpsi(self, x):
        raise NotImplementedError

    def in_domain(self, x) -> bool:
        return bool(np.all(x[self.w > 0] > self.domain_lo))

    def value(self, x) -> float:
        return float(np.sum(self.w * self.psi(x)))

    def grad(self, x):
        return self.w * self.dpsi(x)

    def hess_diag(self, x):
        return self.w * self.ddpsi(x)


class LinearSource(SourceTerm):
    def psi(self, x):
        return x

    def dpsi(self, x):
        return np.ones_like(x)

    def ddpsi(self, x):
        return np.zeros_like(x)


class RegularizedSource(SourceTerm):
    """Primitive of ``(t^+ + 1/n)^-delta``, vanishing at 0, any ``delta > 0``."""

    def __init__(self, weights, n: float, delta: float):
        super().__init__(weights)
        self.c = 1.0 / n
        self.delta = delta

    def psi(self, x):
        c, d = self.c, self.delta
        xp = np.maximum(x, 0.0)
        if d == 1.0:
            pos = np.log1p(xp / c)
        else:
            pos = ((xp + c) ** (1 - d) - c ** (1 - d)) / (1 - d)
        return np.where(x >= 0, pos, c ** (-d) * x)

    def dpsi(self, x):
        return (np.maximum(x, 0.0) + self.c) ** (-self.delta)

    def ddpsi(self, x):
        return np.where(x > 0, -self.delta * (np.maximum(x, 0.0) + self.c) ** (-self.delta - 1), 0.0)


class SingularSource(SourceTerm):
    """Primitive of ``t^-delta`` on ``t > 0`` (``log`` when ``delta = 1``)."""

    domain_lo = 0.0

    def __init__(self, weights, delta: float):
        super().__init__(weights)
        self.delta = delta

    def _safe(self, x):
        return np.where(self.w > 0, x, 1.0)

    def psi(self, x):
        xs = self._safe(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            if self.delta == 1.0:
                return np.log(xs)
            return xs ** (1 - self.delta) / (1 - self.delta)

    def dpsi(self, x):
        return self._safe(x) ** (-self.delta)

    def ddpsi(self, x):
        return -self.delta * self._safe(x) ** (-self.delta - 1)


class PositivePartPower(SourceTerm):
    """``(t^+)^(1-delta) / (1-delta)`` for ``0 < delta < 1``."""

    def __init__(self, weights, delta: float):
        super().__init__(weights)
        self.delta = delta

    def psi(self, x):
        return np.maximum(x, 0.0) ** (1 - self.delta) / (1 - self.delta)

    def dpsi(self, x):
        xp = np.maximum(x, 0.0)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, np.where(xp > 0, xp, 1.0) ** (-self.delta), 0.0)

    def ddpsi(self, x):
        xp = np.where(x > 0, x, 1.0)
        return np.where(x > 0, -self.delta * xp ** (-self.delta - 1), 0.0)


class UnshiftedApproxSource(SourceTerm):
    """``(1/(1-delta))(t^+ + 1/n)^(1-delta) - (1/n)^-delta t^-`` (not shifted to vanish at 0)."""

    def __init__(self, weights, n: float, delta: float):
        super().__init__(weights)
        self.c = 1.0 / n
        self.delta = delta
        self._reg = RegularizedSource(weights, n, delta)

    def psi(self, x):
        c, d = self.c, self.delta
        return (np.maximum(x, 0) + c) ** (1 - d) / (1 - d) - c ** (-d) * np.maximum(-x, 0)

    def dpsi(self, x):
        return self._reg.dpsi(x)

    def ddpsi(self, x):
        return self._reg.ddpsi(x)


class TruncatedSource(SourceTerm):
    """Primitive of ``min(l^-delta, k)`` (``k`` on ``l <= 0``), vanishing at 0."""

    def __init__(self, weights, k: float, delta: float):
        super().__init__(weights)
        self.k, self.delta = k, delta

    def psi(self, x):
        return G_trunc(x, self.k, self.delta)

    def dpsi(self, x):
        return g_trunc(x, self.k, self.delta)

    def ddpsi(self, x):
        return G_trunc_dd(x, self.k, self.delta)


class Objective:
    """``Phi(x)/p - source(x)``: value, gradient and a positive-definite Newton metric."""

    def __init__(self, norm: MixedSeminorm, source: SourceTerm | None = None):
        self.norm = norm
        self.source = source

    def in_domain(self, x) -> bool:
        return self.source is None or self.source.in_domain(x)

    def value(self, x) -> float:
        if not self.in_domain(x):
            return np.inf
        val = self.norm.value(x) / self.norm.p
        if self.source is not None:
            val -= self.source.value(x)
        return val

    def grad(self, x) -> np.ndarray:
        g = self.norm.grad(x) / self.norm.p
        if self.source is not None:
            g = g - self.source.grad(x)
        return g

    def hess(self, x) -> np.ndarray:
        H = self.norm.hess(x) / self.norm.p
        if self.source is not None:
            H[np.diag_indices_from(H)] -= self.source.hess_diag(x)
        return H


# ----------------------------------------------------------------------------
# public functional API on grid functions


def _check_grid(u: GridFunction, grid: Grid | None = None):
    if not isinstance(u, GridFunction):
        raise TypeError("expected a GridFunction")
    if grid is not None and u.grid is not grid:
        raise GridError("grid functions live on different grids")


def _as_nodal(f, grid: Grid) -> np.ndarray:
    if isinstance(f, GridFunction):
        _check_grid(f, grid)
        return f.interior
    arr = np.asarray(f, float)
    if arr.ndim == 0:
        return np.full(grid.n_interior, float(arr))
    if arr.shape == grid.node_shape:
        return arr[grid.interior_mask]
    if arr.size == grid.n_interior:
        return arr.ravel()
    raise GridError("source values do not match the grid")


def local_energy(u: GridFunction, p: float) -> float:
    """Lattice quadrature of ``int |grad u|^p``."""
    _check_grid(u)
    st = gradient_stencil(u.grid)
    g = [G @ u.interior for G in st.comps]
    return float(np.sum(st.weights * sum(c * c for c in g) ** (0.5 * p)))


def nonlocal_energy(u: GridFunction, kp: KernelParams) -> float:
    """Gagliardo double integral of ``u`` over ``R^N x R^N`` (ordered pairs)."""
    _check_grid(u)
    return seminorm(u.grid, OperatorParams(kp, 0, 1)).value(u.interior)


def mixed_norm_p(u: GridFunction, op: OperatorParams) -> float:
    """``alpha * local + beta * nonlocal``: the p-th power of the mixed norm."""
    _check_grid(u)
    return seminorm(u.grid, op).value(u.interior)


def functional_J(v: GridFunction, g, op: OperatorParams) -> EnergyBreakdown:
    """``(1/p) ||v||^p - int g v`` split into its three parts."""
    _check_grid(v)
    grid, x, p = v.grid, v.interior, op.p
    loc = op.alpha_local * local_energy(v, p) / p
    nl = op.beta_nonlocal * nonlocal_energy(v, op.kp) / p
    src = -grid.cell_volume * float(np.sum(_as_nodal(g, grid) * x))
    return EnergyBreakdown(loc, nl, src)


def truncated_source(f, n: float, grid: Grid) -> np.ndarray:
    """``f_n = min(f, n)`` at interior nodes."""
    return np.minimum(_as_nodal(f, grid), n)


def _require_subunit_delta(delta):
    if not 0 < delta < 1:
        raise ValueError(f"this functional is defined for 0 < delta < 1, got delta={delta}")


def functional_I_n(v: GridFunction, n: int, delta: float, f, op: OperatorParams) -> float:
    _require_subunit_delta(delta)
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = v.grid
    w = grid.cell_volume * truncated_source(f, n, grid)
    return Objective(seminorm(grid, op), UnshiftedApproxSource(w, n, delta)).value(v.interior)


def functional_I_delta(v: GridFunction, delta: float, f, op: OperatorParams) -> float:
    _require_subunit_delta(delta)
    grid = v.grid
    w = grid.cell_volume * _as_nodal(f, grid)
    return Objective(seminorm(grid, op), PositivePartPower(w, delta)).value(v.interior)


def functional_J_k(phi: GridFunction, k: float, delta: float, f, op: OperatorParams) -> float:
    grid = phi.grid
    w = grid.cell_volume * _as_nodal(f, grid)
    return Objective(seminorm(grid, op), TruncatedSource(w, k, delta)).value(phi.interior)


def make_objective(name: str, grid: Grid, op: OperatorParams, **ctx) -> Objective:
    """Build the interior-vector objective for one of the named functionals.

    ``J`` (ctx ``g``), ``I_n`` (``n, delta, f``), ``I_delta`` (``delta, f``),
    ``J_k`` (``k, delta, f``), ``approx`` (``n, delta, f``: the regularized
    problem for any ``delta > 0``) and ``singular`` (``delta, f``).
    """
    norm = seminorm(grid, op)
    hN = grid.cell_volume
    if name == "J":
        return Objective(norm, LinearSource(hN * _as_nodal(ctx.get("g", 0.0), grid)))
    if name == "I_n":
        _require_subunit_delta(ctx["delta"])
        n = ctx["n"]
        return Objective(norm, UnshiftedApproxSource(hN * truncated_source(ctx["f"], n, grid), n, ctx["delta"]))
    if name == "I_delta":
        _require_subunit_delta(ctx["delta"])
        return Objective(norm, PositivePartPower(hN * _as_nodal(ctx["f"], grid), ctx["delta"]))
    if name == "J_k":
        return Objective(norm, TruncatedSource(hN * _as_nodal(ctx["f"], grid), ctx["k"], ctx["delta"]))
    if name == "approx":
        n = ctx["n"]
        return Objective(norm, RegularizedSource(hN * truncated_source(ctx["f"], n, grid), n, ctx["delta"]))
    if name == "singular":
        return Objective(norm, SingularSource(hN * _as_nodal(ctx["f"], grid), ctx["delta"]))
    raise ValueError(f"unknown functional {name!r}")


def energy_gradient(v: GridFunction, objective: str, op: OperatorParams, **ctx) -> GridFunction:
    """Exact gradient of a discrete functional with respect to interior values."""
    obj = make_objective(objective, v.grid, op, **ctx)
    return zero_extend(obj.grad(v.interior), v.grid)


def residual_vector(x: np.ndarray, grid: Grid, op: OperatorParams, rhs: np.ndarray) -> np.ndarray:
    """Nodal defect of the discrete Euler-Lagrange system, normalized by ``h^N max rhs``."""
    g = seminorm(grid, op).grad(x) / op.p - grid.cell_volume * rhs
    scale = grid.cell_volume * max(float(np.max(np.abs(rhs))), 1e-300)
    return g / scale


def _weak_defect(x, fx, grid: Grid, op: OperatorParams, delta: float, multiplier: float):
    rhs = multiplier * fx * x ** (-delta)
    defect = seminorm(grid, op).grad(x) / op.p - grid.cell_volume * rhs
    return defect / (grid.cell_volume * multiplier * float(np.max(fx)))


def _residual_mask(grid: Grid, delta: float, boundary_layer: int | None):
    if boundary_layer is None:
        boundary_layer = 2 if delta >= 1 else 0
    keep = grid.boundary_distance_cells()[grid.interior_mask] > boundary_layer
    if not np.any(keep):
        raise ValueError("boundary layer leaves no test functions")
    return keep


def weak_residual(
    u: GridFunction,
    delta: float,
    f,
    op: OperatorParams,
    boundary_layer: int | None = None,
    multiplier: float = 1.0,
) -> float:
    """Max defect of the weak form tested against every nodal hat function.

    The source is ``multiplier * f / u^delta``. Hats within ``boundary_layer``
    cells of the exterior are skipped (default: 2 when ``delta >= 1``, else 0).
    """
    _check_grid(u)
    grid = u.grid
    x = u.interior
    if np.any(x <= 0):
        raise ValueError("weak_residual needs u > 0 at every interior node")
    keep = _residual_mask(grid, delta, boundary_layer)
    r = _weak_defect(x, _as_nodal(f, grid), grid, op, delta, multiplier)
    return float(np.max(np.abs(r[keep])))


def residual_floor(
    u: GridFunction,
    delta: float,
    f,
    op: OperatorParams,
    boundary_layer: int | None = None,
    multiplier: float = 1.0,
    ulps: float = 4.0,
) -> float:
    """Smallest weak residual resolvable when ``u`` is stored to ``ulps`` units of rounding.

    For ``p < 2`` the flux ``|t|^(p-2) t`` is only Holder continuous, so a
    difference that should vanish but carries one rounding error contributes
    ``eps^(p-1)`` to the defect; for ``p >= 2`` the bound is negligible.
    """
    _check_grid(u)
    grid = u.grid
    x = u.interior
    if np.any(x <= 0):
        raise ValueError("residual_floor needs u > 0 at every interior node")
    keep = _residual_mask(grid, delta, boundary_layer)
    fx = _as_nodal(f, grid)
    eta = ulps * np.finfo(float).eps * float(np.max(x))
    sens = seminorm(grid, op).flux_sensitivity(x, eta)
    sens += grid.cell_volume * multiplier * fx * delta * x ** (-delta - 1) * eta
    r = sens / (grid.cell_volume * multiplier * float(np.max(fx)))
    return float(np.max(r[keep]))


def norm_equivalence_constant(grid: Grid, op: OperatorParams) -> float:
    """Smallest ``C`` with ``mixed <= (1 + C) local`` on the grid (``p = 2`` only)."""
    from scipy.linalg import eigh

    if op.p != 2:
        raise ValueError("the generalized eigenvalue bound is exact only for p = 2")
    x0 = np.zeros(grid.n_interior)
    Hl = seminorm(grid, OperatorParams(op.kp, 1, 0)).hess(x0)
    Hm = seminorm(grid, OperatorParams(op.kp, 1, 1)).hess(x0)
    lam = eigh(Hm, Hl, eigvals_only=True)
    return float(lam.max() - 1.0)
