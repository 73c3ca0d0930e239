"""Operational constraint catalog, active sets and fixed-LICQ checks.

The catalog is closed: five constraint kinds, each with an exact analytic
gradient over the full flat state. Active-set membership uses an inclusive
tolerance rule (g_j >= -act_tol counts as active) so near-active
constraints are swept into the rank analysis rather than silently dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netmodel import AdmittanceMatrix, ConstraintSpec, Network
from .powerflow import SystemState, pf_residual, state_index


class ConstraintError(ValueError):
    pass


class VoltageDomainError(ConstraintError):
    """Constraint evaluated outside its differentiable domain (v <= 0)."""


class InfeasiblePointError(ConstraintError):
    """Operation that requires a feasible point was given an infeasible one."""


# ---------------------------------------------------------------------------
# Constraint kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxUpper:
    """g(x) = x[index] - bound <= 0."""

    index: int
    bound: float
    is_equality: bool = False

    def value(self, x: np.ndarray) -> float:
        return float(x[self.index] - self.bound)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(x.size)
        g[self.index] = 1.0
        return g


@dataclass(frozen=True)
class BoxLower:
    """g(x) = bound - x[index] <= 0."""

    index: int
    bound: float
    is_equality: bool = False

    def value(self, x: np.ndarray) -> float:
        return float(self.bound - x[self.index])

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(x.size)
        g[self.index] = -1.0
        return g


@dataclass(frozen=True)
class LinearEq:
    """h(x) = sum_i a_i x_i - offset = 0 with sparse coefficients."""

    terms: tuple[tuple[int, float], ...]
    offset: float = 0.0
    is_equality: bool = True

    def value(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in self.terms) - self.offset)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(x.size)
        for i, c in self.terms:
            g[i] += c
        return g


@dataclass(frozen=True)
class ApparentPower:
    """g(x) = p_k^2 + q_k^2 - s2_max <= 0 at one bus."""

    bus: int
    n_bus: int
    s2_max: float
    is_equality: bool = False

    def value(self, x: np.ndarray) -> float:
        p = x[state_index("p", self.bus, self.n_bus)]
        q = x[state_index("q", self.bus, self.n_bus)]
        return float(p * p + q * q - self.s2_max)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(x.size)
        ip = state_index("p", self.bus, self.n_bus)
        iq = state_index("q", self.bus, self.n_bus)
        g[ip] = 2.0 * x[ip]
        g[iq] = 2.0 * x[iq]
        return g


@dataclass(frozen=True)
class ExpLoadEq:
    """h(x) = q_k + alpha * (p_k - p_load - sqrt(v_k)) = 0 at one bus.

    A voltage-dependent load coupling with constant power factor on the
    non-fixed component; requires v_k > 0 for the square root to be
    differentiable, enforced with a hard error.
    """

    bus: int
    n_bus: int
    alpha: float
    p_load: float
    is_equality: bool = True

    def _v(self, x: np.ndarray) -> float:
        v = float(x[state_index("v", self.bus, self.n_bus)])
        if v <= 0.0:
            raise VoltageDomainError(
                f"voltage-dependent load at bus {self.bus} evaluated at "
                f"v = {v}; requires v > 0")
        return v

    def value(self, x: np.ndarray) -> float:
        v = self._v(x)
        p = x[state_index("p", self.bus, self.n_bus)]
        q = x[state_index("q", self.bus, self.n_bus)]
        return float(q + self.alpha * (p - self.p_load - math.sqrt(v)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        v = self._v(x)
        g = np.zeros(x.size)
        g[state_index("p", self.bus, self.n_bus)] = self.alpha
        g[state_index("q", self.bus, self.n_bus)] = 1.0
        g[state_index("v", self.bus, self.n_bus)] = -self.alpha / (2.0 * math.sqrt(v))
        return g


def build_operational(spec: ConstraintSpec, n_bus: int):
    """Turn a declarative case entry into an evaluable constraint."""
    if spec.kind == "box_upper":
        idx = state_index(spec.target["var"], spec.target["bus"], n_bus)
        return BoxUpper(index=idx, bound=spec.params["bound"])
    if spec.kind == "box_lower":
        idx = state_index(spec.target["var"], spec.target["bus"], n_bus)
        return BoxLower(index=idx, bound=spec.params["bound"])
    if spec.kind == "linear_eq":
        terms = tuple(
            (state_index(t["var"], t["bus"], n_bus), float(t["coef"]))
            for t in spec.params["terms"]
        )
        return LinearEq(terms=terms, offset=float(spec.params["offset"]))
    if spec.kind == "apparent_power":
        return ApparentPower(bus=spec.target["bus"], n_bus=n_bus,
                             s2_max=float(spec.params["s2_max"]))
    if spec.kind == "exp_load_eq":
        return ExpLoadEq(bus=spec.target["bus"], n_bus=n_bus,
                         alpha=float(spec.params["alpha"]),
                         p_load=float(spec.params["p_load"]))
    raise ConstraintError(f"unknown constraint kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Constraint system
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Flow equalities plus operational equalities h and inequalities g.

    ``net``/``Y`` may be None for purely operational systems (no flow
    block), in which case states are plain vectors of length ``n_state``.
    """

    h_ops: tuple
    g_ops: tuple
    n_state: int
    net: Network | None = None
    Y: AdmittanceMatrix | None = None
    act_tol: float = 1e-6
    eq_tol: float = 1e-8
    pf_tol: float = 1e-10

    @classmethod
    def for_network(cls, net: Network, Y: AdmittanceMatrix, h_ops=(), g_ops=(),
                    **tols) -> "ConstraintSystem":
        return cls(h_ops=tuple(h_ops), g_ops=tuple(g_ops),
                   n_state=4 * net.n_bus, net=net, Y=Y, **tols)

    @classmethod
    def operational(cls, h_ops, g_ops, n_state: int, **tols) -> "ConstraintSystem":
        return cls(h_ops=tuple(h_ops), g_ops=tuple(g_ops),
                   n_state=n_state, **tols)

    @property
    def has_flow(self) -> bool:
        return self.net is not None


def as_flat_state(cs: ConstraintSystem, x) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a SystemState or plain vector to (flat, free_mask)."""
    if isinstance(x, SystemState):
        flat = x.flat()
        mask = x.free_mask
    else:
        flat = np.asarray(x, dtype=float)
        mask = np.ones(flat.size, dtype=bool)
    if flat.size != cs.n_state:
        raise ConstraintError(
            f"state has {flat.size} entries, system expects {cs.n_state}")
    return flat, mask


def evaluate(cs: ConstraintSystem, x) -> tuple[np.ndarray, np.ndarray, bool]:
    """Evaluate all constraints; feasibility requires the flow residual
    within pf_tol, |h| within eq_tol and every g within +act_tol."""
    flat, _ = as_flat_state(cs, x)
    h_vals = np.array([h.value(flat) for h in cs.h_ops])
    g_vals = np.array([g.value(flat) for g in cs.g_ops])
    feasible = True
    if cs.has_flow:
        if not isinstance(x, SystemState):
            x = SystemState.from_flat(flat, np.ones(flat.size, dtype=bool))
        feasible &= bool(np.abs(pf_residual(cs.net, cs.Y, x)).max() <= cs.pf_tol)
    if h_vals.size:
        feasible &= bool(np.abs(h_vals).max() <= cs.eq_tol)
    if g_vals.size:
        feasible &= bool(g_vals.max() <= cs.act_tol)
    return h_vals, g_vals, feasible


@dataclass(frozen=True, eq=False)
class ActiveSet:
    """Active inequality indices at a feasible point.

    ``face`` is the sorted tuple of active indices; it is a pure function
    of the index set and labels which face of the feasible region the
    point sits on.
    """

    indices: tuple[int, ...]
    values: np.ndarray

    @property
    def face(self) -> tuple[int, ...]:
        return self.indices


def active_set(cs: ConstraintSystem, x) -> ActiveSet:
    """Indices j with g_j(x) >= -act_tol. Only defined on feasible points."""
    h_vals, g_vals, feasible = evaluate(cs, x)
    if not feasible:
        raise InfeasiblePointError(
            "active set requested at an infeasible point "
            f"(max |h| = {np.abs(h_vals).max() if h_vals.size else 0.0:.3e}, "
            f"max g = {g_vals.max() if g_vals.size else float('-inf'):.3e})")
    idx = tuple(int(j) for j in range(g_vals.size)
                if g_vals[j] >= -cs.act_tol)
    return ActiveSet(indices=idx, values=g_vals)


# ---------------------------------------------------------------------------
# Fixed-constraint LICQ
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedLicqReport:
    holds: bool
    rank: int
    n_rows: int
    sigma_min: float


def fixed_licq_check(h_ops, g_ops, x, *, act_tol: float = 1e-6,
                     rank_ulp_scale: float = 2.0 ** -52) -> FixedLicqReport:
    """Rank test of the stacked operational gradients [grad h; grad g_J].

    This checks the operational constraints in isolation (the flow
    equations play no part), restricted to the free entries when ``x`` is
    a SystemState. Full row rank of the stack means the fixed constraints
    qualify on their own.
    """
    if isinstance(x, SystemState):
        flat, mask = x.flat(), x.free_mask
    else:
        flat = np.asarray(x, dtype=float)
        mask = np.ones(flat.size, dtype=bool)
    rows = [h.gradient(flat)[mask] for h in h_ops]
    rows += [g.gradient(flat)[mask] for g in g_ops
             if g.value(flat) >= -act_tol]
    if not rows:
        return FixedLicqReport(holds=True, rank=0, n_rows=0, sigma_min=np.inf)
    stack = np.vstack(rows)
    svals = np.linalg.svd(stack, compute_uv=False)
    tol = svals[0] * max(stack.shape) * rank_ulp_scale if svals[0] > 0 else 0.0
    rank = int((svals > tol).sum())
    return FixedLicqReport(
        holds=rank == stack.shape[0],
        rank=rank,
        n_rows=stack.shape[0],
        sigma_min=float(svals[min(stack.shape) - 1]),
    )
