"""AC power-flow residual, analytic Jacobian and Newton feasibility solver.

Voltages are polar: u_k = v_k * exp(j*theta_k). The system state is the
flat vector x = (p_gen, q_gen, v, theta) of length 4N; that ordering is
fixed and shared by every Jacobian column layout in the package.

The residual is

    F(x) = [ p_gen - p_load - Re{diag(u) (Y u)*} ]
           [ q_gen - q_load - Im{diag(u) (Y u)*} ]

so real row k reads  p_gen_k - p_load_k - sum_l v_k v_l (G_kl cos t_kl +
B_kl sin t_kl)  with t_kl = theta_k - theta_l, and the reactive row uses
(G_kl sin t_kl - B_kl cos t_kl).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import AdmittanceMatrix, BusType, Network


class PowerFlowError(RuntimeError):
    pass


class NonConvergenceError(PowerFlowError):
    """Newton iteration exhausted without meeting the mismatch tolerance."""

    def __init__(self, message: str, history: list[float], mismatch: float):
        super().__init__(
            f"{message}: final mismatch {mismatch:.3e} after "
            f"{len(history)} iterations; trace {['%.3e' % h for h in history]}"
        )
        self.history = history
        self.mismatch = mismatch


class SingularNewtonError(PowerFlowError):
    """Singular Newton matrix; possible degeneracy of the flow equations."""


def state_index(var: str, bus: int, n_bus: int) -> int:
    """Flat-state index of a named entry; order is (p, q, v, theta)."""
    offsets = {"p": 0, "q": 1, "v": 2, "theta": 3}
    if var not in offsets:
        raise ValueError(f"unknown state variable {var!r}")
    if not 0 <= bus < n_bus:
        raise ValueError(f"bus {bus} out of range for {n_bus}-bus system")
    return offsets[var] * n_bus + bus


@dataclass(frozen=True, eq=False)
class SystemState:
    """State x = (p_gen, q_gen, v, theta) plus a free/fixed entry mask.

    ``free_mask`` marks which scalar entries of the flattened 4N-vector are
    optimization variables; eliminated entries (e.g. the slack voltage and
    angle) are False. Instances are immutable; the arrays are locked.
    """

    p_gen: np.ndarray
    q_gen: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    free_mask: np.ndarray

    def __post_init__(self) -> None:
        n = self.v.shape[0]
        for arr in (self.p_gen, self.q_gen, self.v, self.theta):
            if arr.shape != (n,):
                raise ValueError("state blocks must share a common bus count")
        if self.free_mask.shape != (4 * n,):
            raise ValueError("free_mask must cover all 4N scalar entries")
        for arr in (self.p_gen, self.q_gen, self.v, self.theta, self.free_mask):
            arr.setflags(write=False)

    @property
    def n_bus(self) -> int:
        return self.v.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.p_gen, self.q_gen, self.v, self.theta])

    @classmethod
    def from_flat(cls, vec: np.ndarray, free_mask: np.ndarray) -> "SystemState":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.size % 4:
            raise ValueError("flat state must be a 1-D vector of length 4N")
        n = vec.size // 4
        return cls(
            p_gen=vec[:n].copy(),
            q_gen=vec[n:2 * n].copy(),
            v=vec[2 * n:3 * n].copy(),
            theta=vec[3 * n:].copy(),
            free_mask=np.asarray(free_mask, dtype=bool).copy(),
        )


def free_mask_from_bus_types(net: Network) -> np.ndarray:
    """Default elimination mask: slack v and theta fixed, PV v fixed."""
    n = net.n_bus
    mask = np.ones(4 * n, dtype=bool)
    for bus in net.buses:
        if bus.bus_type is BusType.SLACK:
            mask[2 * n + bus.id] = False
            mask[3 * n + bus.id] = False
        elif bus.bus_type is BusType.PV:
            mask[2 * n + bus.id] = False
    return mask


def injections(Y: AdmittanceMatrix, v: np.ndarray, theta: np.ndarray):
    """Nodal complex power flowing from each bus into the network."""
    u = v * np.exp(1j * theta)
    s = u * np.conj((Y.G + 1j * Y.B) @ u)
    return s.real, s.imag


def pf_residual(net: Network, Y: AdmittanceMatrix, x: SystemState) -> np.ndarray:
    """Evaluate F(x); length 2N, real-power rows first."""
    if x.n_bus != net.n_bus:
        raise ValueError("state dimension does not match network")
    p_inj, q_inj = injections(Y, x.v, x.theta)
    return np.concatenate([
        x.p_gen - net.p_load - p_inj,
        x.q_gen - net.q_load - q_inj,
    ])


def _injection_partials(Y: AdmittanceMatrix, v: np.ndarray, theta: np.ndarray):
    """Partial derivatives of the nodal injections w.r.t. v and theta.

    Returns (dP/dv, dP/dtheta, dQ/dv, dQ/dtheta) as dense N x N blocks.
    """
    t = theta[:, None] - theta[None, :]
    a = Y.G * np.cos(t) + Y.B * np.sin(t)
    c = Y.G * np.sin(t) - Y.B * np.cos(t)
    p_inj = v * (a @ v)
    q_inj = v * (c @ v)
    vv = np.outer(v, v)
    gd = np.diag(Y.G)
    bd = np.diag(Y.B)

    dp_dv = v[:, None] * a
    np.fill_diagonal(dp_dv, a @ v + v * gd)
    dp_dt = vv * c
    np.fill_diagonal(dp_dt, -q_inj - v**2 * bd)
    dq_dv = v[:, None] * c
    np.fill_diagonal(dq_dv, c @ v - v * bd)
    dq_dt = -vv * a
    np.fill_diagonal(dq_dt, p_inj - v**2 * gd)
    return dp_dv, dp_dt, dq_dv, dq_dt


def pf_jacobian(net: Network, Y: AdmittanceMatrix, x: SystemState) -> np.ndarray:
    """Analytic 2N x 4N Jacobian of F in flat-state column order.

    The generation blocks are exact identities (dF_p/dp_gen = I and the
    reactive rows' dF_q/dq_gen = I) with zero cross blocks; the v/theta
    blocks are the negated injection partials.
    """
    n = net.n_bus
    if x.n_bus != n:
        raise ValueError("state dimension does not match network")
    dp_dv, dp_dt, dq_dv, dq_dt = _injection_partials(Y, x.v, x.theta)
    jac = np.zeros((2 * n, 4 * n))
    jac[:n, :n] = np.eye(n)
    jac[n:, n:2 * n] = np.eye(n)
    jac[:n, 2 * n:3 * n] = -dp_dv
    jac[:n, 3 * n:] = -dp_dt
    jac[n:, 2 * n:3 * n] = -dq_dv
    jac[n:, 3 * n:] = -dq_dt
    return jac


@dataclass(frozen=True, eq=False)
class PFResidual:
    """Residual value and Jacobian evaluated at one state."""

    value: np.ndarray
    jacobian: np.ndarray


def pf_eval(net: Network, Y: AdmittanceMatrix, x: SystemState) -> PFResidual:
    return PFResidual(value=pf_residual(net, Y, x), jacobian=pf_jacobian(net, Y, x))


@dataclass(frozen=True, eq=False)
class PFSetpoints:
    """Scheduled quantities for the Newton solve.

    ``p_gen`` applies at non-slack buses, ``q_gen`` at PQ buses; slack and
    PV voltage data come from the bus records. ``start`` optionally warm
    starts the iteration.
    """

    p_gen: np.ndarray
    q_gen: np.ndarray
    start: SystemState | None = None


@dataclass(frozen=True, eq=False)
class PFSolution:
    state: SystemState
    iterations: int
    history: tuple[float, ...]


def solve_power_flow(
    net: Network,
    Y: AdmittanceMatrix,
    setpoints: PFSetpoints,
    *,
    pf_tol: float = 1e-10,
    max_iter: int = 50,
) -> PFSolution:
    """Plain Newton on the reduced mismatch system.

    Unknowns are theta at non-slack buses and v at PQ buses; the slack bus
    absorbs the power balance and PV reactive output is recovered after
    convergence. No line search or continuation: which solution branch is
    reached depends only on the start point, and failure is reported, not
    masked.
    """
    n = net.n_bus
    types = [b.bus_type for b in net.buses]
    ang_idx = [k for k in range(n) if types[k] is not BusType.SLACK]
    vm_idx = [k for k in range(n) if types[k] is BusType.PQ]

    if setpoints.start is not None:
        v = setpoints.start.v.copy()
        theta = setpoints.start.theta.copy()
    else:
        v = np.ones(n)
        theta = np.zeros(n)
    for bus in net.buses:
        if bus.bus_type in (BusType.SLACK, BusType.PV):
            v[bus.id] = bus.v_setpoint
        if bus.bus_type is BusType.SLACK:
            theta[bus.id] = bus.theta_setpoint

    p_sched = setpoints.p_gen - net.p_load
    q_sched = setpoints.q_gen - net.q_load

    history: list[float] = []
    iterations = 0
    for _ in range(max_iter + 1):
        p_inj, q_inj = injections(Y, v, theta)
        mis = np.concatenate([
            p_sched[ang_idx] - p_inj[ang_idx],
            q_sched[vm_idx] - q_inj[vm_idx],
        ])
        err = np.abs(mis).max() if mis.size else 0.0
        history.append(err)
        if err <= pf_tol:
            break
        if iterations >= max_iter:
            raise NonConvergenceError("power flow did not converge",
                                      history, err)
        dp_dv, dp_dt, dq_dv, dq_dt = _injection_partials(Y, v, theta)
        jac = np.block([
            [dp_dt[np.ix_(ang_idx, ang_idx)], dp_dv[np.ix_(ang_idx, vm_idx)]],
            [dq_dt[np.ix_(vm_idx, ang_idx)], dq_dv[np.ix_(vm_idx, vm_idx)]],
        ])
        try:
            step = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError as exc:
            raise SingularNewtonError(
                f"singular Newton matrix at iteration {iterations} "
                "(possible degeneracy of the flow equations)"
            ) from exc
        theta[ang_idx] += step[:len(ang_idx)]
        v[vm_idx] += step[len(ang_idx):]
        iterations += 1

    # Recover generation at buses whose rows were dropped from the reduced
    # system so the full residual vanishes identically.
    p_inj, q_inj = injections(Y, v, theta)
    p_gen = setpoints.p_gen.copy()
    q_gen = setpoints.q_gen.copy()
    for bus in net.buses:
        if bus.bus_type is BusType.SLACK:
            p_gen[bus.id] = p_inj[bus.id] + bus.p_load
            q_gen[bus.id] = q_inj[bus.id] + bus.q_load
        elif bus.bus_type is BusType.PV:
            q_gen[bus.id] = q_inj[bus.id] + bus.q_load

    state = SystemState(p_gen=p_gen, q_gen=q_gen, v=v, theta=theta,
                        free_mask=free_mask_from_bus_types(net))
    final = np.abs(pf_residual(net, Y, state)).max()
    if final > pf_tol:
        raise NonConvergenceError(
            "converged reduced system but full residual exceeds tolerance",
            history, final)
    return PFSolution(state=state, iterations=iterations, history=tuple(history))


def newton_pf(
    net: Network,
    Y: AdmittanceMatrix,
    setpoints: PFSetpoints,
    *,
    pf_tol: float = 1e-10,
    max_iter: int = 50,
) -> SystemState:
    """Newton power flow returning only the solved state."""
    return solve_power_flow(net, Y, setpoints, pf_tol=pf_tol,
                            max_iter=max_iter).state


def state_to_list(x: SystemState) -> list[float]:
    """Flat JSON form, (p_gen, q_gen, v, theta) order."""
    return [float(t) for t in x.flat()]


def state_from_list(values, net: Network) -> SystemState:
    vec = np.asarray(values, dtype=float)
    if vec.shape != (4 * net.n_bus,):
        raise ValueError(
            f"state vector must have length {4 * net.n_bus}, got {vec.size}")
    return SystemState.from_flat(vec, free_mask_from_bus_types(net))
