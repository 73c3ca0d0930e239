"""Parameter perturbation models, rank hypothesis checks and Monte Carlo
genericity experiments.

Three perturbation models are supported: fixed loads at every bus (2N
parameters), lumped nodal shunt admittances (2N parameters) and series
line parameters (2M parameters). Each model knows the derivative of the
flow residual with respect to its parameter vector; full rank 2N of that
derivative is the hypothesis under which qualification failures are
confined to a measure-zero parameter set.

Shunt convention: the parameter vector stacks the lumped conductances and
the *negated* lumped susceptances, so the parameter Jacobian is
-diag(v^2) on both blocks. Negation is a diffeomorphic reparametrization
and leaves every rank and measure statement untouched.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from . import constraints as con
from . import cqkit
from .netmodel import Case, Network, build_ybus
from .powerflow import (PFSetpoints, PowerFlowError, SystemState,
                        pf_jacobian, pf_residual, solve_power_flow)


class PerturbationError(ValueError):
    pass


class ModelKind(enum.Enum):
    LOAD = "load"
    SHUNT = "shunt"
    LINE = "line"


@dataclass(frozen=True, eq=False)
class PerturbationModel:
    """Sampling box over a parameter space attached to one model kind.

    ``box`` is a (k, 2) array of closed intervals; sampling is uniform on
    the interior, which must have positive volume.
    """

    kind: ModelKind
    box: np.ndarray

    def __post_init__(self) -> None:
        box = np.asarray(self.box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise PerturbationError("box must be a (k, 2) array of intervals")
        if not (box[:, 1] > box[:, 0]).all():
            raise PerturbationError(
                "sampling box must have positive volume in every coordinate")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)

    @property
    def dimension(self) -> int:
        return self.box.shape[0]


def _interval_box(nominal: np.ndarray, rel: float, floor: float) -> np.ndarray:
    half = rel * np.abs(nominal)
    half[half == 0.0] = floor
    return np.column_stack([nominal - half, nominal + half])


def lumped_shunts(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus lumped shunt admittance: bus shunt plus half of each
    incident line shunt."""
    g = np.array([b.g_shunt for b in net.buses])
    b = np.array([b.b_shunt for b in net.buses])
    for ln in net.lines:
        for end in (ln.from_bus, ln.to_bus):
            g[end] += ln.g_shunt / 2.0
            b[end] += ln.b_shunt / 2.0
    return g, b


def load_model(case: Case, *, rel: float = 0.1, floor: float = 0.1) -> PerturbationModel:
    """Default load box: nominal +/- 10 percent, with an absolute floor
    for zero-nominal components (a zero-width interval has no volume)."""
    nominal = np.concatenate([case.network.p_load, case.network.q_load])
    return PerturbationModel(ModelKind.LOAD, _interval_box(nominal, rel, floor))


def shunt_model(case: Case, *, rel: float = 0.1, floor: float = 0.1) -> PerturbationModel:
    g, b = lumped_shunts(case.network)
    nominal = np.concatenate([g, -b])
    return PerturbationModel(ModelKind.SHUNT, _interval_box(nominal, rel, floor))


def line_model(case: Case, *, rel: float = 0.1, floor: float = 0.1) -> PerturbationModel:
    g = np.array([ln.g_series for ln in case.network.lines])
    b = np.array([ln.b_series for ln in case.network.lines])
    nominal = np.concatenate([g, b])
    return PerturbationModel(ModelKind.LINE, _interval_box(nominal, rel, floor))


def make_model(kind: ModelKind | str, case: Case, **kwargs) -> PerturbationModel:
    kind = ModelKind(kind) if not isinstance(kind, ModelKind) else kind
    builder = {ModelKind.LOAD: load_model, ModelKind.SHUNT: shunt_model,
               ModelKind.LINE: line_model}[kind]
    return builder(case, **kwargs)


# ---------------------------------------------------------------------------
# Parameter Jacobians
# ---------------------------------------------------------------------------

def _expect_dimension(model: PerturbationModel, net: Network) -> None:
    expected = {ModelKind.LOAD: 2 * net.n_bus, ModelKind.SHUNT: 2 * net.n_bus,
                ModelKind.LINE: 2 * net.n_line}[model.kind]
    if model.dimension != expected:
        raise PerturbationError(
            f"{model.kind.value} model of dimension {model.dimension} does "
            f"not match network (expected {expected})")


def param_jacobian(model: PerturbationModel, net: Network,
                   x: SystemState) -> np.ndarray:
    """Derivative of the flow residual with respect to the model's
    parameter vector, a 2N x k matrix.

    LOAD: exactly -I_2N (the residual carries the loads with a minus
    sign). SHUNT: -diag(v^2) on both diagonal blocks under the negated
    susceptance convention. LINE: analytic derivative with respect to each
    series (g, b) pair; a line's columns touch only the rows of its two
    endpoints.
    """
    _expect_dimension(model, net)
    n = net.n_bus
    if model.kind is ModelKind.LOAD:
        return -np.eye(2 * n)
    if model.kind is ModelKind.SHUNT:
        jac = np.zeros((2 * n, 2 * n))
        jac[:n, :n] = -np.diag(x.v ** 2)
        jac[n:, n:] = -np.diag(x.v ** 2)
        return jac
    m = net.n_line
    jac = np.zeros((2 * n, 2 * m))
    v, theta = x.v, x.theta
    for j, ln in enumerate(net.lines):
        k, l = ln.from_bus, ln.to_bus
        ckl = np.cos(theta[k] - theta[l])
        skl = np.sin(theta[k] - theta[l])
        vkl = v[k] * v[l]
        col_g, col_b = j, m + j
        jac[k, col_g] = vkl * ckl - v[k] ** 2
        jac[l, col_g] = vkl * ckl - v[l] ** 2
        jac[n + k, col_g] = vkl * skl
        jac[n + l, col_g] = -vkl * skl
        jac[k, col_b] = vkl * skl
        jac[l, col_b] = -vkl * skl
        jac[n + k, col_b] = v[k] ** 2 - vkl * ckl
        jac[n + l, col_b] = v[l] ** 2 - vkl * ckl
    return jac


def combined_param_jacobian(net: Network, x: SystemState,
                            load_buses, shunt_buses) -> np.ndarray:
    """Parameter Jacobian for a mixed model: load perturbation at some
    buses, lumped shunt perturbation at others. Columns are (p, q) load
    pairs followed by (g, -b) shunt pairs, bus order within each block."""
    n = net.n_bus
    cols = []
    for k in load_buses:
        for row in (k, n + k):
            col = np.zeros(2 * n)
            col[row] = -1.0
            cols.append(col)
    for k in shunt_buses:
        for row in (k, n + k):
            col = np.zeros(2 * n)
            col[row] = -x.v[k] ** 2
            cols.append(col)
    return np.column_stack(cols) if cols else np.zeros((2 * n, 0))


@dataclass(frozen=True)
class RankHypothesisReport:
    kind: ModelKind
    rank: int
    required: int
    satisfied: bool
    voltage_premise_ok: bool | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.kind.value,
            "rank": self.rank,
            "required": self.required,
            "satisfied": self.satisfied,
            "voltage_premise_ok": self.voltage_premise_ok,
        }


def check_rank_hypothesis(model: PerturbationModel, net: Network,
                          x: SystemState) -> RankHypothesisReport:
    """Numerical rank of the parameter Jacobian against the required 2N.

    For the shunt model the premise min_k v_k > 0 is reported alongside;
    it is exactly what full rank hinges on.
    """
    jac = param_jacobian(model, net, x)
    rank, _, _, _ = cqkit.numerical_rank(jac)
    premise = None
    if model.kind is ModelKind.SHUNT:
        premise = bool(x.v.min() > 0.0)
    return RankHypothesisReport(kind=model.kind, rank=rank,
                                required=2 * net.n_bus,
                                satisfied=rank == 2 * net.n_bus,
                                voltage_premise_ok=premise)


# ---------------------------------------------------------------------------
# Applying a parameter draw to a case
# ---------------------------------------------------------------------------

def apply_parameters(model: PerturbationModel, case: Case,
                     xi: np.ndarray) -> Case:
    """New case with the drawn parameter vector written into the data."""
    _expect_dimension(model, case.network)
    net = case.network
    n = net.n_bus
    if model.kind is ModelKind.LOAD:
        buses = tuple(
            replace(b, p_load=float(xi[b.id]), q_load=float(xi[n + b.id]))
            for b in net.buses)
        return replace(case, network=Network(buses=buses, lines=net.lines))
    if model.kind is ModelKind.SHUNT:
        # xi holds lumped (g, -b); remove the half line-shunt contribution
        # so the lumped value lands exactly on the target.
        g_line = np.zeros(n)
        b_line = np.zeros(n)
        for ln in net.lines:
            for end in (ln.from_bus, ln.to_bus):
                g_line[end] += ln.g_shunt / 2.0
                b_line[end] += ln.b_shunt / 2.0
        buses = tuple(
            replace(b, g_shunt=float(xi[b.id] - g_line[b.id]),
                    b_shunt=float(-xi[n + b.id] - b_line[b.id]))
            for b in net.buses)
        return replace(case, network=Network(buses=buses, lines=net.lines))
    m = net.n_line
    lines = tuple(
        replace(ln, g_series=float(xi[j]), b_series=float(xi[m + j]))
        for j, ln in enumerate(net.lines))
    return replace(case, network=Network(buses=net.buses, lines=lines))


# ---------------------------------------------------------------------------
# Monte Carlo genericity experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    trial: int
    converged: bool
    feasible: bool
    licq_holds: bool | None
    sigma_min: float | None


@dataclass(frozen=True, eq=False)
class GenericityReport:
    """Aggregate of one Monte Carlo run.

    Each trial draws a parameter vector, re-solves the flow feasibility
    problem from the case's setpoints (one feasible point per draw; the
    full feasible set is not explored) and, when the operational
    constraints are met, runs the qualification check. Failures are kept
    with their draw for replay.
    """

    trials: int
    rng_seed: int
    model_kind: str
    box: np.ndarray
    feasible_count: int
    licq_pass_count: int
    sigma_min_sorted: tuple[float, ...]
    records: tuple[TrialRecord, ...]
    failures: tuple[dict, ...]
    hypothesis: RankHypothesisReport | None
    tolerances: dict

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "rng_seed": self.rng_seed,
            "model": self.model_kind,
            "box": self.box.tolist(),
            "feasible_count": self.feasible_count,
            "licq_pass_count": self.licq_pass_count,
            "licq_failure_count": self.feasible_count - self.licq_pass_count,
            "sigma_min_sorted": list(self.sigma_min_sorted),
            "hypothesis": None if self.hypothesis is None
            else self.hypothesis.to_dict(),
            "failures": list(self.failures),
            "tolerances": self.tolerances,
            "scope": ("one feasible point per draw, produced from the case "
                      "setpoints; the feasible set is sampled, not enumerated"),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trial", "seed", "feasible", "licq", "sigma_min"])
        for rec in self.records:
            writer.writerow([
                rec.trial,
                self.rng_seed,
                int(rec.feasible),
                "" if rec.licq_holds is None else int(rec.licq_holds),
                "" if rec.sigma_min is None else repr(rec.sigma_min),
            ])
        return buf.getvalue()


def _trial_draw(seed: int, trial: int, box: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng([seed, trial])
    return rng.uniform(box[:, 0], box[:, 1])


def run_genericity_experiment(
    case: Case,
    model: PerturbationModel,
    trials: int,
    seed: int,
    *,
    act_tol: float = 1e-6,
    eq_tol: float = 1e-8,
    pf_tol: float = 1e-10,
    max_iter: int = 50,
    rank_ulp_scale: float = cqkit.DEFAULT_RANK_ULP_SCALE,
    start: SystemState | None = None,
) -> GenericityReport:
    """Deterministic Monte Carlo sweep over the model's sampling box.

    Per-trial draws use a counter-based seed derived from (seed, trial),
    so results are independent of execution order and reproducible
    bit-for-bit. Non-convergent draws count as trials, not errors.
    """
    _expect_dimension(model, case.network)
    ops = [con.build_operational(s, case.network.n_bus)
           for s in case.constraint_specs]
    h_ops = tuple(op for op in ops if op.is_equality)
    g_ops = tuple(op for op in ops if not op.is_equality)
    setpoints = PFSetpoints(p_gen=case.gen_p.copy(), q_gen=case.gen_q.copy(),
                            start=start)

    hypothesis = None
    try:
        y0 = build_ybus(case.network)
        x0 = solve_power_flow(case.network, y0, setpoints, pf_tol=pf_tol,
                              max_iter=max_iter).state
        hypothesis = check_rank_hypothesis(model, case.network, x0)
    except PowerFlowError:
        pass

    records: list[TrialRecord] = []
    failures: list[dict] = []
    sigma_mins: list[float] = []
    feasible_count = 0
    licq_pass = 0
    for t in range(trials):
        xi = _trial_draw(seed, t, model.box)
        trial_case = apply_parameters(model, case, xi)
        net_t = trial_case.network
        y_t = build_ybus(net_t)
        try:
            x_t = solve_power_flow(net_t, y_t, setpoints, pf_tol=pf_tol,
                                   max_iter=max_iter).state
        except PowerFlowError:
            records.append(TrialRecord(t, False, False, None, None))
            continue
        cs_t = con.ConstraintSystem.for_network(
            net_t, y_t, h_ops, g_ops,
            act_tol=act_tol, eq_tol=eq_tol, pf_tol=pf_tol)
        _, _, feasible = con.evaluate(cs_t, x_t)
        if not feasible:
            records.append(TrialRecord(t, True, False, None, None))
            continue
        feasible_count += 1
        report = cqkit.licq_check(cs_t, x_t, rank_ulp_scale=rank_ulp_scale)
        sigma_mins.append(report.sigma_min)
        if report.licq_holds:
            licq_pass += 1
        else:
            failures.append({
                "trial": t,
                "seed": seed,
                "xi": xi.tolist(),
                "state": x_t.flat().tolist(),
                "cq_report": report.to_dict(),
            })
        records.append(TrialRecord(t, True, True, report.licq_holds,
                                   report.sigma_min))

    return GenericityReport(
        trials=trials,
        rng_seed=seed,
        model_kind=model.kind.value,
        box=model.box,
        feasible_count=feasible_count,
        licq_pass_count=licq_pass,
        sigma_min_sorted=tuple(sorted(sigma_mins)),
        records=tuple(records),
        failures=tuple(failures),
        hypothesis=hypothesis,
        tolerances={"act_tol": act_tol, "eq_tol": eq_tol, "pf_tol": pf_tol,
                    "rank_ulp_scale": rank_ulp_scale},
    )


# ---------------------------------------------------------------------------
# Tangency escape probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeRow:
    delta: float
    converged: bool
    sigma_min: float | None
    licq_holds: bool | None
    bound_pinned: bool

    def to_dict(self) -> dict:
        return {"delta": self.delta, "converged": self.converged,
                "sigma_min": self.sigma_min, "licq_holds": self.licq_holds,
                "bound_pinned": self.bound_pinned}


def _damped_gauss_newton(residual_fn, jacobian_fn, flat0, mask,
                         *, tol=1e-11, max_iter=100):
    """Minimum-norm Gauss-Newton on an equality system over free entries."""
    flat = flat0.copy()
    r = residual_fn(flat)
    for _ in range(max_iter):
        err = np.abs(r).max() if r.size else 0.0
        if err <= tol:
            return flat, True
        jac = jacobian_fn(flat)[:, mask]
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        t = 1.0
        while t >= 2.0 ** -30:
            trial = flat.copy()
            trial[mask] = flat[mask] + t * step
            r_try = residual_fn(trial)
            if np.abs(r_try).max() < err:
                flat, r = trial, r_try
                break
            t /= 2.0
        else:
            return flat, False
    return flat, np.abs(r).max() <= tol


def nearest_feasible_point(
    case: Case,
    x_start: SystemState,
    *,
    act_tol: float = 1e-6,
    eq_tol: float = 1e-8,
    pf_tol: float = 1e-10,
) -> tuple[SystemState | None, bool, con.ConstraintSystem]:
    """Feasible point of a case near a start state, by projection.

    Two stages of minimum-norm Gauss-Newton: first onto the equality
    manifold {F = 0, h = 0}; if an inequality ends up violated there, a
    second projection with that bound pinned as an equality. Returns
    (state_or_None, bound_pinned, constraint_system).
    """
    net = case.network
    n = net.n_bus
    h_ops = []
    g_ops = []
    for spec in case.constraint_specs:
        op = con.build_operational(spec, n)
        (h_ops if op.is_equality else g_ops).append(op)
    y = build_ybus(net)
    cs = con.ConstraintSystem.for_network(
        net, y, tuple(h_ops), tuple(g_ops),
        act_tol=act_tol, eq_tol=eq_tol, pf_tol=pf_tol)
    mask = x_start.free_mask

    def make_fns(pinned):
        def residual(flat):
            state = SystemState.from_flat(flat, mask)
            parts = [pf_residual(net, y, state)]
            parts.append(np.array([h.value(flat) for h in h_ops]))
            parts.append(np.array([g_ops[j].value(flat) for j in pinned]))
            return np.concatenate([p for p in parts if p.size])

        def jacobian(flat):
            state = SystemState.from_flat(flat, mask)
            rows_ = [pf_jacobian(net, y, state)]
            rows_ += [h.gradient(flat)[None, :] for h in h_ops]
            rows_ += [g_ops[j].gradient(flat)[None, :] for j in pinned]
            return np.vstack(rows_)

        return residual, jacobian

    residual, jacobian = make_fns(())
    flat, ok = _damped_gauss_newton(residual, jacobian, x_start.flat(), mask)
    pinned: tuple[int, ...] = ()
    if ok:
        g_vals = np.array([g.value(flat) for g in g_ops])
        violated = tuple(int(j) for j in range(g_vals.size)
                         if g_vals[j] > act_tol)
        if violated:
            pinned = violated
            residual, jacobian = make_fns(pinned)
            flat, ok = _damped_gauss_newton(residual, jacobian, flat, mask)
    if not ok:
        return None, bool(pinned), cs
    state = SystemState.from_flat(flat, mask)
    _, _, feasible = con.evaluate(cs, state)
    if not feasible:
        return None, bool(pinned), cs
    return state, bool(pinned), cs


def shift_load(case: Case, direction: int, delta: float) -> Case:
    """New case with one component of the stacked load vector shifted."""
    net = case.network
    n = net.n_bus
    if not 0 <= direction < 2 * n:
        raise PerturbationError(
            f"direction {direction} outside the stacked load vector (2N = {2 * n})")
    loads = np.concatenate([net.p_load, net.q_load])
    loads[direction] += delta
    buses = tuple(
        replace(b, p_load=float(loads[b.id]), q_load=float(loads[n + b.id]))
        for b in net.buses)
    return replace(case, network=Network(buses=buses, lines=net.lines))


def tangency_escape_probe(
    case: Case,
    x_start: SystemState,
    deltas,
    direction: int,
    *,
    act_tol: float = 1e-6,
    eq_tol: float = 1e-8,
    pf_tol: float = 1e-10,
    rank_ulp_scale: float = cqkit.DEFAULT_RANK_ULP_SCALE,
) -> list[ProbeRow]:
    """Sweep one load component and track the degeneracy margin.

    ``direction`` indexes the stacked load vector (p loads then q loads).
    For each delta the load is shifted by delta, the feasible point
    nearest the start is re-solved by projection, and the qualification
    check runs at the recovered point. A degenerate start stays degenerate
    only at delta = 0; any interior shift should restore full rank.
    """
    rows: list[ProbeRow] = []
    for delta in deltas:
        case_d = shift_load(case, direction, float(delta))
        state, pinned, cs_d = nearest_feasible_point(
            case_d, x_start, act_tol=act_tol, eq_tol=eq_tol, pf_tol=pf_tol)
        if state is None:
            rows.append(ProbeRow(delta=float(delta), converged=False,
                                 sigma_min=None, licq_holds=None,
                                 bound_pinned=pinned))
            continue
        report = cqkit.licq_check(cs_d, state, rank_ulp_scale=rank_ulp_scale)
        rows.append(ProbeRow(delta=float(delta), converged=True,
                             sigma_min=report.sigma_min,
                             licq_holds=report.licq_holds,
                             bound_pinned=pinned))
    return rows
