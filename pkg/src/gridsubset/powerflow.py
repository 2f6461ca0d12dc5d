"""Newton-Raphson AC load flow, branch flows and congestion labelling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BusKind, Network, admittance_matrix, branch_admittances

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 30


class SingularJacobianError(RuntimeError):
    pass


@dataclass
class PowerFlowSolution:
    """Solved (or last-iterate) bus state.

    ``p_slack`` is the MW the slack bus supplies beyond whatever injection was
    specified there; ``s_injection`` is the computed net injection per bus
    in MVA.
    """

    voltage_mag: np.ndarray
    voltage_ang: np.ndarray
    branch_flow_mva: np.ndarray
    p_slack: float
    losses_mw: float
    converged: bool
    iterations: int
    residual: float
    s_injection: np.ndarray = field(repr=False)
    residual_history: list[float] = field(default_factory=list, repr=False)

    @property
    def voltage(self) -> np.ndarray:
        return self.voltage_mag * np.exp(1j * self.voltage_ang)


@dataclass
class CongestionReport:
    congested: bool
    overloaded_branches: list[tuple[int, float]]
    converged: bool = True


def voltage_setpoints(net: Network) -> np.ndarray:
    """Flat-start magnitudes with Slack/PV buses held at their setpoint."""
    vm = np.ones(net.n_bus)
    regulated = {}
    for g in net.generators:
        if g.online:
            regulated.setdefault(g.bus, g.v_set)
    for b in net.buses:
        if b.kind is not BusKind.PQ:
            vm[b.id] = regulated.get(b.id, b.voltage_mag)
    return vm


def _bus_sets(net: Network) -> tuple[int, np.ndarray, np.ndarray]:
    kinds = [b.kind for b in net.buses]
    ref = kinds.index(BusKind.SLACK)
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    return ref, pv, pq


def _jacobian(Y: np.ndarray, V: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    I = Y @ V
    Vnorm = V / np.abs(V)
    diagV = np.diag(V)
    dS_dVm = diagV @ np.conj(Y * Vnorm[None, :]) + np.diag(np.conj(I) * Vnorm)
    dS_dVa = 1j * diagV @ np.conj(np.diag(I) - Y * V[None, :])
    return np.block(
        [
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
            [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
        ]
    )


def solve_ac(
    net: Network,
    injections: np.ndarray,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """Solve the AC load flow from a flat start.

    ``injections`` is the complex net injection per bus in MVA (generation
    minus load). Q is ignored at PV buses and both parts at the slack bus.
    Non-convergence returns ``converged=False`` with the last iterate.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    injections = np.asarray(injections, dtype=complex)
    if injections.shape != (net.n_bus,):
        raise ValueError(f"expected {net.n_bus} injections, got shape {injections.shape}")

    Y = admittance_matrix(net)
    ref, pv, pq = _bus_sets(net)
    pvpq = np.concatenate([pv, pq])
    s_spec = injections / net.base_mva

    vm = voltage_setpoints(net)
    va = np.zeros(net.n_bus)
    V = vm * np.exp(1j * va)
    npvpq, npq = len(pvpq), len(pq)

    def mismatch(V: np.ndarray) -> np.ndarray:
        mis = V * np.conj(Y @ V) - s_spec
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    F = mismatch(V)
    residual = float(np.max(np.abs(F))) if F.size else 0.0
    history = [residual]
    iterations = 0
    converged = residual < tolerance
    while not converged and iterations < max_iter:
        J = _jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {iterations}") from exc
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:npvpq + npq]
        V = vm * np.exp(1j * va)
        iterations += 1
        F = mismatch(V)
        residual = float(np.max(np.abs(F)))
        history.append(residual)
        if not np.isfinite(residual):
            break
        converged = residual < tolerance

    return _finish(net, Y, V, s_spec, ref, converged, iterations, residual, history)


def _finish(net, Y, V, s_spec, ref, converged, iterations, residual, history) -> PowerFlowSolution:
    s_calc = V * np.conj(Y @ V)
    s_from, s_to = _end_flows(net, V)
    flows = np.maximum(np.abs(s_from), np.abs(s_to)) * net.base_mva
    losses = float(np.sum((s_from + s_to).real) * net.base_mva)
    return PowerFlowSolution(
        voltage_mag=np.abs(V),
        voltage_ang=np.angle(V),
        branch_flow_mva=flows,
        p_slack=float((s_calc[ref] - s_spec[ref]).real * net.base_mva),
        losses_mw=losses,
        converged=bool(converged),
        iterations=iterations,
        residual=residual,
        s_injection=s_calc * net.base_mva,
        residual_history=history,
    )


def _end_flows(net: Network, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex power (p.u.) entering each branch at its from and to ends."""
    if not net.branches:
        return np.zeros(0, complex), np.zeros(0, complex)
    y, half_b = branch_admittances(net)
    f = np.array([br.from_bus for br in net.branches])
    t = np.array([br.to_bus for br in net.branches])
    i_from = (V[f] - V[t]) * y + 1j * half_b * V[f]
    i_to = (V[t] - V[f]) * y + 1j * half_b * V[t]
    return V[f] * np.conj(i_from), V[t] * np.conj(i_to)


def branch_flows(net: Network, sol: PowerFlowSolution) -> np.ndarray:
    """Apparent power per branch in MVA, taking the larger of the two ends."""
    s_from, s_to = _end_flows(net, sol.voltage)
    return np.maximum(np.abs(s_from), np.abs(s_to)) * net.base_mva


def detect_congestion(
    net: Network, sol: PowerFlowSolution, threshold: float = 1.0
) -> CongestionReport:
    """Flag branches loaded above ``threshold`` times their MVA rating.

    A non-converged solution is always reported as congested.
    """
    if not 0 < threshold <= 2:
        raise ValueError("threshold must lie in (0, 2]")
    ratings = np.array([br.mva_rating for br in net.branches])
    flows = sol.branch_flow_mva
    overloaded = []
    if np.all(np.isfinite(flows)):
        for k in np.flatnonzero(flows > threshold * ratings):
            overloaded.append((int(k), float(flows[k] / ratings[k])))
    return CongestionReport(
        congested=bool(overloaded) or not sol.converged,
        overloaded_branches=overloaded,
        converged=sol.converged,
    )
