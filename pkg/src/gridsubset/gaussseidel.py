"""Gauss-Seidel load flow used as an independent cross-check of the Newton solver.

Deliberately shares nothing with :mod:`gridsubset.powerflow` beyond the
network records: it assembles its own admittance matrix element by element
and iterates bus by bus.
"""
from __future__ import annotations

import numpy as np

from .grid import BusKind, Network


def _ybus(net: Network) -> np.ndarray:
    n = net.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        y = 1.0 / complex(br.resistance, br.reactance)
        shunt = 0.5j * br.charging_susceptance
        Y[br.from_bus, br.from_bus] += y + shunt
        Y[br.to_bus, br.to_bus] += y + shunt
        Y[br.from_bus, br.to_bus] -= y
        Y[br.to_bus, br.from_bus] -= y
    for b in net.buses:
        Y[b.id, b.id] += 1j * b.shunt_susceptance
    return Y


def gauss_seidel(
    net: Network,
    injections: np.ndarray,
    tolerance: float = 1e-10,
    max_iter: int = 20000,
    accel: float = 1.6,
) -> tuple[np.ndarray, bool, int]:
    """Return ``(complex voltages, converged, sweeps)``.

    Convergence is declared when the largest voltage update in a sweep and
    the largest bus power mismatch both fall below ``tolerance``.
    """
    Y = _ybus(net)
    s = np.asarray(injections, dtype=complex) / net.base_mva
    n = net.n_bus
    kinds = [b.kind for b in net.buses]
    setpoint = np.array([b.voltage_mag for b in net.buses])
    for g in reversed(net.generators):
        if g.online:
            setpoint[g.bus] = g.v_set
    V = np.ones(n, dtype=complex)
    for i, k in enumerate(kinds):
        if k is not BusKind.PQ:
            V[i] = setpoint[i]

    others = [np.array([j for j in range(n) if j != i], dtype=int) for i in range(n)]
    for sweep in range(1, max_iter + 1):
        biggest = 0.0
        for i in range(n):
            if kinds[i] is BusKind.SLACK:
                continue
            coupling = Y[i, others[i]] @ V[others[i]]
            if kinds[i] is BusKind.PV:
                q = -np.imag(np.conj(V[i]) * (coupling + Y[i, i] * V[i]))
                si = complex(s[i].real, q)
            else:
                si = s[i]
            new = (np.conj(si) / np.conj(V[i]) - coupling) / Y[i, i]
            if kinds[i] is BusKind.PV:
                new = setpoint[i] * new / abs(new)
            else:
                new = V[i] + accel * (new - V[i])
            biggest = max(biggest, abs(new - V[i]))
            V[i] = new
        if biggest < tolerance:
            mis = V * np.conj(Y @ V) - s
            worst = max(
                (abs(mis[i].real) if kinds[i] is not BusKind.SLACK else 0.0)
                + (abs(mis[i].imag) if kinds[i] is BusKind.PQ else 0.0)
                for i in range(n)
            )
            if worst < tolerance * 10:
                return V, True, sweep
    return V, False, max_iter
