"""Network data model, grid-file I/O and bus admittance construction.

Internal electrical quantities are per-unit on ``base_mva``; MW/MVAr appear
only in generator/load records and at the I/O boundary. Bus ids are 0-based
in memory and 1-based in grid files.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class BusKind(str, enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class Source(str, enum.Enum):
    SOLAR = "Solar"
    COAL = "Coal"


class GridFormatError(ValueError):
    """Malformed grid file; carries the offending 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class GridValidationError(ValueError):
    """A network violates one of the model invariants."""


class SingularBranchError(GridValidationError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    voltage_mag: float = 1.0
    voltage_ang: float = 0.0
    shunt_susceptance: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    charging_susceptance: float
    mva_rating: float
    is_tie_line: bool = False


@dataclass(frozen=True)
class Generator:
    bus: int
    source: Source
    p_set: float
    p_min: float
    p_max: float
    v_set: float
    marginal_cost: float
    online: bool = True


@dataclass(frozen=True)
class Load:
    bus: int
    p_base: float
    q_base: float


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0
    base_frequency: float = 50.0

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.kind is BusKind.SLACK)

    def solar_generators(self) -> list[int]:
        """Indices into ``generators`` of the solar units, in file order."""
        return [i for i, g in enumerate(self.generators) if g.source is Source.SOLAR]

    def tie_lines(self) -> list[int]:
        return [k for k, br in enumerate(self.branches) if br.is_tie_line]

    def replace(self, **changes) -> "Network":
        return dataclasses.replace(self, **changes)


# -- validation ---------------------------------------------------------------

def check_invariants(net: Network) -> list[tuple[str, str | None]]:
    """Run every model invariant; return ``(name, error-or-None)`` pairs."""
    results: list[tuple[str, str | None]] = []

    def check(name: str, problem: str | None) -> None:
        results.append((name, problem))

    n = net.n_bus
    check("base_mva > 0", None if net.base_mva > 0 else f"base_mva={net.base_mva}")
    check("at least one bus", None if n > 0 else "network has no buses")
    ids = [b.id for b in net.buses]
    check(
        "bus ids contiguous",
        None if ids == list(range(n)) else "bus ids must be 1..N in order",
    )

    n_slack = sum(b.kind is BusKind.SLACK for b in net.buses)
    if n_slack == 0:
        check("single slack bus", "no slack bus")
    elif n_slack > 1:
        check("single slack bus", "multiple slack buses")
    else:
        check("single slack bus", None)

    bad_v = [b.id + 1 for b in net.buses if not b.voltage_mag > 0]
    check("voltage_mag > 0", f"buses {bad_v}" if bad_v else None)

    problems = []
    for k, br in enumerate(net.branches):
        if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
            problems.append(f"branch {k + 1} references a missing bus")
        elif br.from_bus == br.to_bus:
            problems.append(f"branch {k + 1} is a self-loop")
        if br.resistance == 0 and br.reactance == 0:
            problems.append(f"branch {k + 1} has zero series impedance")
        if not br.mva_rating > 0:
            problems.append(f"branch {k + 1} has non-positive mva_rating")
    check("branch records valid", "; ".join(problems) or None)

    problems = []
    for i, g in enumerate(net.generators):
        if not 0 <= g.bus < n:
            problems.append(f"generator {i + 1} references a missing bus")
        if g.online and not (g.p_min <= g.p_set <= g.p_max):
            problems.append(f"generator {i + 1} p_set outside [p_min, p_max]")
        if not g.v_set > 0:
            problems.append(f"generator {i + 1} v_set must be positive")
    check("generator records valid", "; ".join(problems) or None)

    solar_cost = [g.marginal_cost for g in net.generators if g.source is Source.SOLAR]
    coal_cost = [g.marginal_cost for g in net.generators if g.source is Source.COAL]
    cheap = not solar_cost or not coal_cost or max(solar_cost) < min(coal_cost)
    check("solar cheaper than coal", None if cheap else "a solar unit costs >= a coal unit")

    problems = []
    for i, ld in enumerate(net.loads):
        if not 0 <= ld.bus < n:
            problems.append(f"load {i + 1} references a missing bus")
        if ld.p_base < 0:
            problems.append(f"load {i + 1} has negative p_base")
    check("load records valid", "; ".join(problems) or None)

    gen_buses = {g.bus for g in net.generators}
    no_gen = [
        b.id + 1 for b in net.buses if b.kind is not BusKind.PQ and b.id not in gen_buses
    ]
    check("Slack/PV buses host a generator", f"buses {no_gen}" if no_gen else None)

    if n and all(0 <= br.from_bus < n and 0 <= br.to_bus < n for br in net.branches):
        island = _reachable(n, [(br.from_bus, br.to_bus) for br in net.branches])
        check("connected", None if len(island) == n else f"{n - len(island)} buses unreachable")
    return results


def _reachable(n: int, edges: list[tuple[int, int]]) -> set[int]:
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, stack = {0}, [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def validate(net: Network) -> Network:
    for name, problem in check_invariants(net):
        if problem is not None:
            raise GridValidationError(f"{name}: {problem}")
    return net


# -- grid file format ---------------------------------------------------------

_SECTIONS = ("meta", "buses", "branches", "generators", "loads")
_FIELD_COUNTS = {"buses": 5, "branches": 7, "generators": 8, "loads": 3, "meta": 2}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_record(section: str, f: list[str]):
    if section == "buses":
        return Bus(int(f[0]) - 1, BusKind(f[1]), float(f[2]), float(f[3]), float(f[4]))
    if section == "branches":
        return Branch(
            int(f[0]) - 1, int(f[1]) - 1, float(f[2]), float(f[3]), float(f[4]),
            float(f[5]), _parse_bool(f[6]),
        )
    if section == "generators":
        return Generator(
            int(f[0]) - 1, Source(f[1]), float(f[2]), float(f[3]), float(f[4]),
            float(f[5]), float(f[6]), _parse_bool(f[7]),
        )
    if section == "loads":
        return Load(int(f[0]) - 1, float(f[1]), float(f[2]))
    return f[0], float(f[1])


def parse_network(text: str) -> Network:
    """Parse grid-file text without checking model invariants."""
    records: dict[str, list] = {s: [] for s in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in _SECTIONS:
                raise GridFormatError(lineno, f"unknown section header {line!r}")
            section = line[1:-1].strip()
            continue
        if section is None:
            raise GridFormatError(lineno, "record outside of any section")
        fields = [p.strip() for p in line.split(",")]
        if len(fields) != _FIELD_COUNTS[section]:
            raise GridFormatError(
                lineno, f"[{section}] expects {_FIELD_COUNTS[section]} fields, got {len(fields)}"
            )
        try:
            records[section].append(_parse_record(section, fields))
        except ValueError as exc:
            raise GridFormatError(lineno, str(exc)) from None

    meta = dict(records["meta"])
    unknown = set(meta) - {"base_mva", "base_frequency"}
    if unknown:
        raise GridFormatError(0, f"unknown meta keys {sorted(unknown)}")
    return Network(
        buses=tuple(records["buses"]),
        branches=tuple(records["branches"]),
        generators=tuple(records["generators"]),
        loads=tuple(records["loads"]),
        base_mva=meta.get("base_mva", 100.0),
        base_frequency=meta.get("base_frequency", 50.0),
    )


def load_network(text: str) -> Network:
    """Parse and validate grid-file text."""
    return validate(parse_network(text))


def read_network(path: str | Path) -> Network:
    return load_network(Path(path).read_text(encoding="utf-8"))


def serialize(net: Network) -> str:
    """Inverse of :func:`load_network`; floats are written with ``repr``."""
    r = repr
    lines = ["[meta]", f"base_mva, {r(net.base_mva)}", f"base_frequency, {r(net.base_frequency)}"]
    lines += ["", "[buses]", "# id, kind, voltage_mag, voltage_ang, shunt_susceptance"]
    for b in net.buses:
        lines.append(
            f"{b.id + 1}, {b.kind.value}, {r(b.voltage_mag)}, {r(b.voltage_ang)}, "
            f"{r(b.shunt_susceptance)}"
        )
    lines += ["", "[branches]", "# from, to, r, x, b, mva_rating, is_tie_line"]
    for br in net.branches:
        lines.append(
            f"{br.from_bus + 1}, {br.to_bus + 1}, {r(br.resistance)}, {r(br.reactance)}, "
            f"{r(br.charging_susceptance)}, {r(br.mva_rating)}, {int(br.is_tie_line)}"
        )
    lines += ["", "[generators]", "# bus, source, p_set, p_min, p_max, v_set, marginal_cost, online"]
    for g in net.generators:
        lines.append(
            f"{g.bus + 1}, {g.source.value}, {r(g.p_set)}, {r(g.p_min)}, {r(g.p_max)}, "
            f"{r(g.v_set)}, {r(g.marginal_cost)}, {int(g.online)}"
        )
    lines += ["", "[loads]", "# bus, p_base, q_base"]
    for ld in net.loads:
        lines.append(f"{ld.bus + 1}, {r(ld.p_base)}, {r(ld.q_base)}")
    return "\n".join(lines) + "\n"


def reference_grid_text() -> str:
    return resources.files("gridsubset").joinpath("grids/reference20.grid").read_text("utf-8")


def reference_network() -> Network:
    """The packaged 20-bus study grid (3 solar, 3 coal, 8 loads, 2 tie-lines)."""
    return load_network(reference_grid_text())


# -- admittance ---------------------------------------------------------------

def branch_admittances(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Series admittance and half line-charging for every branch."""
    z = np.array([complex(br.resistance, br.reactance) for br in net.branches], dtype=complex)
    if np.any(z == 0):
        k = int(np.flatnonzero(z == 0)[0])
        raise SingularBranchError(f"branch {k + 1} has zero series impedance")
    y = 1.0 / z if len(z) else z
    half_b = np.array([br.charging_susceptance / 2 for br in net.branches], dtype=float)
    return y, half_b


def admittance_matrix(net: Network) -> np.ndarray:
    """Dense complex bus admittance matrix for a pi-model network."""
    n = net.n_bus
    y_series, half_b = branch_admittances(net)
    Y = np.zeros((n, n), dtype=complex)
    for br, y, hb in zip(net.branches, y_series, half_b):
        i, j = br.from_bus, br.to_bus
        Y[i, i] += y + 1j * hb
        Y[j, j] += y + 1j * hb
        Y[i, j] -= y
        Y[j, i] -= y
    Y[np.arange(n), np.arange(n)] += 1j * np.array([b.shunt_susceptance for b in net.buses])
    return Y
