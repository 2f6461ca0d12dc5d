from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsubset.grid import (
    Branch,
    Bus,
    BusKind,
    GridFormatError,
    GridValidationError,
    Network,
    admittance_matrix,
    check_invariants,
    load_network,
    parse_network,
    serialize,
)


def test_reference_grid_shape(ref_net):
    assert ref_net.n_bus == 20
    assert len(ref_net.generators) == 6
    assert len(ref_net.loads) == 8
    assert len(ref_net.tie_lines()) == 2
    assert len(ref_net.solar_generators()) == 3
    assert ref_net.slack_bus == 0


def test_tie_lines_are_the_only_cut_between_regions(ref_net):
    # removing both tie-lines must split the coal side from the load side
    keep = [br for k, br in enumerate(ref_net.branches) if k not in ref_net.tie_lines()]
    net = ref_net.replace(branches=tuple(keep))
    problems = dict(check_invariants(net))
    assert problems["connected"] is not None


def test_two_bus_parses(two_bus):
    assert two_bus.n_bus == 2
    assert two_bus.branches[0].reactance == 0.1
    assert two_bus.loads[0].bus == 1  # ids are 0-based in memory


def test_duplicate_slack_is_rejected(two_bus_text):
    text = two_bus_text.replace("2, PQ, 1.0", "2, Slack, 1.0")
    with pytest.raises(GridValidationError, match="multiple slack"):
        load_network(text)


def test_missing_slack_is_rejected(two_bus_text):
    text = two_bus_text.replace("1, Slack, 1.0", "1, PQ, 1.0")
    with pytest.raises(GridValidationError, match="no slack"):
        load_network(text)


def test_malformed_line_reports_line_number(two_bus_text):
    lines = two_bus_text.splitlines()
    idx = next(i for i, l in enumerate(lines) if l.startswith("1, 2, 0.0"))
    lines[idx] = "1, 2, 0.0, 0.1"
    with pytest.raises(GridFormatError) as info:
        parse_network("\n".join(lines))
    assert info.value.lineno == idx + 1


def test_bad_number_reports_line_number(two_bus_text):
    text = two_bus_text.replace("2, 50.0, 0.0", "2, fifty, 0.0")
    lineno = text.splitlines().index("2, fifty, 0.0") + 1
    with pytest.raises(GridFormatError, match=f"line {lineno}:"):
        parse_network(text)


def test_solar_must_be_cheaper_than_coal(ref_net):
    gens = [g if g.source.value == "Coal" else type(g)(**{**g.__dict__, "marginal_cost": 99.0})
            for g in ref_net.generators]
    problems = dict(check_invariants(ref_net.replace(generators=tuple(gens))))
    assert problems["solar cheaper than coal"] is not None


def test_disconnected_grid_is_rejected(two_bus_text):
    text = two_bus_text.replace("[branches]", "[branches]\n").replace(
        "1, 2, 0.0, 0.1, 0.0, 60.0, 1", ""
    )
    with pytest.raises(GridValidationError, match="connected"):
        load_network(text)


def test_reference_round_trip(ref_net):
    assert load_network(serialize(ref_net)) == ref_net


# -- admittance matrix ------------------------------------------------------------

def test_two_bus_ybus_by_hand(two_bus):
    y = 1 / 0.1j
    expected = np.array([[y, -y], [-y, y]])
    np.testing.assert_allclose(admittance_matrix(two_bus), expected, atol=1e-12)


def test_line_charging_and_shunt_on_diagonal():
    net = Network(
        buses=(Bus(0, BusKind.SLACK), Bus(1, BusKind.PQ, shunt_susceptance=0.05)),
        branches=(Branch(0, 1, 0.01, 0.1, 0.02, 100.0),),
        generators=(),
        loads=(),
    )
    Y = admittance_matrix(net)
    y = 1 / complex(0.01, 0.1)
    assert Y[0, 0] == pytest.approx(y + 0.01j)
    assert Y[1, 1] == pytest.approx(y + 0.01j + 0.05j)
    assert Y[0, 1] == pytest.approx(-y)


def test_reference_ybus_symmetric_with_shunt_row_sums(ref_net):
    Y = admittance_matrix(ref_net)
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    # each row sums to that bus's shunt: half the charging of its branches plus any fixed shunt
    expected = np.array([1j * b.shunt_susceptance for b in ref_net.buses])
    for br in ref_net.branches:
        expected[br.from_bus] += 0.5j * br.charging_susceptance
        expected[br.to_bus] += 0.5j * br.charging_susceptance
    np.testing.assert_allclose(Y.sum(axis=1), expected, atol=1e-9)


def test_lossless_shuntless_rows_sum_to_zero(ref_net):
    branches = tuple(type(br)(**{**br.__dict__, "charging_susceptance": 0.0}) for br in ref_net.branches)
    buses = tuple(type(b)(**{**b.__dict__, "shunt_susceptance": 0.0}) for b in ref_net.buses)
    Y = admittance_matrix(ref_net.replace(branches=branches, buses=buses))
    np.testing.assert_allclose(Y.sum(axis=1), 0, atol=1e-9)


finite = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=6),
    data=st.data(),
)
def test_serialize_round_trip_random_chain(n, data):
    buses = [Bus(0, BusKind.SLACK, data.draw(finite))]
    buses += [Bus(i, BusKind.PQ, data.draw(finite), 0.0, data.draw(st.floats(-1, 1))) for i in range(1, n)]
    branches = [
        Branch(i, i + 1, data.draw(finite), data.draw(finite), data.draw(st.floats(0, 1)),
               data.draw(finite) * 10, data.draw(st.booleans()))
        for i in range(n - 1)
    ]
    from gridsubset.grid import Generator, Load, Source

    gens = [Generator(0, Source.COAL, 10.0, 0.0, 100.0, buses[0].voltage_mag, 30.0)]
    loads = [Load(n - 1, data.draw(finite), data.draw(finite))]
    net = Network(tuple(buses), tuple(branches), tuple(gens), tuple(loads))
    assert load_network(serialize(net)) == net
