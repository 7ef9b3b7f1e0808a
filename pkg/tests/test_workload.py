"""Conflict generation and scenario file round trips."""

from pathlib import Path

import pytest

from conflictsim.cli import BUNDLED_DIR, resolve_scenario
from conflictsim.core import Query, Transfer
from conflictsim.errors import (
    InfeasibleSpecError,
    ScenarioParseError,
    ScenarioValidationError,
)
from conflictsim.workload import (
    ConflictSpec,
    conflict_graph_has_isolated,
    dump_scenario,
    generate_conflicting_set,
    load_scenario,
    parse_scenario,
)

CANONICAL = [
    "table2_block_withholding",
    "sec3b_double_spend",
    "table2_balance_attack",
    "ddos_default",
    "fig1_race",
]


# -- generator -----------------------------------------------------------------


def test_generated_set_shape_and_conflict_density():
    spec = ConflictSpec(wallets=("A1", "V1", "V2"), count=100, window=10_000,
                        seed=7)
    txs = generate_conflicting_set(spec)
    assert len(txs) == 100
    assert not conflict_graph_has_isolated(txs)
    assert all(0 <= tx.submit_time <= 10_000 for tx in txs)
    amounts = [tx.payload.amount for tx in txs
               if isinstance(tx.payload, Transfer)]
    assert amounts and all(1 <= a <= 20 for a in amounts)


def test_generated_set_deterministic_in_seed():
    spec = ConflictSpec(wallets=("A1", "V1", "V2"), count=60, window=500, seed=3)
    assert generate_conflicting_set(spec) == generate_conflicting_set(spec)
    other = ConflictSpec(wallets=("A1", "V1", "V2"), count=60, window=500, seed=4)
    assert generate_conflicting_set(spec) != generate_conflicting_set(other)


def test_single_transaction_is_infeasible():
    spec = ConflictSpec(wallets=("A1", "V1"), count=1, window=100)
    with pytest.raises(InfeasibleSpecError):
        generate_conflicting_set(spec)


def test_one_wallet_is_infeasible_at_construction():
    with pytest.raises(InfeasibleSpecError):
        ConflictSpec(wallets=("A1",), count=10, window=100, mix_query=0.5)


def test_all_query_mix_is_infeasible():
    spec = ConflictSpec(wallets=("A1", "V1"), count=10, window=100,
                        mix_query=1.0)
    with pytest.raises(InfeasibleSpecError):
        generate_conflicting_set(spec)


def test_query_mix_respected_and_still_connected():
    spec = ConflictSpec(wallets=tuple(f"w{i}" for i in range(8)), count=200,
                        window=1000, seed=5, mix_query=0.4)
    txs = generate_conflicting_set(spec)
    queries = sum(isinstance(tx.payload, Query) for tx in txs)
    assert 40 <= queries <= 120
    assert not conflict_graph_has_isolated(txs)


def test_burst_window_zero_puts_everything_at_start():
    spec = ConflictSpec(wallets=("a", "b"), count=50, window=0, start=1000,
                        seed=1)
    txs = generate_conflicting_set(spec)
    assert {tx.submit_time for tx in txs} == {1000}


# -- scenario files ---------------------------------------------------------------


@pytest.mark.parametrize("name", CANONICAL)
def test_canonical_scenarios_ship_and_validate(name):
    assert (BUNDLED_DIR / f"{name}.scn").exists()
    config = resolve_scenario(name)
    config.validate()


@pytest.mark.parametrize("name", CANONICAL)
def test_round_trip(name):
    config = load_scenario(BUNDLED_DIR / f"{name}.scn")
    again = parse_scenario(dump_scenario(config), name=config.name)
    assert again == config


def test_missing_balance_for_attack_wallet_is_validation_error():
    text = (BUNDLED_DIR / "table2_block_withholding.scn").read_text()
    broken = text.replace("A1 1000\n", "")
    with pytest.raises(ScenarioValidationError):
        parse_scenario(broken)


def test_malformed_syntax_is_parse_error_with_line():
    text = "[topology]\nnode n1 role=orderer\n[balances]\nA1 notanumber\n"
    with pytest.raises(ScenarioParseError) as err:
        parse_scenario(text)
    assert "line 4" in str(err.value)


def test_unknown_section_rejected():
    with pytest.raises(ScenarioParseError):
        parse_scenario("[wat]\n")


def test_channel_without_orderer_rejected():
    text = """
[topology]
node client1 role=client channels=main
node peer1 role=peer channels=main
[balances]
A1 100
[attack]
kind ordering_race
[policy]
mode baseline
[conflicts]
tx t1 transfer A1 V1 5 at 0
[seed]
1
[deadline]
100
"""
    with pytest.raises(ScenarioValidationError):
        parse_scenario(text)


def test_scripted_tx_unknown_wallet_rejected():
    text = """
[topology]
node client1 role=client channels=main
node orderer1 role=orderer channels=main
[balances]
A1 100
[attack]
kind ordering_race
[policy]
mode baseline
[conflicts]
tx t1 transfer A1 NOPE 5 at 0
[seed]
1
[deadline]
100
"""
    with pytest.raises(ScenarioValidationError):
        parse_scenario(text)


def test_two_conflict_sources_rejected():
    text = """
[topology]
node client1 role=client channels=main
node orderer1 role=orderer channels=main
[balances]
A1 100
B1 100
[attack]
kind ordering_race
[policy]
mode baseline
[conflicts]
generate wallets=A1,B1 count=10 window=10
tx t1 transfer A1 B1 5 at 0
[seed]
1
[deadline]
100
"""
    with pytest.raises(ScenarioValidationError):
        parse_scenario(text)


def test_save_and_reload(tmp_path):
    config = resolve_scenario("fig1_race")
    out = tmp_path / "copy.scn"
    out.write_text(dump_scenario(config))
    assert load_scenario(out) == config
