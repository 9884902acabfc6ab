"""
不可区分世界测试

世界 0 的记录前提、n-f 个重放世界与世界 0 的逐条一致性，以及固定判定必然冤枉诚实副本。
"""

import json
import os
from dataclasses import replace

import pytest

from client import safety_check
from core_model import LogEntry
from errors import DivergenceError, PreconditionError
from params import ScenarioConfig, StrategyConfig, config_from_dict
from runner import honest_signature_faults
from underlay import ProtocolKind
from worlds import (
    WorldSpec,
    check_indistinguishable,
    forced_false_accusation,
    record_world0,
    replay_world,
    run_worlds,
)


@pytest.fixture(scope="module")
def worlds_run():
    """example/worlds.json 的世界 0 与全部重放世界"""
    path = os.path.join(os.path.dirname(os.path.dirname(__file__)), "example", "worlds.json")
    with open(path, "r", encoding="utf-8") as f:
        config = config_from_dict(json.load(f))
    t0, table = run_worlds(config, workers=2)
    return config, t0, table


def test_syncfin_has_no_world_zero(example_config):
    with pytest.raises(PreconditionError):
        record_world0(example_config("split_brain", protocol="syncfin"))


def test_world_zero_needs_a_corrupted_replica():
    config = ScenarioConfig(
        n=7,
        f=0,
        gst="on_attack_success",
        slots=120,
        protocol=ProtocolKind.MAJORITY_SYNC,
        strategy=StrategyConfig.defaults_for("split_brain", 7, 1),
    )
    with pytest.raises(PreconditionError):
        record_world0(config)


def test_world_zero_needs_an_attack(example_config):
    with pytest.raises(PreconditionError):
        record_world0(example_config("passive", protocol="majority_sync"))


def test_every_world_matches_world_zero(worlds_run):
    config, t0, table = worlds_run
    assert safety_check(t0.snapshots) is not None
    assert len(table.rows) == config.n - config.f
    assert sorted(row.honest_replica for row in table.rows) == list(range(1, config.n - config.f + 1))
    assert table.all_equal
    for row in table.rows:
        assert row.violation
        assert row.corrupted == frozenset(range(1, config.n + 1)) - {row.honest_replica}
    assert table.world0_digest == t0.digest()


def test_fixed_verdict_accuses_an_honest_replica(worlds_run):
    config, _, table = worlds_run
    assert table.fixed_verdict == frozenset({5, 6, 7})
    assert [row.world for row in table.rows if row.accused_honest] == [5]
    assert table.every_verdict_accuses_honest
    data = table.to_dict()
    assert data["all_equal"] is True
    assert len(data["rows"]) == 5


def test_replica_seed_override_diverges(worlds_run):
    _, t0, _ = worlds_run
    with pytest.raises(DivergenceError):
        replay_world(WorldSpec(t0, 1, replica_seed=1))


def test_corrupted_replica_cannot_be_honest_index(worlds_run):
    _, t0, _ = worlds_run
    with pytest.raises(PreconditionError):
        replay_world(WorldSpec(t0, 7))


def test_indistinguishability_is_sensitive(worlds_run):
    _, t0, _ = worlds_run
    assert check_indistinguishable(t0, t0, 1)
    received = dict(t0.received)
    first = received[1][0]
    received[1] = [LogEntry(first.slot + 1, first.message)] + received[1][1:]
    assert not check_indistinguishable(t0, replace(t0, received=received), 1)
    assert not check_indistinguishable(t0, replace(t0, snapshots=t0.snapshots[:-1]), 1)


@pytest.mark.parametrize("n,f", [(4, 1), (7, 2), (10, 3)])
def test_forced_false_accusation(n, f):
    assert forced_false_accusation(n, f)


def test_world_zero_is_deterministic(worlds_run):
    config, t0, _ = worlds_run
    assert record_world0(config).digest() == t0.digest()


def test_world_transcripts_keep_signature_invariants(worlds_run):
    config, t0, _ = worlds_run
    assert honest_signature_faults(t0, config.n) == []
    replayed = replay_world(WorldSpec(t0, 1))
    assert honest_signature_faults(replayed, config.n) == []
    assert check_indistinguishable(t0, replayed, 1)
