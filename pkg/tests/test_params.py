import json

import pytest

from errors import ConfigError
from params import (
    GST_ON_ATTACK_SUCCESS,
    ScenarioConfig,
    StrategyConfig,
    StrategyName,
    config_from_dict,
    config_to_dict,
    generate_tx_schedule,
    load_config,
)
from sim_net import NetworkMode
from underlay import ProtocolKind


def test_defaults():
    config = config_from_dict({})
    assert (config.n, config.f, config.delta, config.slots) == (7, 2, 1, 400)
    assert config.protocol == ProtocolKind.SYNCFIN
    assert config.strategy.name == StrategyName.PASSIVE
    assert config.client_ids == ["c1", "c2"]
    assert config.network_config.mode == NetworkMode.SYNCHRONY


def test_syncfin_requires_3f_plus_1():
    with pytest.raises(ConfigError, match="n must equal 3f\\+1") as info:
        config_from_dict({"n": 6, "f": 2})
    assert info.value.field == "n"
    config_from_dict({"n": 6, "f": 2, "protocol": "majority_sync"})


@pytest.mark.parametrize(
    "data,field",
    [
        ({"protocol": "pbft"}, "protocol"),
        ({"strategy": "bribe"}, "strategy.name"),
        ({"gst": "soon"}, "gst"),
        ({"gst": 500, "slots": 400}, "slots"),
        ({"seed": -1}, "seed"),
        ({"n": "7"}, "n"),
        ({"tx_schedule": [[0, 1, 9]]}, "tx_schedule"),
        ({"tx_schedule": [[0, 1, 1], [2, 1, 2]]}, "tx_schedule"),
        ({"strategy": {"name": "split_brain", "partition": [[1, 2, 3], [3, 4, 5, 6]]}}, "strategy.partition"),
        ({"strategy": {"name": "split_brain", "active": [1]}}, "strategy.active"),
    ],
)
def test_field_level_errors(data, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.field == field


def test_partition_defaults():
    split = StrategyConfig.defaults_for("split_brain", 7, 2)
    assert split.corrupted == {6, 7}
    assert split.active == {7}
    assert split.idle == {6}
    assert split.partition == ({1, 2, 3}, {4, 5, 6})
    assert split.side_of(6) == 1 and split.side_of(7) is None

    trigger = StrategyConfig.defaults_for(StrategyName.FORENSIC_TRIGGER, 7, 2)
    assert trigger.corrupted == trigger.active == {5, 6, 7}
    assert trigger.partition == ({1, 2}, {3, 4})

    crash = StrategyConfig.defaults_for("crash", 7, 2, attack_start=5)
    assert crash.corrupted == {6, 7} and crash.attack_start == 5


def test_strategy_name_shorthand():
    config = config_from_dict({"strategy": "liveness_kill", "gst": GST_ON_ATTACK_SUCCESS})
    assert config.strategy.name == StrategyName.LIVENESS_KILL
    assert config.gst_slot is None
    assert config.network_config.gst is None
    assert config.honest == [1, 2, 3, 4, 5]


def test_generated_schedule_is_seeded():
    config = ScenarioConfig(slots=200)
    first = generate_tx_schedule(config)
    assert first == generate_tx_schedule(config)
    assert first != generate_tx_schedule(config.with_seed(1))
    assert [item.target for item in first[:7]] == [1, 2, 3, 4, 5, 6, 7]
    assert all(item.slot < 150 for item in first)
    assert len({item.tx for item in first}) == len(first)


def test_explicit_schedule_is_kept():
    config = config_from_dict({"tx_schedule": [[0, 10, 1], [4, 11, 2]]})
    assert [item.to_list() for item in config.schedule()] == [[0, 10, 1], [4, 11, 2]]


def test_config_dict_round_trip(tmp_path):
    config = config_from_dict({"strategy": "forensic_trigger", "gst": GST_ON_ATTACK_SUCCESS, "seed": 11})
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(config_to_dict(config)), encoding="utf-8")
    assert config_from_dict(load_config(str(path))) == config


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{\"n\": 7", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(broken))
