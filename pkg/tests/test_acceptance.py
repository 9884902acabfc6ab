"""
验收扫描

大规模的种子扫描带 slow 标记，默认不运行：pytest -m slow
"""

import pytest

from client import safety_check
from constants import CLASSIFY_T_CONFIRM
from params import ScenarioConfig, StrategyConfig, StrategyName
from runner import classify, honest_signature_faults, run
from simulator import simulate
from underlay import ProtocolKind

SEEDS_100 = range(100)


def _underlay_fork(result, height):
    chains = [node.confirmed_chain() for node in result.nodes.values() if node.replica not in result.transcript.corrupted]
    return len({chain[height].hash for chain in chains if len(chain) > height}) > 1


@pytest.mark.slow
@pytest.mark.parametrize("seed", SEEDS_100)
def test_forensic_trigger_accuses_exactly_the_corrupted(example_config, seed):
    report = run(example_config("forensic_trigger", seed=seed))
    assert report.violation is not None
    assert report.verdict is not None
    assert report.verdict.accused == report.config.strategy.corrupted
    assert len(report.verdict.accused) == report.config.f + 1
    assert report.signature_faults == []


@pytest.mark.slow
@pytest.mark.parametrize("name", ["passive", "crash"])
def test_syncfin_is_live_under_synchrony(example_config, name):
    epoch_len = None
    worst = 0
    for seed in SEEDS_100:
        report = run(example_config(name, seed=seed))
        epoch_len = report.config.protocol_params.epoch_len
        assert report.violation is None
        assert report.liveness.flagged == []
        assert report.liveness.unconfirmed == []
        assert report.signature_faults == []
        worst = max(worst, report.liveness.max_latency or 0)
    assert worst <= 10 * epoch_len


@pytest.mark.slow
@pytest.mark.parametrize("seed", SEEDS_100)
def test_liveness_kill_stalls_for_two_hundred_epochs(example_config, seed):
    report = run(example_config("liveness_kill", seed=seed))
    assert report.gst is not None
    assert report.config.slots - 1 - report.gst >= 200 * report.config.protocol_params.epoch_len
    assert all(growth == 0 for growth in report.growth_after_gst.values())
    assert report.post_fork_quorum_blocks == 0
    assert report.signature_faults == []


def _adversarial(seed):
    names = [StrategyName.RANDOM_DELAY, StrategyName.CRASH, StrategyName.SPLIT_BRAIN, StrategyName.LIVENESS_KILL]
    name = names[seed % len(names)]
    return ScenarioConfig(
        gst=60,
        slots=200,
        protocol=ProtocolKind.SYNCFIN,
        strategy=StrategyConfig.defaults_for(name, 7, 2, strict=False),
        seed=seed,
    )


@pytest.mark.slow
def test_syncfin_final_over_a_thousand_seeds():
    for seed in range(1000):
        result = simulate(_adversarial(seed))
        assert safety_check(result.snapshots) is None, f"种子 {seed} 出现客户端冲突"
        assert honest_signature_faults(result.transcript, result.config.n) == []
        assert len(result.transcript.corrupted) <= 2


@pytest.mark.slow
@pytest.mark.parametrize("seed", SEEDS_100)
def test_single_deviating_replica_forks_underlay(example_config, seed):
    result = simulate(example_config("split_brain", gst="infinite", slots=120, seed=seed))
    strategy = result.strategy
    assert len(strategy.config.active) == 1
    assert strategy.fork_height is not None
    assert _underlay_fork(result, strategy.fork_height)
    assert honest_signature_faults(result.transcript, result.config.n) == []


@pytest.mark.slow
@pytest.mark.parametrize("name", ["passive", "crash", "split_brain", "liveness_kill", "forensic_trigger"])
def test_rerun_reproduces_digest(example_config, name):
    first = run(example_config(name, seed=3))
    second = run(example_config(name, seed=3))
    assert first.digest == second.digest


def test_classification_matches_expected_regions():
    result = classify(seeds=(0,), workers=3)
    assert result.matches_expected, result.rows
    assert result.rows[ProtocolKind.SYNCFIN.value]["accountable"] == "yes"
    assert result.rows[ProtocolKind.MAJORITY_SYNC.value]["final"] == "no"


def _psync(name, seed):
    return ScenarioConfig(
        gst=60,
        slots=400,
        protocol=ProtocolKind.PSYNC_QUORUM,
        strategy=StrategyConfig.defaults_for(name, 7, 2, strict=False),
        seed=seed,
    )


@pytest.mark.parametrize("seed", [1, 2])
def test_psync_quorum_live_after_gst(seed):
    report = run(_psync(StrategyName.LIVENESS_KILL, seed), CLASSIFY_T_CONFIRM)
    assert report.violation is None
    assert report.liveness.flagged == []


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_psync_quorum_final_and_live(seed):
    for name in (StrategyName.SPLIT_BRAIN, StrategyName.RANDOM_DELAY, StrategyName.LIVENESS_KILL):
        report = run(_psync(name, seed), CLASSIFY_T_CONFIRM)
        assert report.violation is None
        assert report.signature_faults == []
        if name == StrategyName.LIVENESS_KILL:
            assert report.liveness.flagged == []
