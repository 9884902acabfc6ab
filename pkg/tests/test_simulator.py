from client import safety_check
from core_model import TransactionInput, is_prefix
from simulator import simulate
from transcript import Transcript


def test_same_config_same_digest(example_config):
    first = simulate(example_config("crash", slots=100))
    second = simulate(example_config("crash", slots=100))
    assert first.transcript.digest() == second.transcript.digest()
    assert first.transcript.digest() != simulate(example_config("crash", slots=100, seed=1)).transcript.digest()


def test_synchronous_run_respects_delta(example_config):
    result = simulate(example_config("passive", slots=100))
    assert result.stats["max_delay"] <= result.config.delta
    assert result.stats["rejected_delays"] == 0
    assert result.stats["dropped"] == 0
    assert safety_check(result.snapshots) is None


def test_client_ledgers_only_grow(example_config):
    result = simulate(example_config("passive", slots=100))
    for client in result.config.client_ids:
        snaps = result.transcript.client_snapshots(client)
        assert snaps
        for earlier, later in zip(snaps, snaps[1:]):
            assert earlier.slot < later.slot
            assert is_prefix(earlier.ledger, later.ledger)
            assert not later.inconsistent


def test_environment_inputs_reach_their_targets(example_config):
    result = simulate(example_config("passive", slots=40))
    for item in result.config.schedule():
        if item.slot >= 40:
            continue
        log = result.transcript.received[item.target]
        assert any(
            isinstance(e.message.payload, TransactionInput) and e.message.payload.tx == item.tx and e.slot == item.slot
            for e in log
        )


def test_transcript_digest_survives_serialization(example_config):
    transcript = simulate(example_config("passive", slots=40)).transcript
    assert Transcript.from_dict(transcript.to_dict()).digest() == transcript.digest()


def test_no_message_is_lost(example_config):
    result = simulate(example_config("crash", slots=100))
    stats = result.stats
    assert stats["held"] == 0
    assert stats["submitted"] == stats["delivered"] + stats["pending"]
    assert stats["rejected_delays"] == 0
