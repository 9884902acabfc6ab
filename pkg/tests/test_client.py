from dataclasses import replace

from client import ClientSnapshot, ClientView, ConfirmMode, liveness_report, safety_check
from constants import GENESIS_HASH
from core_model import Block, Message, Proposal, ScheduledTx
from underlay import ProtocolKind, ProtocolParams


def snap(client, slot, ledger, chain=None):
    chain = tuple(chain) if chain is not None else (GENESIS_HASH,) + tuple(f"h{tx}" for tx in ledger)
    return ClientSnapshot(client, slot, tuple(ledger), chain[-1], chain)


def signatures(keyring, block, signers, slot=3):
    return [Message(s, "c1", keyring.sign_finality(s, block.height, block.hash), slot) for s in signers]


def test_finality_quorum_confirms(syncfin_params, keyring):
    view = ClientView("c1", syncfin_params, keyring)
    assert view.mode == ConfirmMode.FINALITY
    b1 = Block(GENESIS_HASH, 1, 1, 2, (1, 2))
    view.observe([Message(2, "c1", Proposal(b1), 2)], 3)
    view.observe(signatures(keyring, b1, [1, 2, 3, 4]), 3)
    assert view.confirm() == ()
    view.observe(signatures(keyring, b1, [5]), 4)
    assert view.confirm() == (1, 2)
    assert view.tip == b1.hash
    assert view.signers(b1.hash) == {1, 2, 3, 4, 5}


def test_signatures_before_block_are_buffered(syncfin_params, keyring):
    view = ClientView("c1", syncfin_params, keyring)
    b1 = Block(GENESIS_HASH, 1, 1, 2, (7,))
    view.observe(signatures(keyring, b1, [1, 2, 3, 4, 5]), 3)
    assert view.confirm() == ()
    view.observe([Message(2, "c1", Proposal(b1), 4)], 4)
    assert view.confirm() == (7,)


def test_forged_signature_dropped(syncfin_params, keyring):
    view = ClientView("c1", syncfin_params, keyring)
    b1 = Block(GENESIS_HASH, 1, 1, 2, (7,))
    good = keyring.sign_finality(1, 1, b1.hash)
    view.observe([Message(1, "c1", replace(good, signer=2), 3)], 3)
    assert view.dropped == 1


def test_two_certified_blocks_at_one_height(syncfin_params, keyring):
    view = ClientView("c1", syncfin_params, keyring)
    a1 = Block(GENESIS_HASH, 1, 1, 2, (1,))
    b1 = Block(GENESIS_HASH, 1, 2, 3, (2,))
    view.observe([Message(2, "c1", Proposal(a1), 2), Message(3, "c1", Proposal(b1), 2)], 2)
    view.observe(signatures(keyring, a1, [1, 2, 3, 4, 5]), 3)
    view.observe(signatures(keyring, b1, [3, 4, 5, 6, 7]), 3)
    view.confirm()
    assert view.inconsistent
    assert view.ledger == (1,)


def test_underlay_mode_for_base_protocols(keyring):
    params = ProtocolParams.for_protocol(ProtocolKind.MAJORITY_SYNC, 7, 2, 1)
    view = ClientView("c1", params, keyring)
    assert view.mode == ConfirmMode.UNDERLAY
    b1 = Block(GENESIS_HASH, 1, 1, 2, (5,))
    b2 = Block(b1.hash, 2, 2, 3, (6,))
    msgs = [Message(2, "c1", Proposal(b1), 2), Message(3, "c1", Proposal(b2), 4)]
    for block in (b1, b2):
        for voter in (1, 2, 3, 4):
            msgs.append(Message(voter, "c1", keyring.sign_vote(voter, block.epoch, block.hash), 4))
    view.observe(msgs, 5)
    assert view.confirm() == (5,)


def test_safety_check_prefix_chain():
    snaps = [snap("c1", 3, (1,)), snap("c2", 4, (1, 2)), snap("c1", 6, (1, 2, 3))]
    assert safety_check(snaps) is None
    assert safety_check([]) is None


def test_safety_check_reports_witness():
    shared = (GENESIS_HASH, "h1")
    a = snap("c1", 5, (1, 2), shared + ("a2",))
    b = snap("c2", 7, (1, 3), shared + ("b2",))
    violation = safety_check([snap("c1", 2, (1,), shared), a, b])
    assert violation is not None
    assert violation.height == 2
    assert (violation.block_a, violation.block_b) == ("a2", "b2")
    assert violation.first.client == "c1"


def test_liveness_measures_from_gst():
    schedule = [ScheduledTx(0, 1, 1), ScheduledTx(0, 2, 7)]
    snaps = [snap("c1", 30, (1,)), snap("c2", 34, (1,))]
    report = liveness_report(schedule, [1, 2], snaps, ["c1", "c2"], gst=20, t_confirm=20, end_slot=100)
    assert [e.tx for e in report.entries] == [1]
    entry = report.entries[0]
    assert entry.confirmed_at == 34
    assert entry.latency == 14
    assert not entry.flagged
    assert report.max_latency == 14


def test_liveness_flags_stall_only_with_known_gst():
    schedule = [ScheduledTx(5, 1, 1)]
    snaps = [snap("c1", 10, ())]
    stalled = liveness_report(schedule, [1], snaps, ["c1"], gst=0, t_confirm=20, end_slot=100)
    assert stalled.flagged == [1]
    assert stalled.unconfirmed == [1]
    unknown = liveness_report(schedule, [1], snaps, ["c1"], gst=None, t_confirm=20, end_slot=100)
    assert unknown.flagged == []
    early = liveness_report(schedule, [1], snaps, ["c1"], gst=0, t_confirm=20, end_slot=10)
    assert early.flagged == []


def test_orphan_block_first_seen_on_arrival(syncfin_params, keyring):
    view = ClientView("c1", syncfin_params, keyring)
    b1 = Block(GENESIS_HASH, 1, 1, 2, (1,))
    b2 = Block(b1.hash, 2, 2, 3, (2,))
    view.observe([Message(3, "c1", Proposal(b2), 4)], 4)
    assert b2.hash not in view.store
    view.observe([Message(2, "c1", Proposal(b1), 2)], 6)
    assert b2.hash in view.store
    assert view.first_seen[b2.hash] == (4, 0)
    assert view.first_seen[b1.hash] == (6, 1)
