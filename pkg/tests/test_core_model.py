import pytest
from hypothesis import given
from hypothesis import strategies as st

from constants import GENESIS_HASH
from core_model import (
    GENESIS,
    Block,
    BlockStore,
    FinalitySignature,
    KeyRing,
    LogEntry,
    Message,
    Proposal,
    TransactionInput,
    chain_of,
    conflicting,
    is_ancestor,
    is_prefix,
    ledger_of,
    payload_from_dict,
)
from errors import EvidenceParseError, MissingAncestorError, UnauthorizedSenderError

ledgers = st.lists(st.integers(min_value=0, max_value=5), max_size=6).map(tuple)


def test_genesis_hash_is_sentinel():
    assert GENESIS.hash == GENESIS_HASH


def test_block_hash_depends_on_content():
    a = Block(GENESIS_HASH, 1, 1, 2, (1, 2))
    b = Block(GENESIS_HASH, 1, 1, 2, (1, 2))
    c = Block(GENESIS_HASH, 1, 1, 2, (2, 1))
    assert a.hash == b.hash
    assert a.hash != c.hash
    assert len(a.hash) == 64


def test_orphan_connects_when_parent_arrives():
    store = BlockStore()
    parent = Block(GENESIS_HASH, 1, 1, 2, (1,))
    child = Block(parent.hash, 2, 2, 3, (2,))
    assert store.add(child) == []
    assert child.hash not in store
    assert store.add(parent) == [parent, child]
    assert store.max_height == 2
    assert store.at_height(2) == [child.hash]


def test_malformed_block_rejected():
    store = BlockStore()
    bad_height = Block(GENESIS_HASH, 2, 1, 2, ())
    bad_epoch = Block(GENESIS_HASH, 1, 0, 2, ())
    assert store.add(bad_height) == []
    assert store.add(bad_epoch) == []
    assert store.rejected == 2
    assert len(store) == 1


def test_missing_block_raises():
    store = BlockStore()
    with pytest.raises(MissingAncestorError):
        store["f" * 64]


def test_chain_and_ledger():
    store = BlockStore()
    b1 = Block(GENESIS_HASH, 1, 1, 2, (1, 2))
    b2 = Block(b1.hash, 2, 3, 4, (2, 3))
    store.add(b1)
    store.add(b2)
    chain = chain_of(b2.hash, store)
    assert [b.hash for b in chain] == [GENESIS_HASH, b1.hash, b2.hash]
    assert ledger_of(chain) == (1, 2, 3)


def test_ancestry_and_conflict():
    store = BlockStore()
    a1 = Block(GENESIS_HASH, 1, 1, 2, (1,))
    b1 = Block(GENESIS_HASH, 1, 2, 3, (2,))
    a2 = Block(a1.hash, 2, 3, 4, ())
    for block in (a1, b1, a2):
        store.add(block)
    assert is_ancestor(a1.hash, a2.hash, store)
    assert is_ancestor(GENESIS_HASH, b1.hash, store)
    assert not is_ancestor(b1.hash, a2.hash, store)
    assert conflicting(b1.hash, a2.hash, store)
    assert not conflicting(a1.hash, a2.hash, store)


@given(ledgers)
def test_prefix_reflexive(a):
    assert is_prefix(a, a)
    assert is_prefix((), a)


@given(ledgers, ledgers)
def test_prefix_antisymmetric(a, b):
    if is_prefix(a, b) and is_prefix(b, a):
        assert a == b


@given(ledgers, ledgers, ledgers)
def test_prefix_transitive(a, b, c):
    if is_prefix(a, b) and is_prefix(b, c):
        assert is_prefix(a, c)


@given(ledgers, ledgers)
def test_prefix_of_extension(a, b):
    assert is_prefix(a, a + b)


def test_keyring_sign_and_verify(keyring):
    vote = keyring.sign_vote(3, 5, "ab" * 32)
    assert keyring.verify(vote)
    assert not KeyRing(1).verify(vote)
    forged = FinalitySignature(3, 1, "ab" * 32, vote.tag)
    assert not keyring.verify(forged)
    assert not keyring.verify(TransactionInput(1, 0))


def test_restricted_keyring_refuses_other_identities(keyring):
    mine = keyring.restricted({2})
    sig = mine.sign_finality(2, 1, "cd" * 32)
    assert keyring.verify(sig)
    with pytest.raises(UnauthorizedSenderError):
        mine.sign_finality(3, 1, "cd" * 32)
    with pytest.raises(UnauthorizedSenderError):
        keyring.restricted(()).sign_vote(1, 1, "cd" * 32)


def test_message_order_and_copy():
    block = Block(GENESIS_HASH, 1, 1, 2, ())
    a = Message(2, "*", Proposal(block), 4)
    b = Message(10, "*", TransactionInput(1, 0), 4)
    assert sorted([b, a], key=lambda m: m.order_key) == [a, b]
    copy = a.to(5)
    assert copy.recipient == 5
    assert copy.payload_canonical == a.payload_canonical


def test_message_from_dict():
    block = Block(GENESIS_HASH, 1, 1, 2, (7,))
    msg = Message(2, "c1", Proposal(block), 3)
    again = Message.from_dict(msg.to_dict())
    assert again == msg
    assert again.payload.block.hash == block.hash


def test_unknown_payload_kind():
    with pytest.raises(EvidenceParseError):
        payload_from_dict({"kind": "gossip"})
    with pytest.raises(EvidenceParseError):
        payload_from_dict({"kind": "vote", "voter": 1})


def test_observable_hides_send_slot():
    payload = TransactionInput(1, 0)
    early = LogEntry(9, Message(0, 1, payload, 3))
    late = LogEntry(9, Message(0, 1, payload, 9))
    assert early.observable() == late.observable()
    assert LogEntry(8, Message(0, 1, payload, 3)).observable() != early.observable()
