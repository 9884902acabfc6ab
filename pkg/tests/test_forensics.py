"""
取证测试

法定人数交集的鸽巢性质、证据的重放验证，以及对真实攻击运行的指控结果。
"""

import itertools
import json
import os
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constants import GENESIS_HASH
from errors import EvidenceParseError, InsufficientEvidenceError, NoConflictError
from forensics import (
    Evidence,
    Verdict,
    extract_evidence,
    forensic,
    min_quorum_intersection,
    quorum_intersection_bound,
    rederive,
    verify_verdict,
)
from params import config_from_dict
from simulator import simulate
from underlay import ProtocolKind


@pytest.mark.parametrize("n,f", [(4, 1), (7, 2), (10, 3)])
def test_quorum_intersection_pigeonhole(n, f):
    assert min_quorum_intersection(n, f) == quorum_intersection_bound(n, f)
    assert min_quorum_intersection(n, f) >= f + 1


def test_all_pairs_of_five_subsets_of_seven():
    quorums = list(itertools.combinations(range(1, 8), 5))
    assert len(quorums) == 21
    assert all(len(set(a) & set(b)) >= 3 for a in quorums for b in quorums)


@settings(max_examples=200)
@given(st.integers(min_value=1, max_value=5), st.data())
def test_random_quorums_intersect_in_f_plus_one(f, data):
    n = 3 * f + 1
    replicas = list(range(1, n + 1))
    quorum = st.lists(st.sampled_from(replicas), min_size=2 * f + 1, max_size=2 * f + 1, unique=True)
    a, b = data.draw(quorum), data.draw(quorum)
    assert len(set(a) & set(b)) >= f + 1


@pytest.fixture(scope="module")
def triggered():
    """forensic_trigger 场景的一次完整运行"""
    path = os.path.join(os.path.dirname(os.path.dirname(__file__)), "example", "forensic_trigger.json")
    with open(path, "r", encoding="utf-8") as f:
        config = config_from_dict(json.load(f))
    return simulate(config)


def _evidence(result):
    a, b = result.clients["c1"], result.clients["c2"]
    evidence = extract_evidence(a, b)
    assert evidence is not None
    return evidence


def test_forensic_accuses_exactly_the_double_signers(triggered):
    result = triggered
    verdict = forensic(_evidence(result))
    assert verdict.accused == frozenset({5, 6, 7})
    assert verdict.accused <= result.transcript.corrupted
    assert len(verdict.proofs) == 3
    assert verdict.conflict_height >= 1
    assert len(verdict.quorum_intersection) >= 3
    assert verify_verdict(verdict)


def test_evidence_file_round_trip(triggered):
    result = triggered
    evidence = _evidence(result)
    again = Evidence.from_dict(evidence.to_dict())
    assert forensic(again).accused == forensic(evidence).accused


def test_rederive_matches_live_client(triggered):
    result = triggered
    live = result.clients["c1"]
    view = rederive("c1", live.message_log, live.params, result.config.seed)
    assert view.ledger == live.ledger
    assert view.chain == live.chain


def test_tampered_ledger_is_insufficient(triggered):
    result = triggered
    evidence = _evidence(result)
    forged = replace(evidence, ledger_b=evidence.ledger_b + (999,))
    with pytest.raises(InsufficientEvidenceError):
        forensic(forged)


def test_verdict_stands_alone(triggered):
    result = triggered
    verdict = Verdict.from_dict(forensic(_evidence(result)).to_dict())
    assert verify_verdict(verdict)
    proof = verdict.proofs[0]
    broken = replace(proof, second=replace(proof.second, tag="0" * 64))
    assert not verify_verdict(replace(verdict, proofs=(broken,) + verdict.proofs[1:]))
    assert not verify_verdict(replace(verdict, accused=verdict.accused | {1}))


def test_prefix_consistent_ledgers_are_not_a_conflict():
    evidence = Evidence(
        protocol=ProtocolKind.SYNCFIN,
        n=7,
        f=2,
        epoch_len=2,
        keyring_seed=0,
        client_a="c1",
        client_b="c2",
        ledger_a=(),
        ledger_b=(),
        chain_a=(GENESIS_HASH,),
        chain_b=(GENESIS_HASH,),
        log_a=(),
        log_b=(),
    )
    with pytest.raises(NoConflictError, match="no conflict"):
        forensic(evidence)


def test_truncated_evidence_rejected(triggered):
    result = triggered
    data = _evidence(result).to_dict()
    del data["log_b"]
    with pytest.raises(EvidenceParseError):
        Evidence.from_dict(data)


def test_passive_run_has_no_evidence(example_config):
    result = simulate(example_config("passive", slots=60))
    assert extract_evidence(result.clients["c1"], result.clients["c2"]) is None


def test_verdict_rejects_malformed_proof_pairs(triggered):
    verdict = forensic(_evidence(triggered))
    proof = verdict.proofs[0]
    rest = verdict.proofs[1:]

    same_block = replace(proof, second=proof.first)
    assert not verify_verdict(replace(verdict, proofs=(same_block,) + rest))

    other = next(p for p in rest if p.signer != proof.signer)
    wrong_signer = replace(proof, second=other.second)
    assert not verify_verdict(replace(verdict, proofs=(wrong_signer,) + rest))
