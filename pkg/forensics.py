"""
取证

从两个账本冲突的客户端视图中提取自包含的证据，重放确认规则验证证据，
并找出在同一高度对两个不同区块签名的副本。判定只依赖证据内容，任何人可独立复核。
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from client import ClientView
from core_model import (
    BlockHash,
    FinalitySignature,
    KeyRing,
    LogEntry,
    ReplicaId,
    TxId,
    is_prefix,
    payload_from_dict,
)
from errors import (
    EvidenceParseError,
    InsufficientEvidenceError,
    IrreproducibleViewError,
    NoConflictError,
)
from underlay import ProtocolKind, ProtocolParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Evidence:
    """两个客户端交换的、导致各自账本的全部协议消息"""

    protocol: ProtocolKind
    n: int
    f: int
    epoch_len: int
    keyring_seed: int
    client_a: str
    client_b: str
    ledger_a: Tuple[TxId, ...]
    ledger_b: Tuple[TxId, ...]
    chain_a: Tuple[BlockHash, ...]
    chain_b: Tuple[BlockHash, ...]
    log_a: Tuple[LogEntry, ...]
    log_b: Tuple[LogEntry, ...]

    @property
    def params(self) -> ProtocolParams:
        threshold = ProtocolParams.for_protocol(self.protocol, self.n, self.f, 1).notarize_threshold
        return ProtocolParams(self.n, self.f, self.epoch_len, threshold, self.protocol)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "n": self.n,
            "f": self.f,
            "epoch_len": self.epoch_len,
            "keyring_seed": self.keyring_seed,
            "client_a": self.client_a,
            "client_b": self.client_b,
            "ledger_a": list(self.ledger_a),
            "ledger_b": list(self.ledger_b),
            "chain_a": list(self.chain_a),
            "chain_b": list(self.chain_b),
            "log_a": [e.to_dict() for e in self.log_a],
            "log_b": [e.to_dict() for e in self.log_b],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Evidence":
        try:
            return cls(
                protocol=ProtocolKind(data["protocol"]),
                n=int(data["n"]),
                f=int(data["f"]),
                epoch_len=int(data["epoch_len"]),
                keyring_seed=int(data["keyring_seed"]),
                client_a=str(data["client_a"]),
                client_b=str(data["client_b"]),
                ledger_a=tuple(int(tx) for tx in data["ledger_a"]),
                ledger_b=tuple(int(tx) for tx in data["ledger_b"]),
                chain_a=tuple(str(h) for h in data["chain_a"]),
                chain_b=tuple(str(h) for h in data["chain_b"]),
                log_a=tuple(LogEntry.from_dict(e) for e in data["log_a"]),
                log_b=tuple(LogEntry.from_dict(e) for e in data["log_b"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise EvidenceParseError(f"证据文件格式错误: {e}") from e


@dataclass(frozen=True)
class ProofPair:
    """同一副本在同一高度对两个不同区块的终局签名"""

    signer: ReplicaId
    first: FinalitySignature
    second: FinalitySignature

    def is_valid(self, keyring: KeyRing) -> bool:
        return (
            self.first.signer == self.signer
            and self.second.signer == self.signer
            and self.first.height == self.second.height
            and self.first.block != self.second.block
            and keyring.verify(self.first)
            and keyring.verify(self.second)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"signer": self.signer, "first": self.first.to_dict(), "second": self.second.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProofPair":
        first, second = payload_from_dict(data["first"]), payload_from_dict(data["second"])
        if not isinstance(first, FinalitySignature) or not isinstance(second, FinalitySignature):
            raise EvidenceParseError("证明对必须由两个终局签名组成")
        return cls(int(data["signer"]), first, second)


@dataclass(frozen=True)
class Verdict:
    accused: FrozenSet[ReplicaId]
    proofs: Tuple[ProofPair, ...]
    conflict_height: int
    quorum_intersection: FrozenSet[ReplicaId]
    keyring_seed: int
    n: int
    f: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accused": sorted(self.accused),
            "proofs": [p.to_dict() for p in self.proofs],
            "conflict_height": self.conflict_height,
            "quorum_intersection": sorted(self.quorum_intersection),
            "keyring_seed": self.keyring_seed,
            "n": self.n,
            "f": self.f,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Verdict":
        try:
            return cls(
                accused=frozenset(int(r) for r in data["accused"]),
                proofs=tuple(ProofPair.from_dict(p) for p in data["proofs"]),
                conflict_height=int(data["conflict_height"]),
                quorum_intersection=frozenset(int(r) for r in data["quorum_intersection"]),
                keyring_seed=int(data["keyring_seed"]),
                n=int(data["n"]),
                f=int(data["f"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise EvidenceParseError(f"判定文件格式错误: {e}") from e


def rederive(client: str, log: Sequence[LogEntry], params: ProtocolParams, keyring_seed: int) -> ClientView:
    """按时隙重放消息日志，每个时隙观察后确认一次，与模拟中的客户端完全一致"""
    view = ClientView(client, params, KeyRing(keyring_seed))
    for slot, group in itertools.groupby(log, key=lambda e: e.slot):
        view.observe([e.message for e in group], slot)
        view.confirm()
    return view


def _conflict(a: Sequence[TxId], b: Sequence[TxId]) -> bool:
    return not (is_prefix(a, b) or is_prefix(b, a))


def extract_evidence(a: ClientView, b: ClientView) -> Optional[Evidence]:
    if not _conflict(a.ledger, b.ledger):
        return None
    seed = a.keyring.seed
    for view in (a, b):
        again = rederive(view.client, view.message_log, view.params, seed)
        if again.ledger != view.ledger:
            raise IrreproducibleViewError(f"客户端 {view.client} 的账本无法从其消息日志重新推导")
    params = a.params
    return Evidence(
        protocol=params.protocol,
        n=params.n,
        f=params.f,
        epoch_len=params.epoch_len,
        keyring_seed=seed,
        client_a=a.client,
        client_b=b.client,
        ledger_a=a.ledger,
        ledger_b=b.ledger,
        chain_a=a.chain,
        chain_b=b.chain,
        log_a=tuple(a.message_log),
        log_b=tuple(b.message_log),
    )


def _signatures(entries: Iterable[LogEntry], keyring: KeyRing) -> Dict[Tuple[ReplicaId, int], Dict[BlockHash, FinalitySignature]]:
    grouped: Dict[Tuple[ReplicaId, int], Dict[BlockHash, FinalitySignature]] = {}
    for entry in entries:
        sig = entry.message.payload
        if isinstance(sig, FinalitySignature) and keyring.verify(sig):
            grouped.setdefault((sig.signer, sig.height), {}).setdefault(sig.block, sig)
    return grouped


def forensic(ev: Evidence, params: Optional[ProtocolParams] = None) -> Verdict:
    """
    复核证据并找出双重签名者。

    两条冲突链在最低冲突高度上各有 2f+1 个签名时，签名集合的交集至少 f+1 人；
    被指控者是在任一高度为两个不同区块签名的全部副本，每人附一对签名作为证明。
    """
    params = params or ev.params
    views = []
    for client, log, ledger, chain in (
        (ev.client_a, ev.log_a, ev.ledger_a, ev.chain_a),
        (ev.client_b, ev.log_b, ev.ledger_b, ev.chain_b),
    ):
        view = rederive(client, log, params, ev.keyring_seed)
        if view.ledger != ledger or view.chain != chain:
            raise InsufficientEvidenceError(f"客户端 {client} 的账本无法从证据中的消息重新推导")
        views.append(view)
    if not _conflict(ev.ledger_a, ev.ledger_b):
        raise NoConflictError("两个账本互为前缀，不构成冲突 (no conflict)")

    keyring = KeyRing(ev.keyring_seed)
    proofs = []
    for (signer, height), by_block in sorted(_signatures(ev.log_a + ev.log_b, keyring).items()):
        if len(by_block) < 2:
            continue
        first, second = (by_block[h] for h in sorted(by_block)[:2])
        proofs.append(ProofPair(signer, first, second))
    # 每个副本只保留最低高度上的一对证明
    unique: Dict[ReplicaId, ProofPair] = {}
    for proof in proofs:
        unique.setdefault(proof.signer, proof)

    height = _lowest_conflict(ev.chain_a, ev.chain_b)
    intersection: Set[ReplicaId] = set()
    if height is not None:
        intersection = views[0].signers(ev.chain_a[height]) & views[1].signers(ev.chain_b[height])
    verdict = Verdict(
        accused=frozenset(unique),
        proofs=tuple(unique[r] for r in sorted(unique)),
        conflict_height=-1 if height is None else height,
        quorum_intersection=frozenset(intersection),
        keyring_seed=ev.keyring_seed,
        n=params.n,
        f=params.f,
    )
    logger.info("取证完成：冲突高度 %s，指控 %s", verdict.conflict_height, sorted(verdict.accused))
    return verdict


def _lowest_conflict(chain_a: Sequence[BlockHash], chain_b: Sequence[BlockHash]) -> Optional[int]:
    for height, (x, y) in enumerate(zip(chain_a, chain_b)):
        if x != y:
            return height
    return None


def verify_verdict(v: Verdict) -> bool:
    """只依赖判定自身内容：每对证明同一签名者、同一高度、不同区块且签名有效"""
    keyring = KeyRing(v.keyring_seed)
    if v.accused != frozenset(p.signer for p in v.proofs):
        return False
    return all(p.is_valid(keyring) for p in v.proofs)


def quorum_intersection_bound(n: int, f: int) -> int:
    """两个 2f+1 法定人数集合交集大小的下界"""
    return max(2 * (2 * f + 1) - n, 0)


def min_quorum_intersection(n: int, f: int) -> int:
    """穷举 [n] 中所有 (2f+1) 子集对，返回最小交集"""
    quorums = [frozenset(q) for q in itertools.combinations(range(1, n + 1), 2 * f + 1)]
    return min(len(a & b) for a in quorums for b in quorums)
