"""
客户端视图与安全性/活性检查

客户端被动收集协议消息并输出账本。SyncFin 客户端在一个区块及其全部祖先
各自拿到 2f+1 个终局签名后确认它；底层协议的客户端直接套用三连续纪元规则。
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import pairwise
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from core_model import (
    GENESIS_HASH,
    Block,
    BlockHash,
    FinalitySignature,
    KeyRing,
    LogEntry,
    Message,
    Proposal,
    ReplicaId,
    ScheduledTx,
    Sync,
    TxId,
    Vote,
    chain_of,
    is_prefix,
    ledger_of,
)
from underlay import NotarizationView, ProtocolKind, ProtocolParams

logger = logging.getLogger(__name__)


class ConfirmMode(str, Enum):
    FINALITY = "finality"
    UNDERLAY = "underlay"


@dataclass(frozen=True)
class ClientSnapshot:
    client: str
    slot: int
    ledger: Tuple[TxId, ...]
    tip: BlockHash
    chain: Tuple[BlockHash, ...]
    inconsistent: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "client": self.client,
            "slot": self.slot,
            "ledger": list(self.ledger),
            "tip": self.tip,
            "chain": list(self.chain),
            "inconsistent": self.inconsistent,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClientSnapshot":
        return cls(
            client=str(data["client"]),
            slot=int(data["slot"]),
            ledger=tuple(int(tx) for tx in data["ledger"]),
            tip=str(data["tip"]),
            chain=tuple(str(h) for h in data["chain"]),
            inconsistent=bool(data.get("inconsistent", False)),
        )


@dataclass(frozen=True)
class SafetyViolation:
    first: ClientSnapshot
    second: ClientSnapshot
    block_a: BlockHash
    block_b: BlockHash
    height: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "block_a": self.block_a,
            "block_b": self.block_b,
            "height": self.height,
        }


class ClientView:
    """
    单个客户端的观察与确认状态

    确认结果只依赖消息日志的内容与顺序，forensics 模块据此重放日志来验证证据。
    """

    def __init__(
        self,
        client: str,
        params: ProtocolParams,
        keyring: KeyRing,
        mode: Optional[ConfirmMode] = None,
    ):
        if mode is None:
            mode = ConfirmMode.FINALITY if params.protocol == ProtocolKind.SYNCFIN else ConfirmMode.UNDERLAY
        self.client = client
        self.params = params
        self.keyring = keyring.restricted(())
        self.mode = ConfirmMode(mode)
        self.slot = 0
        self.view = NotarizationView(params.notarize_threshold)
        self.sigs: Dict[BlockHash, Dict[ReplicaId, FinalitySignature]] = {}
        self.first_seen: Dict[BlockHash, Tuple[int, int]] = {GENESIS_HASH: (-1, -1)}
        self.message_log: List[LogEntry] = []
        self.ledger: Tuple[TxId, ...] = ()
        self.tip: BlockHash = GENESIS_HASH
        self.chain: Tuple[BlockHash, ...] = (GENESIS_HASH,)
        self.inconsistent = False
        self.dropped = 0
        self._buffered: Dict[BlockHash, List[FinalitySignature]] = {}
        self._certified: Set[BlockHash] = {GENESIS_HASH}
        self._dirty = False

    @property
    def store(self):
        return self.view.store

    def observe(self, delivered: Iterable[Message], slot: int) -> "ClientView":
        self.slot = slot
        for msg in delivered:
            self.message_log.append(LogEntry(slot, msg))
            self._ingest(msg)
        return self

    def _ingest(self, msg: Message) -> None:
        payload = msg.payload
        if isinstance(payload, Proposal):
            self._add_block(payload.block)
        elif isinstance(payload, Sync):
            for block in payload.blocks:
                self._add_block(block)
            for vote in payload.votes:
                self._add_vote(vote)
        elif isinstance(payload, Vote):
            self._add_vote(payload)
        elif isinstance(payload, FinalitySignature):
            self._add_signature(payload)

    def _add_block(self, block: Block) -> None:
        # (时隙, 日志序号)：首次携带该区块的消息，孤块也从这里算起
        self.first_seen.setdefault(block.hash, (self.slot, len(self.message_log) - 1))
        for added in self.view.add_block(block):
            for sig in self._buffered.pop(added.hash, ()):
                self._count(sig, added)
            self._dirty = True

    def _add_vote(self, vote: Vote) -> None:
        if self.view.has_vote(vote):
            return
        if not self.keyring.verify(vote):
            self.dropped += 1
            return
        self.view.add_vote(vote)

    def _add_signature(self, sig: FinalitySignature) -> None:
        if not self.keyring.verify(sig):
            self.dropped += 1
            logger.warning("客户端 %s 收到未通过认证的终局签名（签名者 %d）", self.client, sig.signer)
            return
        block = self.store.get(sig.block)
        if block is None:
            self._buffered.setdefault(sig.block, []).append(sig)
            return
        self._count(sig, block)

    def _count(self, sig: FinalitySignature, block: Block) -> None:
        if sig.height != block.height:
            self.dropped += 1
            return
        signers = self.sigs.setdefault(block.hash, {})
        if sig.signer not in signers:
            signers[sig.signer] = sig
            self._dirty = True

    def signers(self, block_hash: BlockHash) -> Set[ReplicaId]:
        return set(self.sigs.get(block_hash, {}))

    def certified(self) -> Set[BlockHash]:
        """自身及全部祖先都拿到 2f+1 个终局签名的区块"""
        if self._dirty:
            quorum = self.params.quorum
            certified = {GENESIS_HASH}
            for height in range(1, self.store.max_height + 1):
                for block_hash in self.store.at_height(height):
                    block = self.store[block_hash]
                    if block.parent in certified and len(self.sigs.get(block_hash, ())) >= quorum:
                        certified.add(block_hash)
            self._certified = certified
            self._dirty = False
        return self._certified

    def _finality_tip(self) -> BlockHash:
        certified = self.certified()
        by_height: Dict[int, List[BlockHash]] = {}
        for block_hash in certified:
            by_height.setdefault(self.store[block_hash].height, []).append(block_hash)
        if any(len(hashes) > 1 for hashes in by_height.values()):
            if not self.inconsistent:
                logger.warning("客户端 %s 看到同一高度上两个被认证的冲突区块", self.client)
            self.inconsistent = True
        top = by_height[max(by_height)]
        return min(top, key=lambda h: self.first_seen[h])

    def confirm(self) -> Tuple[TxId, ...]:
        """按确认规则更新账本；新账本不延伸旧账本时保留旧账本并标记不一致"""
        self.view.pop_newly_notarized()
        if self.mode == ConfirmMode.FINALITY:
            tip = self._finality_tip()
        else:
            tip = self.view.confirmed_tip().hash
        if tip == self.tip:
            return self.ledger
        chain = chain_of(tip, self.store)
        ledger = ledger_of(chain)
        if is_prefix(self.ledger, ledger):
            self.ledger = ledger
            self.tip = tip
            self.chain = tuple(b.hash for b in chain)
        elif not self.inconsistent:
            logger.warning("客户端 %s 的新账本不延伸旧账本，保留旧账本", self.client)
            self.inconsistent = True
        return self.ledger

    def snapshot(self) -> ClientSnapshot:
        return ClientSnapshot(self.client, self.slot, self.ledger, self.tip, self.chain, self.inconsistent)


def safety_check(snapshots: Iterable[ClientSnapshot]) -> Optional[SafetyViolation]:
    """
    任取两个快照，若二者账本互不为前缀则返回违规见证。

    按长度排好序的不同账本两两相邻都满足前缀关系时，全体构成一条前缀链。
    """
    earliest: Dict[Tuple[TxId, ...], ClientSnapshot] = {}
    for snap in sorted(snapshots, key=lambda s: (s.slot, s.client)):
        earliest.setdefault(snap.ledger, snap)
    ordered = sorted(earliest.values(), key=lambda s: (len(s.ledger), s.slot, s.client))
    for a, b in pairwise(ordered):
        if not is_prefix(a.ledger, b.ledger):
            return _witness(a, b)
    return None


def _witness(a: ClientSnapshot, b: ClientSnapshot) -> SafetyViolation:
    first, second = sorted((a, b), key=lambda s: (s.slot, s.client))
    for height, (x, y) in enumerate(zip(first.chain, second.chain)):
        if x != y:
            return SafetyViolation(first, second, x, y, height)
    height = min(len(first.chain), len(second.chain)) - 1
    return SafetyViolation(first, second, first.tip, second.tip, height)


@dataclass(frozen=True)
class TxLatency:
    tx: TxId
    input_slot: int
    target: ReplicaId
    confirmed_at: Optional[int]
    latency: Optional[int]
    flagged: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tx": self.tx,
            "input_slot": self.input_slot,
            "target": self.target,
            "confirmed_at": self.confirmed_at,
            "latency": self.latency,
            "flagged": self.flagged,
        }


@dataclass
class LivenessReport:
    t_confirm: Optional[int]
    gst: Optional[int]
    entries: List[TxLatency] = field(default_factory=list)

    @property
    def flagged(self) -> List[TxId]:
        return [e.tx for e in self.entries if e.flagged]

    @property
    def max_latency(self) -> Optional[int]:
        latencies = [e.latency for e in self.entries if e.latency is not None]
        return max(latencies) if latencies else None

    @property
    def unconfirmed(self) -> List[TxId]:
        return [e.tx for e in self.entries if e.confirmed_at is None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t_confirm": self.t_confirm,
            "gst": self.gst,
            "max_latency": self.max_latency,
            "flagged": self.flagged,
            "unconfirmed": self.unconfirmed,
            "entries": [e.to_dict() for e in self.entries],
        }


def liveness_report(
    schedule: Sequence[ScheduledTx],
    honest: Iterable[ReplicaId],
    snapshots: Sequence[ClientSnapshot],
    clients: Iterable[str],
    gst: Optional[int],
    t_confirm: Optional[int],
    end_slot: int,
) -> LivenessReport:
    """
    对输入给诚实副本的每笔交易，给出所有客户端账本都包含它的最早时隙。

    计时从 max(输入时隙, GST) 开始；gst 为 None（GST 从未到来）时从输入时隙计时。
    gst 为 None 或 t_confirm 为 None 时只测量不标记。
    """
    honest = set(honest)
    clients = list(clients)
    first_contains: Dict[str, Dict[TxId, int]] = {c: {} for c in clients}
    for snap in sorted(snapshots, key=lambda s: s.slot):
        seen = first_contains.get(snap.client)
        if seen is None:
            continue
        for tx in snap.ledger:
            seen.setdefault(tx, snap.slot)

    report = LivenessReport(t_confirm=t_confirm, gst=gst)
    for item in sorted(schedule, key=lambda s: (s.slot, s.tx)):
        if item.target not in honest:
            continue
        slots = [first_contains[c].get(item.tx) for c in clients]
        confirmed_at = None if not clients or None in slots else max(slots)
        start = item.slot if gst is None else max(item.slot, gst)
        latency = None if confirmed_at is None else max(confirmed_at - start, 0)
        flagged = False
        if gst is not None and t_confirm is not None:
            deadline = start + t_confirm
            flagged = confirmed_at > deadline if confirmed_at is not None else end_slot >= deadline
        report.entries.append(
            TxLatency(item.tx, item.slot, item.target, confirmed_at, latency, flagged)
        )
    return report
