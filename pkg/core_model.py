"""
核心数据模型

区块、区块存储、账本、消息与模拟签名，以及安全性定义用到的前缀/冲突谓词。
所有值类型都是不可变的；BlockStore 是唯一的可变结构，只属于单个模拟实例。
"""

import hashlib
import hmac
import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from constants import GENESIS_HASH
from errors import EvidenceParseError, MissingAncestorError, UnauthorizedSenderError

logger = logging.getLogger(__name__)

ReplicaId = int
ClientId = str
TxId = int
BlockHash = str
Party = Union[int, str]

# 收件人哨兵：BROADCAST 发往全部副本和客户端，ALL_REPLICAS 只发往副本
BROADCAST = "*"
ALL_REPLICAS = "replicas"


def canonical_json(obj: Any) -> str:
    """规范化 JSON：键排序、无多余空白，摘要与排序都以它为准"""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class Block:
    parent: BlockHash
    height: int
    epoch: int
    proposer: ReplicaId
    payload: Tuple[TxId, ...] = ()

    @cached_property
    def hash(self) -> BlockHash:
        return hash_block(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "parent": self.parent,
            "height": self.height,
            "epoch": self.epoch,
            "proposer": self.proposer,
            "payload": list(self.payload),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Block":
        return cls(
            parent=str(data["parent"]),
            height=int(data["height"]),
            epoch=int(data["epoch"]),
            proposer=int(data["proposer"]),
            payload=tuple(int(tx) for tx in data["payload"]),
        )


GENESIS = Block(parent="", height=0, epoch=0, proposer=0, payload=())


def hash_block(block: Block) -> BlockHash:
    """区块哈希：sha256(规范化 JSON)，创世区块固定为哨兵哈希"""
    if block == GENESIS:
        return GENESIS_HASH
    body = canonical_json(
        [block.parent, block.height, block.epoch, block.proposer, list(block.payload)]
    )
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


class BlockStore:
    """
    区块存储

    只保存祖先齐全的区块；父区块尚未到达的区块暂存为孤块，父区块到达后自动接入。
    结构不合法（高度或纪元不递增）的区块直接丢弃并计数。
    """

    def __init__(self):
        self._blocks: Dict[BlockHash, Block] = {GENESIS_HASH: GENESIS}
        self._by_height: Dict[int, List[BlockHash]] = {0: [GENESIS_HASH]}
        self._orphans: Dict[BlockHash, Dict[BlockHash, Block]] = {}
        self.rejected = 0

    def __contains__(self, block_hash: BlockHash) -> bool:
        return block_hash in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self._blocks.values())

    def get(self, block_hash: BlockHash) -> Optional[Block]:
        return self._blocks.get(block_hash)

    def __getitem__(self, block_hash: BlockHash) -> Block:
        try:
            return self._blocks[block_hash]
        except KeyError:
            raise MissingAncestorError(f"区块 {block_hash[:12]} 不在存储中") from None

    def at_height(self, height: int) -> List[BlockHash]:
        return sorted(self._by_height.get(height, ()))

    @property
    def max_height(self) -> int:
        return max(self._by_height)

    def add(self, block: Block) -> List[Block]:
        """加入区块，返回因此新接入存储的区块（祖先在前）"""
        if block.height == 0 or block.hash in self._blocks:
            return []
        parent = self._blocks.get(block.parent)
        if parent is None:
            self._orphans.setdefault(block.parent, {})[block.hash] = block
            return []
        if not self._well_formed(block, parent):
            self.rejected += 1
            logger.debug("丢弃结构不合法的区块 %s", block.hash[:12])
            return []

        added = []
        frontier = [block]
        while frontier:
            current = frontier.pop(0)
            self._blocks[current.hash] = current
            self._by_height.setdefault(current.height, []).append(current.hash)
            added.append(current)
            for child in sorted(
                self._orphans.pop(current.hash, {}).values(), key=lambda b: b.hash
            ):
                if self._well_formed(child, current):
                    frontier.append(child)
                else:
                    self.rejected += 1
        return added

    @staticmethod
    def _well_formed(block: Block, parent: Block) -> bool:
        return block.height == parent.height + 1 and block.epoch > parent.epoch


def chain_of(block_hash: BlockHash, store: BlockStore) -> List[Block]:
    """返回 genesis..block 的祖先链"""
    chain = []
    current = block_hash
    while True:
        block = store.get(current)
        if block is None:
            raise MissingAncestorError(f"区块 {current[:12]} 的祖先链不完整")
        chain.append(block)
        if current == GENESIS_HASH:
            break
        current = block.parent
    chain.reverse()
    return chain


def ledger_of(chain: Sequence[Block]) -> Tuple[TxId, ...]:
    """按链顺序拼接区块负载，去掉重复交易"""
    seen = set()
    ledger = []
    for block in chain:
        for tx in block.payload:
            if tx not in seen:
                seen.add(tx)
                ledger.append(tx)
    return tuple(ledger)


def is_prefix(a: Sequence[TxId], b: Sequence[TxId]) -> bool:
    return len(a) <= len(b) and tuple(b[: len(a)]) == tuple(a)


def is_ancestor(a: BlockHash, b: BlockHash, store: BlockStore) -> bool:
    """a 是否为 b 的祖先（含 a == b）"""
    target = store[a]
    current = store[b]
    while current.height > target.height:
        current = store[current.parent]
    return current.hash == target.hash


def conflicting(a: BlockHash, b: BlockHash, store: BlockStore) -> bool:
    return not (is_ancestor(a, b, store) or is_ancestor(b, a, store))


# ---------------------------------------------------------------------------
# 消息负载
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    block: Block
    kind = "proposal"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "block": self.block.to_dict()}


@dataclass(frozen=True)
class Vote:
    voter: ReplicaId
    epoch: int
    block: BlockHash
    tag: str
    kind = "vote"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "voter": self.voter,
            "epoch": self.epoch,
            "block": self.block,
            "tag": self.tag,
        }


@dataclass(frozen=True)
class FinalitySignature:
    signer: ReplicaId
    height: int
    block: BlockHash
    tag: str
    kind = "finality"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "signer": self.signer,
            "height": self.height,
            "block": self.block,
            "tag": self.tag,
        }


@dataclass(frozen=True)
class TransactionInput:
    tx: TxId
    input_slot: int
    kind = "tx"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "tx": self.tx, "input_slot": self.input_slot}


@dataclass(frozen=True)
class Sync:
    """区块存储片段；被公证的区块连同其投票集合一起回显"""

    blocks: Tuple[Block, ...]
    votes: Tuple[Vote, ...] = ()
    kind = "sync"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "blocks": [b.to_dict() for b in self.blocks],
            "votes": [v.to_dict() for v in self.votes],
        }


Payload = Union[Proposal, Vote, FinalitySignature, TransactionInput, Sync]


def payload_from_dict(data: Dict[str, Any]) -> Payload:
    try:
        kind = data["kind"]
        if kind == Proposal.kind:
            return Proposal(Block.from_dict(data["block"]))
        if kind == Vote.kind:
            return Vote(int(data["voter"]), int(data["epoch"]), str(data["block"]), str(data["tag"]))
        if kind == FinalitySignature.kind:
            return FinalitySignature(
                int(data["signer"]), int(data["height"]), str(data["block"]), str(data["tag"])
            )
        if kind == TransactionInput.kind:
            return TransactionInput(int(data["tx"]), int(data["input_slot"]))
        if kind == Sync.kind:
            return Sync(
                tuple(Block.from_dict(b) for b in data["blocks"]),
                tuple(payload_from_dict(v) for v in data["votes"]),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise EvidenceParseError(f"无法解析消息负载: {e}") from e
    raise EvidenceParseError(f"未知的负载类型: {data.get('kind')!r}")


def _party_key(party: Party) -> Tuple[int, str]:
    if isinstance(party, int):
        return (0, f"{party:08d}")
    return (1, party)


@dataclass(frozen=True)
class Message:
    sender: Party
    recipient: Party
    payload: Payload
    send_slot: int

    @cached_property
    def payload_canonical(self) -> str:
        return canonical_json(self.payload.to_dict())

    @cached_property
    def order_key(self) -> Tuple[Any, ...]:
        """同一时隙内的确定性投递顺序：发送者编号，然后负载规范序"""
        return (_party_key(self.sender), self.payload_canonical, _party_key(self.recipient))

    def to(self, recipient: Party) -> "Message":
        copy = replace(self, recipient=recipient)
        copy.__dict__["payload_canonical"] = self.payload_canonical
        return copy

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sender": self.sender,
            "recipient": self.recipient,
            "payload": self.payload.to_dict(),
            "send_slot": self.send_slot,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Message":
        try:
            return cls(
                sender=data["sender"],
                recipient=data["recipient"],
                payload=payload_from_dict(data["payload"]),
                send_slot=int(data["send_slot"]),
            )
        except (KeyError, TypeError) as e:
            raise EvidenceParseError(f"无法解析消息: {e}") from e


# ---------------------------------------------------------------------------
# 模拟签名
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyRing:
    """
    模拟 PKI：每个副本的密钥由 (种子, 副本编号) 派生，标签为 HMAC-SHA256。

    restricted() 得到只能以给定身份签名的密钥环，交给各个副本和攻击者使用；
    verify() 对任何持有种子的一方开放。
    """

    seed: int
    allowed: Optional[FrozenSet[ReplicaId]] = field(default=None)

    def restricted(self, allowed: Iterable[ReplicaId]) -> "KeyRing":
        return KeyRing(self.seed, frozenset(allowed))

    def _key(self, replica: ReplicaId) -> bytes:
        return hashlib.sha256(f"keyring|{self.seed}|{replica}".encode("utf-8")).digest()

    def _tag(self, replica: ReplicaId, body: str) -> str:
        return hmac.new(self._key(replica), body.encode("utf-8"), hashlib.sha256).hexdigest()

    def _check(self, replica: ReplicaId) -> None:
        if self.allowed is not None and replica not in self.allowed:
            raise UnauthorizedSenderError(f"无权以副本 {replica} 的身份签名")

    def sign_vote(self, voter: ReplicaId, epoch: int, block: BlockHash) -> Vote:
        self._check(voter)
        return Vote(voter, epoch, block, self._tag(voter, f"vote|{voter}|{epoch}|{block}"))

    def sign_finality(self, signer: ReplicaId, height: int, block: BlockHash) -> FinalitySignature:
        self._check(signer)
        return FinalitySignature(
            signer, height, block, self._tag(signer, f"fin|{signer}|{height}|{block}")
        )

    def verify(self, payload: Payload) -> bool:
        if isinstance(payload, Vote):
            body = f"vote|{payload.voter}|{payload.epoch}|{payload.block}"
            expected = self._tag(payload.voter, body)
        elif isinstance(payload, FinalitySignature):
            body = f"fin|{payload.signer}|{payload.height}|{payload.block}"
            expected = self._tag(payload.signer, body)
        else:
            return False
        return hmac.compare_digest(expected, payload.tag)


@dataclass(frozen=True)
class LogEntry:
    """某一方在某时隙收到（或发出）的一条消息"""

    slot: int
    message: Message

    def observable(self) -> Tuple[Any, ...]:
        """可观察部分：不含发送时隙，发送时隙对接收方不可见"""
        m = self.message
        return (self.slot, m.sender, m.recipient, m.payload_canonical)

    def to_dict(self) -> Dict[str, Any]:
        return {"slot": self.slot, "message": self.message.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LogEntry":
        try:
            return cls(int(data["slot"]), Message.from_dict(data["message"]))
        except (KeyError, TypeError, ValueError) as e:
            raise EvidenceParseError(f"无法解析日志条目: {e}") from e


@dataclass(frozen=True)
class ScheduledTx:
    """交易调度表中的一项：在 slot 时把交易 tx 输入给副本 target"""

    slot: int
    tx: TxId
    target: ReplicaId

    def to_list(self) -> List[int]:
        return [self.slot, self.tx, self.target]
