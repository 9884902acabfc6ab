"""
底层共识协议

Streamlet 风格的纪元协议：轮换领导者提议、多数（或 2f+1）投票公证、
公证后回显投票集合、三个连续纪元确认。MajoritySync 依赖同步网络，
PSyncQuorum 用 2f+1 门限作为部分同步下的对照协议。
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Set, Tuple

from core_model import (
    ALL_REPLICAS,
    BROADCAST,
    GENESIS,
    GENESIS_HASH,
    Block,
    BlockHash,
    BlockStore,
    KeyRing,
    Message,
    Party,
    Payload,
    Proposal,
    ReplicaId,
    Sync,
    TransactionInput,
    TxId,
    Vote,
    chain_of,
    ledger_of,
)
from constants import ENVIRONMENT

logger = logging.getLogger(__name__)


class ProtocolKind(str, Enum):
    MAJORITY_SYNC = "majority_sync"
    PSYNC_QUORUM = "psync_quorum"
    SYNCFIN = "syncfin"


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    f: int
    epoch_len: int
    notarize_threshold: int
    protocol: ProtocolKind = ProtocolKind.SYNCFIN

    @classmethod
    def for_protocol(cls, protocol: ProtocolKind, n: int, f: int, delta: int) -> "ProtocolParams":
        protocol = ProtocolKind(protocol)
        if protocol == ProtocolKind.PSYNC_QUORUM:
            threshold = 2 * f + 1
        else:
            threshold = n // 2 + 1
        return cls(n=n, f=f, epoch_len=max(2 * delta, 1), notarize_threshold=threshold, protocol=protocol)

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def leader(self, epoch: int) -> ReplicaId:
        return epoch % self.n + 1

    def epoch_of(self, slot: int) -> int:
        return slot // self.epoch_len

    def starts_epoch(self, slot: int) -> bool:
        return slot % self.epoch_len == 0


class NotarizationView:
    """
    一方（副本或客户端）看到的公证状态

    区块收到门限数量的同纪元投票即被公证；自身及全部祖先都被公证的区块构成
    “完全公证链”。最长完全公证链的链尖与三连续纪元确认规则都在这里增量维护。
    """

    def __init__(self, threshold: int):
        self.threshold = threshold
        self.store = BlockStore()
        self.votes_seen: Dict[int, Dict[BlockHash, Dict[ReplicaId, Vote]]] = {}
        self.notarized: Set[BlockHash] = {GENESIS_HASH}
        self.full: Set[BlockHash] = {GENESIS_HASH}
        self.newly_notarized: List[BlockHash] = []
        self._children: Dict[BlockHash, List[BlockHash]] = {}
        self._tip: Block = GENESIS
        self._confirmed: Block = GENESIS

    def add_block(self, block: Block) -> List[Block]:
        added = self.store.add(block)
        for b in added:
            self._children.setdefault(b.parent, []).append(b.hash)
            self._check(b)
        return added

    def has_vote(self, vote: Vote) -> bool:
        return vote.voter in self.votes_seen.get(vote.epoch, {}).get(vote.block, {})

    def add_vote(self, vote: Vote) -> bool:
        bucket = self.votes_seen.setdefault(vote.epoch, {}).setdefault(vote.block, {})
        if vote.voter in bucket:
            return False
        bucket[vote.voter] = vote
        block = self.store.get(vote.block)
        if block is not None:
            self._check(block)
        return True

    def votes_for(self, block: Block) -> Dict[ReplicaId, Vote]:
        return self.votes_seen.get(block.epoch, {}).get(block.hash, {})

    def notarizing_votes(self, block_hash: BlockHash) -> Tuple[Vote, ...]:
        block = self.store[block_hash]
        votes = self.votes_for(block)
        return tuple(votes[v] for v in sorted(votes))

    def _check(self, block: Block) -> None:
        if block.hash in self.notarized or len(self.votes_for(block)) < self.threshold:
            return
        self.notarized.add(block.hash)
        self.newly_notarized.append(block.hash)
        if block.parent in self.full:
            self._mark_full(block)

    def _mark_full(self, block: Block) -> None:
        stack = [block]
        while stack:
            current = stack.pop()
            self.full.add(current.hash)
            self._update(current)
            for child in self._children.get(current.hash, ()):
                if child in self.notarized and child not in self.full:
                    stack.append(self.store[child])

    def _update(self, block: Block) -> None:
        if _better(block, self._tip):
            self._tip = block
        if block.parent == GENESIS_HASH:
            return
        middle = self.store[block.parent]
        first = self.store[middle.parent]
        if first.epoch + 1 == middle.epoch and middle.epoch + 1 == block.epoch:
            if _better(middle, self._confirmed):
                self._confirmed = middle

    def longest_notarized_tip(self) -> Block:
        return self._tip

    def confirmed_tip(self) -> Block:
        return self._confirmed

    def pop_newly_notarized(self) -> List[BlockHash]:
        fresh, self.newly_notarized = self.newly_notarized, []
        return fresh


def _better(candidate: Block, current: Block) -> bool:
    """更高者优先，同高度取较小哈希"""
    if candidate.height != current.height:
        return candidate.height > current.height
    return candidate.hash < current.hash


class UnderlayReplica:
    """
    运行底层协议的单个副本

    on_slot_begin / on_message 返回本副本发出的消息；自己发出的消息已在本地生效，
    网络不会回送给发送者。
    """

    def __init__(self, replica: ReplicaId, params: ProtocolParams, keyring: KeyRing):
        self.replica = replica
        self.params = params
        self.keyring = keyring.restricted({replica})
        self.view = NotarizationView(params.notarize_threshold)
        self.voted_epochs: Set[int] = set()
        self.first_proposal: Dict[int, BlockHash] = {}
        self.mempool: Dict[TxId, int] = {}
        self.slot = 0
        self.dropped = 0

    @property
    def store(self) -> BlockStore:
        return self.view.store

    def _msg(self, payload: Payload, recipient: Party = BROADCAST) -> Message:
        return Message(self.replica, recipient, payload, self.slot)

    def on_slot_begin(self, slot: int) -> List[Message]:
        self.slot = slot
        out: List[Message] = []
        if self.params.starts_epoch(slot):
            epoch = self.params.epoch_of(slot)
            if epoch >= 1 and self.params.leader(epoch) == self.replica:
                out.extend(self._propose(epoch))
        out.extend(self._after_update())
        return out

    def on_message(self, msg: Message, slot: int) -> List[Message]:
        self.slot = slot
        out = self._handle(msg)
        out.extend(self._after_update())
        return out

    def _propose(self, epoch: int) -> List[Message]:
        tip = self.view.longest_notarized_tip()
        included = set(ledger_of(chain_of(tip.hash, self.store)))
        payload = tuple(
            tx for tx, _ in sorted(self.mempool.items(), key=lambda kv: (kv[1], kv[0]))
            if tx not in included
        )
        block = Block(parent=tip.hash, height=tip.height + 1, epoch=epoch, proposer=self.replica, payload=payload)
        self.view.add_block(block)
        self.first_proposal.setdefault(epoch, block.hash)
        logger.debug("副本 %d 在纪元 %d 提议区块 %s", self.replica, epoch, block.hash[:12])
        return [self._msg(Proposal(block))]

    def _handle(self, msg: Message) -> List[Message]:
        payload = msg.payload
        if isinstance(payload, TransactionInput):
            return self._on_tx(msg, payload)
        if isinstance(payload, Proposal):
            return self._on_proposal(msg, payload.block)
        if isinstance(payload, Vote):
            if payload.voter != msg.sender:
                return self._drop("投票者与发送者不一致", msg)
            self._accept_vote(payload)
            return []
        if isinstance(payload, Sync):
            for block in payload.blocks:
                self.view.add_block(block)
            for vote in payload.votes:
                self._accept_vote(vote)
            return []
        return self._on_other(msg)

    def _on_other(self, msg: Message) -> List[Message]:
        return []

    def _drop(self, reason: str, msg: Message) -> List[Message]:
        self.dropped += 1
        logger.debug("副本 %d 丢弃来自 %r 的消息：%s", self.replica, msg.sender, reason)
        return []

    def _accept_vote(self, vote: Vote) -> None:
        if self.view.has_vote(vote):
            return
        if not self.keyring.verify(vote):
            self.dropped += 1
            logger.warning("副本 %d 收到未通过认证的投票（投票者 %d）", self.replica, vote.voter)
            return
        self.view.add_vote(vote)

    def _on_tx(self, msg: Message, tx: TransactionInput) -> List[Message]:
        if tx.tx in self.mempool:
            return []
        self.mempool[tx.tx] = tx.input_slot
        if msg.sender == ENVIRONMENT:
            return [self._msg(tx, ALL_REPLICAS)]
        return []

    def _on_proposal(self, msg: Message, block: Block) -> List[Message]:
        if block.epoch < 1 or block.proposer != msg.sender or block.proposer != self.params.leader(block.epoch):
            return self._drop("提议者不是该纪元的领导者", msg)
        self.view.add_block(block)
        self.first_proposal.setdefault(block.epoch, block.hash)
        return []

    def _try_vote(self) -> List[Message]:
        epoch = self.params.epoch_of(self.slot)
        if epoch in self.voted_epochs:
            return []
        candidate = self.first_proposal.get(epoch)
        if candidate is None:
            return []
        block = self.store.get(candidate)
        if block is None:
            return []
        tip = self.view.longest_notarized_tip()
        if block.parent not in self.view.full or self.store[block.parent].height < tip.height:
            return []
        self.voted_epochs.add(epoch)
        vote = self.keyring.sign_vote(self.replica, epoch, block.hash)
        self.view.add_vote(vote)
        return [self._msg(vote)]

    def _echo(self) -> List[Message]:
        out = []
        for block_hash in self.view.pop_newly_notarized():
            block = self.store[block_hash]
            out.append(self._msg(Sync((block,), self.view.notarizing_votes(block_hash))))
        return out

    def _after_update(self) -> List[Message]:
        out = self._try_vote()
        out.extend(self._echo())
        out.extend(self._on_view_changed())
        return out

    def _on_view_changed(self) -> List[Message]:
        return []

    def confirmed_chain(self) -> List[Block]:
        return chain_of(self.view.confirmed_tip().hash, self.store)

    def confirmed_ledger(self) -> Tuple[TxId, ...]:
        return ledger_of(self.confirmed_chain())
