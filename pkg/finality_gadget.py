"""
终局签名小工具

每个副本对每个高度上第一个被底层协议确认的区块给出一个终局签名；
与已签名区块冲突的区块及其全部后代永远不签。
"""

import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Set

from core_model import (
    BROADCAST,
    GENESIS_HASH,
    Block,
    BlockHash,
    BlockStore,
    FinalitySignature,
    KeyRing,
    Message,
    ReplicaId,
    chain_of,
)
from errors import DriverOrderError
from underlay import ProtocolParams, UnderlayReplica

logger = logging.getLogger(__name__)


@dataclass
class GadgetState:
    replica: ReplicaId
    signed: Dict[int, BlockHash] = field(default_factory=dict)
    refused: Set[BlockHash] = field(default_factory=set)


class FinalityGadget:
    def __init__(self, replica: ReplicaId, keyring: KeyRing):
        self.state = GadgetState(replica)
        self.keyring = keyring

    def on_underlay_confirmed(self, block: Block, store: BlockStore) -> Optional[FinalitySignature]:
        """
        处理一个新出现在底层确认链上的区块，必须按链顺序（祖先在前）调用。

        签名条件：该高度尚未签名；祖先中已签名的高度都签的是这条链上的区块；
        没有祖先被拒绝。否则拒绝该区块。
        """
        state = self.state
        block_hash = block.hash
        if block.height == 0 or state.signed.get(block.height) == block_hash:
            return None
        if block_hash in state.refused:
            return None

        parent = store[block.parent]
        if (
            parent.hash != GENESIS_HASH
            and state.signed.get(parent.height) != parent.hash
            and parent.hash not in state.refused
        ):
            raise DriverOrderError(
                f"副本 {state.replica} 在处理父区块 {parent.hash[:12]} 之前收到了区块 {block_hash[:12]}"
            )

        if self._may_sign(block, store):
            state.signed[block.height] = block_hash
            return self.keyring.sign_finality(state.replica, block.height, block_hash)

        state.refused.add(block_hash)
        logger.debug("副本 %d 拒绝为高度 %d 的区块 %s 签名", state.replica, block.height, block_hash[:12])
        return None

    def _may_sign(self, block: Block, store: BlockStore) -> bool:
        state = self.state
        if block.height in state.signed:
            return False
        for ancestor in chain_of(block.parent, store):
            if ancestor.hash in state.refused:
                return False
            signed = state.signed.get(ancestor.height)
            if signed is not None and signed != ancestor.hash:
                return False
        return True

    def signed_view(self) -> Mapping[int, BlockHash]:
        return MappingProxyType(dict(self.state.signed))


class SyncFinReplica(UnderlayReplica):
    """底层协议 + 终局签名小工具"""

    def __init__(self, replica: ReplicaId, params: ProtocolParams, keyring: KeyRing):
        super().__init__(replica, params, keyring)
        self.gadget = FinalityGadget(replica, self.keyring)
        self.signing_enabled = True
        self._handed: Set[BlockHash] = {GENESIS_HASH}
        self._last_tip = GENESIS_HASH

    def _on_view_changed(self) -> List[Message]:
        if not self.signing_enabled:
            return []
        tip = self.view.confirmed_tip()
        if tip.hash == self._last_tip:
            return []
        self._last_tip = tip.hash
        out = []
        for block in chain_of(tip.hash, self.store):
            if block.hash in self._handed:
                continue
            self._handed.add(block.hash)
            signature = self.gadget.on_underlay_confirmed(block, self.store)
            if signature is not None:
                out.append(Message(self.replica, BROADCAST, signature, self.slot))
        return out

    def signed_view(self) -> Mapping[int, BlockHash]:
        return self.gadget.signed_view()
