"""
攻击者策略

攻击者控制腐化副本的全部行为，并在部分同步上界内决定每条消息的投递时隙。

  passive         腐化副本照常运行协议
  crash           腐化副本全程沉默
  random_delay    每条消息随机延迟；腐化副本对收到的每个提议都给出终局签名
  split_brain     主动副本在两个分区各跑一份协议副本，跨分区消息扣留到 GST，
                  直到两侧诚实副本在同一高度确认冲突区块
  liveness_kill   同 split_brain，目标达成后腐化副本不再发送任何终局签名
  forensic_trigger f+1 个主动副本在两侧同时签名，使冲突区块都拿到 2f+1 个签名
"""

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

import numpy as np

from core_model import (
    ALL_REPLICAS,
    BROADCAST,
    BlockHash,
    KeyRing,
    Message,
    Party,
    Proposal,
    ReplicaId,
)
from errors import AttackFailedError
from finality_gadget import SyncFinReplica
from params import GST_ON_ATTACK_SUCCESS, ScenarioConfig, StrategyConfig, StrategyName
from sim_net import HOLD, DeliveryChoice
from underlay import ProtocolParams, UnderlayReplica

logger = logging.getLogger(__name__)


@dataclass
class AdversaryContext:
    """攻击者能看到和调用的模拟器接口"""

    config: ScenarioConfig
    params: ProtocolParams
    keyring: KeyRing
    make_node: Callable[[ReplicaId], UnderlayReplica]
    inspect: Callable[[ReplicaId], UnderlayReplica]
    gst: Callable[[], Optional[int]]
    declare_gst: Callable[[int], None]
    rng: np.random.Generator

    @property
    def strategy(self) -> StrategyConfig:
        return self.config.strategy

    def client_side(self, client: str) -> int:
        """奇数编号的客户端在 A 侧，偶数在 B 侧"""
        return 0 if int(client[1:]) % 2 == 1 else 1


class Strategy:
    """被动攻击者：腐化副本照常运行，消息按默认 +Δ 投递"""

    def __init__(self, ctx: AdversaryContext):
        self.ctx = ctx
        self.config = ctx.strategy
        self.corrupted = self.config.corrupted
        self.nodes: Dict[ReplicaId, UnderlayReplica] = {r: ctx.make_node(r) for r in sorted(self.corrupted)}
        self.silent: Set[ReplicaId] = set()
        self.timeline: List[Dict[str, object]] = []
        self.objective_met_at: Optional[int] = None
        self.fork_height: Optional[int] = None

    def note(self, slot: int, event: str, **detail: object) -> None:
        self.timeline.append({"slot": slot, "event": event, **detail})
        logger.info("时隙 %d：%s %s", slot, event, detail or "")

    def on_slot_start(self, slot: int) -> None:
        pass

    def on_send(self, msg: Message) -> DeliveryChoice:
        return None

    def deliver(self, recipient: ReplicaId, msg: Message, slot: int) -> List[Message]:
        if recipient in self.silent:
            return []
        return self.nodes[recipient].on_message(msg, slot)

    def on_slot(self, slot: int) -> List[Message]:
        out: List[Message] = []
        for replica, node in self.nodes.items():
            if replica not in self.silent:
                out.extend(node.on_slot_begin(slot))
        return out

    def after_slot(self, slot: int) -> None:
        pass


class CrashStrategy(Strategy):
    def __init__(self, ctx: AdversaryContext):
        super().__init__(ctx)
        self.silent = set(self.corrupted)


class RandomDelayStrategy(Strategy):
    """每条消息的投递时隙在 [发送时隙, 上界] 内均匀随机；GST 未知时最多延迟 4Δ"""

    def __init__(self, ctx: AdversaryContext):
        super().__init__(ctx)
        self._signed: Set[Tuple[ReplicaId, BlockHash]] = set()

    def on_send(self, msg: Message) -> DeliveryChoice:
        gst = self.ctx.gst()
        delta = self.ctx.config.delta
        if gst is None:
            latest = msg.send_slot + 4 * max(delta, 1)
        else:
            latest = max(msg.send_slot, gst) + delta
        return int(self.ctx.rng.integers(msg.send_slot, latest + 1))

    def deliver(self, recipient: ReplicaId, msg: Message, slot: int) -> List[Message]:
        out = super().deliver(recipient, msg, slot)
        node = self.nodes[recipient]
        if isinstance(msg.payload, Proposal) and isinstance(node, SyncFinReplica):
            block = msg.payload.block
            if (recipient, block.hash) not in self._signed:
                self._signed.add((recipient, block.hash))
                signature = self.ctx.keyring.sign_finality(recipient, block.height, block.hash)
                out.append(Message(recipient, BROADCAST, signature, slot))
        return out


class PartitionStrategy(Strategy):
    """
    分区攻击（split_brain / liveness_kill / forensic_trigger）

    attack_start 之前所有腐化副本照常运行。攻击开始时每个主动副本复制出两个影子，
    分别只与 A、B 一侧通信；跨分区的诚实消息一律扣留到 GST。目标达成（两侧全体成员
    在同一高度签名/确认了互不相同的区块）后主动副本沉默。
    """

    WARMUP, ATTACK, DONE, ABANDONED = "warmup", "attack", "done", "abandoned"

    def __init__(self, ctx: AdversaryContext):
        super().__init__(ctx)
        self.active = self.config.active
        self.sides = self.config.partition
        self.double_sign = self.config.name == StrategyName.FORENSIC_TRIGGER
        self.mute_idle = self.config.name == StrategyName.LIVENESS_KILL
        self.phase = self.WARMUP
        self.shadows: Dict[Tuple[ReplicaId, int], UnderlayReplica] = {}
        self._internal: Dict[int, List[Tuple[ReplicaId, int, Message]]] = {}
        self._deadline = self.config.attack_start + self.config.attack_budget

    def _side_of(self, party: Party) -> Optional[int]:
        if isinstance(party, str):
            return self.ctx.client_side(party)
        return self.config.side_of(party)

    def on_slot_start(self, slot: int) -> None:
        if self.phase == self.WARMUP and slot >= self.config.attack_start:
            self._start(slot)

    def _start(self, slot: int) -> None:
        self.phase = self.ATTACK
        for replica in sorted(self.active):
            for side in (0, 1):
                shadow = copy.deepcopy(self.nodes[replica])
                if isinstance(shadow, SyncFinReplica):
                    shadow.signing_enabled = self.double_sign
                self.shadows[(replica, side)] = shadow
        self.note(slot, "attack_start", active=sorted(self.active))

    def on_send(self, msg: Message) -> DeliveryChoice:
        if self.phase in (self.WARMUP, self.ABANDONED) or msg.sender in self.active:
            return None
        gst = self.ctx.gst()
        if gst is not None and msg.send_slot >= gst:
            return None
        src, dst = self._side_of(msg.sender), self._side_of(msg.recipient)
        if src is None or dst is None or src == dst:
            return None
        return HOLD

    def deliver(self, recipient: ReplicaId, msg: Message, slot: int) -> List[Message]:
        if recipient not in self.active or self.phase == self.WARMUP:
            return super().deliver(recipient, msg, slot)
        if self.phase != self.ATTACK:
            return []
        side = self._side_of(msg.sender)
        out: List[Message] = []
        for s in (0, 1) if side is None else (side,):
            out.extend(self._route(recipient, s, self.shadows[(recipient, s)].on_message(msg, slot), slot))
        return out

    def on_slot(self, slot: int) -> List[Message]:
        if self.phase == self.WARMUP:
            return super().on_slot(slot)
        out: List[Message] = []
        for replica in sorted(self.idle_nodes()):
            out.extend(self.nodes[replica].on_slot_begin(slot))
        if self.phase != self.ATTACK:
            return out
        for replica, side, msg in self._internal.pop(slot, []):
            shadow = self.shadows[(replica, side)]
            out.extend(self._route(replica, side, shadow.on_message(msg, slot), slot))
        for (replica, side), shadow in sorted(self.shadows.items()):
            out.extend(self._route(replica, side, shadow.on_slot_begin(slot), slot))
        return out

    def idle_nodes(self) -> List[ReplicaId]:
        return [r for r in self.nodes if r not in self.active and r not in self.silent]

    def _route(self, replica: ReplicaId, side: int, msgs: List[Message], slot: int) -> List[Message]:
        """影子的输出只发给同侧的副本与客户端，以及其他主动副本的同侧影子"""
        out = []
        members = sorted(self.sides[side])
        clients = [c for c in self.ctx.config.client_ids if self.ctx.client_side(c) == side]
        for msg in msgs:
            recipients: List[Party] = []
            if msg.recipient in (BROADCAST, ALL_REPLICAS):
                recipients.extend(members)
                if msg.recipient == BROADCAST:
                    recipients.extend(clients)
                for other in sorted(self.active - {replica}):
                    due = slot + max(self.ctx.config.delta, 1)
                    self._internal.setdefault(due, []).append((other, side, msg.to(other)))
            elif self._side_of(msg.recipient) == side:
                recipients.append(msg.recipient)
            out.extend(msg.to(r) for r in recipients)
        return out

    def after_slot(self, slot: int) -> None:
        if self.phase != self.ATTACK:
            return
        height = self._objective_height()
        if height is not None:
            self._succeed(slot, height)
            return
        gst = self.ctx.gst()
        if slot + 1 >= self._deadline or (gst is not None and slot >= gst):
            if self.config.strict:
                raise AttackFailedError(
                    f"{self.config.name.value} 攻击在时隙 {slot} 前未达成目标"
                    f"（预算 {self.config.attack_budget} 时隙）"
                )
            self.phase = self.ABANDONED
            self.silent |= set(self.active)
            self.note(slot, "attack_abandoned")
            self._maybe_declare_gst(slot)

    def _succeed(self, slot: int, height: int) -> None:
        self.phase = self.DONE
        self.objective_met_at = slot
        self.fork_height = height
        self.silent |= set(self.active)
        if self.mute_idle:
            for replica in self.idle_nodes():
                node = self.nodes[replica]
                if isinstance(node, SyncFinReplica):
                    node.signing_enabled = False
        self.note(slot, "objective_met", fork_height=height)
        self._maybe_declare_gst(slot)

    def _maybe_declare_gst(self, slot: int) -> None:
        if self.ctx.config.gst == GST_ON_ATTACK_SUCCESS and self.ctx.gst() is None:
            self.ctx.declare_gst(slot)
            self.note(slot, "gst_declared")

    def _view(self, replica: ReplicaId) -> UnderlayReplica:
        return self.nodes[replica] if replica in self.corrupted else self.ctx.inspect(replica)

    @staticmethod
    def _committed(node: UnderlayReplica) -> Dict[int, BlockHash]:
        """SyncFin 看终局签名，其他协议看底层确认链"""
        if isinstance(node, SyncFinReplica):
            return dict(node.signed_view())
        return {b.height: b.hash for b in node.confirmed_chain()[1:]}

    def _objective_height(self) -> Optional[int]:
        views: List[List[Dict[int, BlockHash]]] = [
            [self._committed(self._view(r)) for r in sorted(side)] for side in self.sides
        ]
        shadow_views = {
            key: self._committed(shadow) for key, shadow in self.shadows.items()
        } if self.double_sign else {}
        top = min((max(v, default=0) for side in views for v in side), default=0)
        for height in range(1, top + 1):
            blocks = []
            for side in views:
                chosen = {v.get(height) for v in side}
                if None in chosen:
                    break
                blocks.append(chosen)
            else:
                if blocks[0] & blocks[1]:
                    continue
                if self.double_sign and not all(
                    shadow_views[(r, s)].get(height) in blocks[s] for (r, s) in shadow_views
                ):
                    continue
                return height
        return None


STRATEGIES = {
    StrategyName.PASSIVE: Strategy,
    StrategyName.CRASH: CrashStrategy,
    StrategyName.RANDOM_DELAY: RandomDelayStrategy,
    StrategyName.SPLIT_BRAIN: PartitionStrategy,
    StrategyName.LIVENESS_KILL: PartitionStrategy,
    StrategyName.FORENSIC_TRIGGER: PartitionStrategy,
}


def make_strategy(ctx: AdversaryContext) -> Strategy:
    return STRATEGIES[ctx.strategy.name](ctx)
