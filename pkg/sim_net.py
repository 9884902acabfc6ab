"""
离散事件网络模拟

实现三种延迟模型（部分同步 / 同步 / 无延迟），由攻击者在
max(send_slot, GST) + Δ 的上界内决定每条消息的投递时隙。
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Collection, Dict, List, Optional, Protocol, Union

from constants import SAME_SLOT_FACTOR
from core_model import Message, Party
from errors import (
    ConfigError,
    DeliveryBoundError,
    SimulationError,
    SlotOverflowError,
    UnauthorizedSenderError,
)

logger = logging.getLogger(__name__)


class NetworkMode(str, Enum):
    PARTIAL_SYNCHRONY = "partial_synchrony"
    SYNCHRONY = "synchrony"
    DELAY_FREE = "delay_free"


class _Hold:
    """攻击者的特殊选择：扣留到 GST 之后"""

    def __repr__(self) -> str:
        return "HOLD"


HOLD = _Hold()

DeliveryChoice = Union[int, None, _Hold]


class SendHook(Protocol):
    def on_send(self, msg: Message) -> DeliveryChoice: ...


@dataclass(frozen=True)
class NetworkConfig:
    """
    网络参数

    gst 为 None 表示 GST 尚未确定（无穷，或等待攻击者在运行中宣布）。
    """

    delta: int
    gst: Optional[int] = 0
    mode: NetworkMode = NetworkMode.PARTIAL_SYNCHRONY

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigError("delta", "Δ 不能为负数")
        if self.gst is not None and self.gst < 0:
            raise ConfigError("gst", "GST 不能为负数")
        if self.mode == NetworkMode.SYNCHRONY and self.gst != 0:
            raise ConfigError("gst", "同步网络要求 GST = 0")
        if self.mode == NetworkMode.DELAY_FREE and (self.gst != 0 or self.delta != 0):
            raise ConfigError("mode", "无延迟网络要求 GST = 0 且 Δ = 0")


DELAY_FREE = NetworkConfig(delta=0, gst=0, mode=NetworkMode.DELAY_FREE)


@dataclass
class QueueStats:
    submitted: int = 0
    delivered: int = 0
    held: int = 0
    max_delay: int = 0
    rejected_delays: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            "submitted": self.submitted,
            "delivered": self.delivered,
            "held": self.held,
            "max_delay": self.max_delay,
            "rejected_delays": self.rejected_delays,
        }


class EventQueue:
    """
    待投递消息队列

    每条消息在提交时由攻击者钩子给出投递时隙；advance() 推进时隙并按确定性顺序
    （发送者编号，然后负载规范序）返回到期消息。每次投递都会重新检查上界。
    """

    def __init__(self, config: NetworkConfig, n: int, hook: Optional[SendHook] = None):
        self.config = config
        self.gst: Optional[int] = config.gst
        self.slot = 0
        self.hook = hook
        self.cap = SAME_SLOT_FACTOR * n * n
        self.stats = QueueStats()
        self._pending: Dict[int, List[Message]] = {}
        self._held: List[Message] = []
        self._same_slot = 0

    @property
    def delay_free(self) -> bool:
        return self.config.mode == NetworkMode.DELAY_FREE

    def bound(self, send_slot: int) -> Optional[int]:
        """最晚投递时隙；GST 未确定时返回 None（无上界）"""
        if self.delay_free:
            return send_slot
        if self.gst is None:
            return None
        return max(send_slot, self.gst) + self.config.delta

    def default_slot(self, send_slot: int) -> int:
        return send_slot if self.delay_free else send_slot + self.config.delta

    def submit(self, msg: Message, authorized: Collection[Party]) -> None:
        if msg.sender not in authorized:
            raise UnauthorizedSenderError(f"不允许以 {msg.sender!r} 的身份发送消息")
        if msg.send_slot != self.slot:
            raise SimulationError(
                f"消息发送时隙 {msg.send_slot} 与当前时隙 {self.slot} 不一致"
            )
        self.stats.submitted += 1
        choice = self.hook.on_send(msg) if self.hook is not None else None
        if choice is None:
            self._schedule(msg, self.default_slot(msg.send_slot))
        elif choice is HOLD:
            bound = self.bound(msg.send_slot)
            if bound is None:
                self._held.append(msg)
                self.stats.held += 1
            else:
                self._schedule(msg, bound)
        elif not self.adversary_delay(msg, choice):
            raise DeliveryBoundError(
                f"攻击者请求的投递时隙 {choice} 超出上界 (发送于 {msg.send_slot}, "
                f"GST={self.gst}, Δ={self.config.delta})"
            )

    def adversary_delay(self, msg: Message, delivery_slot: int) -> bool:
        """在上界内（重新）安排消息的投递时隙，越界时拒绝"""
        bound = self.bound(msg.send_slot)
        if delivery_slot < max(msg.send_slot, self.slot) or (
            bound is not None and delivery_slot > bound
        ):
            self.stats.rejected_delays += 1
            return False
        for slot, queued in self._pending.items():
            for k, existing in enumerate(queued):
                if existing is msg:
                    del queued[k]
                    break
            else:
                continue
            break
        self._held = [m for m in self._held if m is not msg]
        self._schedule(msg, delivery_slot)
        return True

    def _schedule(self, msg: Message, delivery_slot: int) -> None:
        self._pending.setdefault(delivery_slot, []).append(msg)

    def declare_gst(self, slot: int) -> None:
        """宣布 GST，被扣留的消息在 GST + Δ 投递"""
        if self.gst is not None:
            return
        self.gst = slot
        held, self._held = self._held, []
        for msg in held:
            self._schedule(msg, max(msg.send_slot, slot) + self.config.delta)
        logger.info("GST 宣布于时隙 %d，释放 %d 条被扣留消息", slot, len(held))

    def advance(self) -> List[Message]:
        self.slot += 1
        self._same_slot = 0
        return self.take_due()

    def take_due(self) -> List[Message]:
        """取出当前时隙到期的消息（同一时隙内可多次调用，用于无延迟不动点）"""
        due = self._pending.pop(self.slot, [])
        if not due:
            return []
        due.sort(key=lambda m: m.order_key)
        for msg in due:
            bound = self.bound(msg.send_slot)
            if bound is not None and self.slot > bound:
                raise DeliveryBoundError(
                    f"消息投递于 {self.slot}，超出上界 {bound} (发送于 {msg.send_slot})"
                )
            self.stats.max_delay = max(self.stats.max_delay, self.slot - msg.send_slot)
        self.stats.delivered += len(due)
        if self.delay_free:
            self._same_slot += len(due)
            if self._same_slot > self.cap:
                raise SlotOverflowError(
                    f"时隙 {self.slot} 内投递了 {self._same_slot} 条消息，超过上限 {self.cap}"
                )
        return due

    @property
    def pending_count(self) -> int:
        return sum(len(v) for v in self._pending.values()) + len(self._held)

    def next_due_slot(self) -> Optional[int]:
        slots = [s for s, v in self._pending.items() if v]
        return min(slots) if slots else None
