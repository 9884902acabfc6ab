"""
时隙驱动器

每个时隙依次执行：投递到期消息（含环境输入）→ 各副本的时隙开始处理 →
同一时隙内到期消息的不动点循环 → 攻击者检查 → 客户端确认并记录快照。
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import numpy as np

from adversary import AdversaryContext, Strategy, make_strategy
from client import ClientSnapshot, ClientView
from constants import ENVIRONMENT
from core_model import (
    ALL_REPLICAS,
    BROADCAST,
    KeyRing,
    LogEntry,
    Message,
    Party,
    ReplicaId,
    ScheduledTx,
    TransactionInput,
)
from finality_gadget import SyncFinReplica
from params import ScenarioConfig, config_to_dict
from sim_net import EventQueue
from transcript import Transcript
from underlay import ProtocolKind, ProtocolParams, UnderlayReplica

logger = logging.getLogger(__name__)


def make_node(replica: ReplicaId, params: ProtocolParams, keyring: KeyRing) -> UnderlayReplica:
    if params.protocol == ProtocolKind.SYNCFIN:
        return SyncFinReplica(replica, params, keyring)
    return UnderlayReplica(replica, params, keyring)


def environment_inputs(schedule: Iterable[ScheduledTx], slot: int) -> List[Message]:
    return [
        Message(ENVIRONMENT, item.target, TransactionInput(item.tx, item.slot), slot)
        for item in schedule
        if item.slot == slot
    ]


def confirm_clients(
    clients: Dict[str, ClientView],
    last: Dict[str, ClientSnapshot],
    out: List[ClientSnapshot],
) -> None:
    """时隙末尾：全部客户端确认一次，账本或状态变化时追加快照"""
    for client_id, view in clients.items():
        view.confirm()
        snap = view.snapshot()
        previous = last.get(client_id)
        if previous is None or (previous.ledger, previous.tip, previous.inconsistent) != (
            snap.ledger,
            snap.tip,
            snap.inconsistent,
        ):
            out.append(snap)
            last[client_id] = snap


@dataclass
class SimulationResult:
    config: ScenarioConfig
    transcript: Transcript
    clients: Dict[str, ClientView]
    nodes: Dict[ReplicaId, UnderlayReplica]
    strategy: Strategy
    gst: Optional[int]
    end_slot: int
    stats: Dict[str, int]

    @property
    def snapshots(self) -> List[ClientSnapshot]:
        return self.transcript.snapshots


class Simulation:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.params = config.protocol_params
        self.keyring = KeyRing(config.seed)
        self.schedule = config.schedule()
        self.corrupted = frozenset(config.strategy.corrupted)
        replicas = range(1, config.n + 1)

        self.queue = EventQueue(config.network_config, config.n)
        self.nodes: Dict[ReplicaId, UnderlayReplica] = {
            r: make_node(r, self.params, self.keyring) for r in replicas if r not in self.corrupted
        }
        ctx = AdversaryContext(
            config=config,
            params=self.params,
            keyring=self.keyring.restricted(self.corrupted),
            make_node=lambda r: make_node(r, self.params, self.keyring),
            inspect=lambda r: self.nodes[r],
            gst=lambda: self.queue.gst,
            declare_gst=self.queue.declare_gst,
            rng=np.random.default_rng([config.seed, 1]),
        )
        self.strategy = make_strategy(ctx)
        self.queue.hook = self.strategy
        self.clients = {c: ClientView(c, self.params, self.keyring) for c in config.client_ids}
        self.transcript = Transcript(
            config=config_to_dict(config),
            received={r: [] for r in replicas},
            sent={r: [] for r in replicas},
            clients={c: [] for c in config.client_ids},
            corrupted=self.corrupted,
        )
        self.late_deliveries = 0
        self.slot = 0
        self._last_snapshot: Dict[str, ClientSnapshot] = {}

    def _recipients(self, msg: Message) -> List[Party]:
        if msg.recipient in (BROADCAST, ALL_REPLICAS):
            targets: List[Party] = [r for r in range(1, self.config.n + 1) if r != msg.sender]
            if msg.recipient == BROADCAST:
                targets.extend(self.config.client_ids)
            return targets
        return [msg.recipient]

    def _dispatch(self, msgs: List[Message], authorized: Iterable[Party]) -> None:
        authorized = frozenset(authorized)
        for msg in msgs:
            self.transcript.sent[msg.sender].append(LogEntry(self.slot, msg))
            for recipient in self._recipients(msg):
                self.queue.submit(msg.to(recipient), authorized)

    def _deliver(self, msgs: List[Message]) -> None:
        slot = self.slot
        for msg in msgs:
            recipient = msg.recipient
            if isinstance(recipient, str):
                self.transcript.clients[recipient].append(LogEntry(slot, msg))
                self.clients[recipient].observe([msg], slot)
                continue
            self.transcript.received[recipient].append(LogEntry(slot, msg))
            if recipient in self.corrupted:
                self._dispatch(self.strategy.deliver(recipient, msg, slot), self.corrupted)
            else:
                self._dispatch(self.nodes[recipient].on_message(msg, slot), {recipient})

    def _drain(self) -> None:
        while True:
            due = self.queue.take_due()
            if not due:
                return
            self.late_deliveries += sum(1 for m in due if not isinstance(m.recipient, str))
            self._deliver(due)

    def step(self, slot: int) -> None:
        self.slot = slot
        self.strategy.on_slot_start(slot)
        due = self.queue.take_due() if slot == self.queue.slot else self.queue.advance()
        batch = sorted(due + environment_inputs(self.schedule, slot), key=lambda m: m.order_key)
        self._deliver(batch)

        for replica in sorted(self.nodes):
            self._dispatch(self.nodes[replica].on_slot_begin(slot), {replica})
        self._dispatch(self.strategy.on_slot(slot), self.corrupted)
        self._drain()

        self.strategy.after_slot(slot)
        self._drain()

        confirm_clients(self.clients, self._last_snapshot, self.transcript.snapshots)

    def run(self) -> SimulationResult:
        for slot in range(self.config.slots):
            self.step(slot)
        logger.info(
            "运行结束：%d 时隙，投递 %d 条消息，待投递 %d 条",
            self.config.slots,
            self.queue.stats.delivered,
            self.queue.pending_count,
        )
        stats = self.queue.stats.to_dict()
        stats["pending"] = self.queue.pending_count
        stats["late_deliveries"] = self.late_deliveries
        stats["dropped"] = sum(node.dropped for node in self.nodes.values())
        return SimulationResult(
            config=self.config,
            transcript=self.transcript,
            clients=self.clients,
            nodes=self.nodes,
            strategy=self.strategy,
            gst=self.queue.gst,
            end_slot=self.config.slots - 1,
            stats=stats,
        )


def simulate(config: ScenarioConfig) -> SimulationResult:
    return Simulation(config).run()
