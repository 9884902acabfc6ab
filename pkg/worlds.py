"""
不可区分世界的重放

世界 0：部分同步网络、f 个腐化副本、客户端账本冲突。
世界 i：无延迟网络，除副本 i 外全部腐化；其余副本作为重放攻击者，
把世界 0 中发给 i 的消息推迟到原投递时隙才发送，并把 i 发出的消息
按世界 0 的投递时隙记账。副本 i 与客户端看到的消息序列与世界 0 完全相同。
"""

import itertools
import logging
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, FrozenSet, List, Optional, Sequence, Tuple

from client import ClientSnapshot, ClientView, safety_check
from constants import ENVIRONMENT
from core_model import ALL_REPLICAS, BROADCAST, KeyRing, LogEntry, Message, ReplicaId
from errors import AttackFailedError, DivergenceError, PreconditionError
from params import ScenarioConfig, StrategyName, config_from_dict
from sim_net import DELAY_FREE, EventQueue, NetworkConfig
from simulator import Simulation, confirm_clients, environment_inputs, make_node
from transcript import Transcript
from underlay import ProtocolKind

logger = logging.getLogger(__name__)


def record_world0(config: ScenarioConfig) -> Transcript:
    """
    运行世界 0 并确认客户端层面出现安全性违规。

    要求非终局协议、带攻击的策略、f ≥ 1，且没有消息在发送时隙内被投递
    （否则无延迟世界无法按原时隙重现）。
    """
    if config.protocol == ProtocolKind.SYNCFIN:
        raise PreconditionError("世界 0 需要非终局的底层协议，SyncFin 下无法构造客户端冲突")
    if config.f < 1:
        raise PreconditionError("f = 0 时没有可以模拟延迟的腐化副本")
    if config.strategy.name in (StrategyName.PASSIVE, StrategyName.CRASH, StrategyName.RANDOM_DELAY):
        raise PreconditionError(f"策略 {config.strategy.name.value} 不会造成客户端冲突，需要分区攻击")
    expected = frozenset(range(config.n - config.f + 1, config.n + 1))
    if config.strategy.corrupted != expected:
        raise PreconditionError(f"世界 0 的腐化集合必须是 {sorted(expected)}，诚实副本为 1..n-f")

    result = Simulation(config).run()
    if result.stats["late_deliveries"]:
        raise PreconditionError(
            f"世界 0 中有 {result.stats['late_deliveries']} 条消息在发送时隙内投递，无法在无延迟世界中重现"
        )
    violation = safety_check(result.snapshots)
    if violation is None:
        raise AttackFailedError(f"{config.slots} 个时隙内没有出现客户端账本冲突")
    logger.info("世界 0：客户端 %s 与 %s 在高度 %d 冲突", violation.first.client, violation.second.client, violation.height)
    return result.transcript


@dataclass(frozen=True)
class WorldSpec:
    base: Transcript
    honest_index: ReplicaId
    replica_seed: Optional[int] = None
    network: NetworkConfig = DELAY_FREE


def _observable(log: Sequence[LogEntry]) -> List[Tuple[Any, ...]]:
    return [entry.observable() for entry in log]


class _Replay:
    """世界 i 的一次执行"""

    def __init__(self, spec: WorldSpec):
        base = spec.base
        self.config = config_from_dict(base.config)
        n = self.config.n
        i = spec.honest_index
        if i not in base.honest(n):
            raise PreconditionError(f"副本 {i} 在世界 0 中不是诚实副本")
        self.base = base
        self.i = i
        self.seed = self.config.seed
        params = self.config.protocol_params
        self.node = make_node(i, params, KeyRing(self.seed if spec.replica_seed is None else spec.replica_seed))
        self.queue = EventQueue(spec.network, n)
        self.schedule = self.config.schedule()
        self.adversaries = frozenset(r for r in range(1, n + 1) if r != i)
        self.clients = {c: ClientView(c, params, KeyRing(self.seed)) for c in self.config.client_ids}
        self.transcript = Transcript(
            config=base.config,
            received={r: [] for r in range(1, n + 1)},
            sent={r: [] for r in range(1, n + 1)},
            clients={c: [] for c in self.config.client_ids},
            corrupted=self.adversaries,
        )
        self.expected_sent = _observable(base.sent[i])

        # 发给 i 的消息按世界 0 的投递时隙发送
        self.inbound: Dict[int, List[Message]] = defaultdict(list)
        for entry in base.received[i]:
            if entry.message.sender != ENVIRONMENT:
                self.inbound[entry.slot].append(entry.message)
        # i 的消息在世界 0 中被各副本收到的时隙
        self.arrivals: Dict[Tuple[ReplicaId, str], Deque[int]] = defaultdict(deque)
        for r in self.adversaries:
            for entry in base.received[r]:
                if entry.message.sender == i:
                    self.arrivals[(r, entry.message.payload_canonical)].append(entry.slot)
        self.client_feed: Dict[int, List[LogEntry]] = defaultdict(list)
        for client, log in base.clients.items():
            for entry in log:
                self.client_feed[entry.slot].append(entry)
        self.published: Dict[str, int] = {}
        self._last: Dict[str, ClientSnapshot] = {}

    def _emit(self, msgs: List[Message], slot: int) -> None:
        sent = self.transcript.sent[self.i]
        for msg in msgs:
            entry = LogEntry(slot, msg)
            k = len(sent)
            if k >= len(self.expected_sent) or entry.observable() != self.expected_sent[k]:
                raise DivergenceError(
                    f"副本 {self.i} 在时隙 {slot} 发出的第 {k + 1} 条消息与世界 0 不一致"
                )
            sent.append(entry)
            if msg.recipient == BROADCAST:
                self.published.setdefault(msg.payload_canonical, slot)
            targets = sorted(self.adversaries) if msg.recipient in (BROADCAST, ALL_REPLICAS) else [msg.recipient]
            for r in targets:
                if isinstance(r, str):
                    continue
                self.queue.submit(msg.to(r), {self.i})

    def _absorb(self, msgs: List[Message]) -> None:
        """重放攻击者收到 i 的消息，按世界 0 的投递时隙记账"""
        for msg in msgs:
            pending = self.arrivals.get((msg.recipient, msg.payload_canonical))
            if pending:
                self.transcript.received[msg.recipient].append(LogEntry(pending.popleft(), msg))

    def _feed_clients(self, slot: int) -> None:
        batches: Dict[str, List[Message]] = defaultdict(list)
        for entry in self.client_feed.get(slot, ()):
            msg = entry.message
            if msg.sender == self.i:
                published = self.published.get(msg.payload_canonical)
                if published is None or published > slot:
                    raise DivergenceError(
                        f"客户端 {msg.recipient} 在时隙 {slot} 需要副本 {self.i} 尚未发布的消息"
                    )
            self.transcript.clients[msg.recipient].append(LogEntry(slot, msg))
            batches[msg.recipient].append(msg)
        for client, msgs in batches.items():
            self.clients[client].observe(msgs, slot)

    def step(self, slot: int) -> None:
        if slot > 0:
            self._absorb(self.queue.advance())
        for msg in self.inbound.get(slot, ()):
            self.queue.submit(Message(msg.sender, self.i, msg.payload, slot), self.adversaries)
            self.transcript.sent[msg.sender].append(LogEntry(slot, msg))
        due = self.queue.take_due() + environment_inputs(
            (s for s in self.schedule if s.target == self.i), slot
        )
        for msg in sorted(due, key=lambda m: m.order_key):
            self.transcript.received[self.i].append(LogEntry(slot, msg))
            self._emit(self.node.on_message(msg, slot), slot)
        self._emit(self.node.on_slot_begin(slot), slot)
        self._absorb(self.queue.take_due())

        self._feed_clients(slot)
        confirm_clients(self.clients, self._last, self.transcript.snapshots)

    def run(self) -> Transcript:
        for slot in range(self.config.slots):
            self.step(slot)
        emitted = len(self.transcript.sent[self.i])
        if emitted != len(self.expected_sent):
            raise DivergenceError(
                f"副本 {self.i} 只发出 {emitted} 条消息，世界 0 中为 {len(self.expected_sent)} 条"
            )
        for r in self.transcript.received:
            self.transcript.received[r].sort(key=lambda e: e.slot)
        return self.transcript


def replay_world(spec: WorldSpec) -> Transcript:
    transcript = _Replay(spec).run()
    logger.info("世界 %d 重放完成", spec.honest_index)
    return transcript


def check_indistinguishable(t0: Transcript, ti: Transcript, i: ReplicaId) -> bool:
    """副本 i 的收发记录与全部客户端的观察记录逐条相同（时隙、负载、顺序）"""
    if _observable(t0.received.get(i, ())) != _observable(ti.received.get(i, ())):
        return False
    if _observable(t0.sent.get(i, ())) != _observable(ti.sent.get(i, ())):
        return False
    if set(t0.clients) != set(ti.clients):
        return False
    if any(_observable(t0.clients[c]) != _observable(ti.clients[c]) for c in t0.clients):
        return False
    return t0.snapshots == ti.snapshots


@dataclass(frozen=True)
class WorldRow:
    world: int
    honest_replica: ReplicaId
    corrupted: FrozenSet[ReplicaId]
    equal: bool
    violation: bool
    accused_honest: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "world": self.world,
            "honest_replica": self.honest_replica,
            "corrupted": sorted(self.corrupted),
            "equal": self.equal,
            "violation": self.violation,
            "accused_honest": self.accused_honest,
        }


@dataclass
class WorldsTable:
    n: int
    f: int
    world0_digest: str
    fixed_verdict: FrozenSet[ReplicaId]
    rows: List[WorldRow] = field(default_factory=list)

    @property
    def all_equal(self) -> bool:
        return all(row.equal for row in self.rows)

    @property
    def every_verdict_accuses_honest(self) -> bool:
        return forced_false_accusation(self.n, self.f)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "f": self.f,
            "world0_digest": self.world0_digest,
            "fixed_verdict": sorted(self.fixed_verdict),
            "all_equal": self.all_equal,
            "every_verdict_accuses_honest": self.every_verdict_accuses_honest,
            "rows": [row.to_dict() for row in self.rows],
        }


def forced_false_accusation(n: int, f: int) -> bool:
    """任意 f+1 人的判定都会在某个世界 i ∈ [n-f] 中指控诚实副本 i"""
    worlds = set(range(1, n - f + 1))
    return all(worlds & set(v) for v in itertools.combinations(range(1, n + 1), f + 1))


def run_worlds(
    config: ScenarioConfig,
    verdict: Optional[FrozenSet[ReplicaId]] = None,
    workers: Optional[int] = None,
    replica_seed: Optional[int] = None,
) -> Tuple[Transcript, WorldsTable]:
    """记录世界 0，并行重放 n-f 个世界，输出不可区分性表格"""
    n, f = config.n, config.f
    t0 = record_world0(config)
    verdict = frozenset(verdict) if verdict is not None else frozenset(range(n - f, n + 1))
    honest = t0.honest(n)

    def one(i: ReplicaId) -> WorldRow:
        ti = replay_world(WorldSpec(t0, i, replica_seed))
        return WorldRow(
            world=i,
            honest_replica=i,
            corrupted=ti.corrupted,
            equal=check_indistinguishable(t0, ti, i),
            violation=safety_check(ti.snapshots) is not None,
            accused_honest=i in verdict,
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, honest))
    table = WorldsTable(n=n, f=f, world0_digest=t0.digest(), fixed_verdict=verdict, rows=rows)
    return t0, table
