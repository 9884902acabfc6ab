"""
场景参数

ScenarioConfig / StrategyConfig 数据类封装一次实验的全部参数，
并负责 JSON 配置的读取、校验与默认值补全。
"""

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np

from constants import (
    DEFAULT_ATTACK_BUDGET,
    DEFAULT_CLIENTS,
    DEFAULT_DELTA,
    DEFAULT_F,
    DEFAULT_N,
    DEFAULT_SEED,
    DEFAULT_SLOTS,
    SCHEMA_VERSION,
)
from core_model import ReplicaId, ScheduledTx
from errors import ConfigError
from sim_net import NetworkConfig, NetworkMode
from underlay import ProtocolKind, ProtocolParams

GST_ON_ATTACK_SUCCESS = "on_attack_success"
GST_INFINITE = "infinite"

GstSetting = Union[int, str]


class StrategyName(str, Enum):
    PASSIVE = "passive"
    CRASH = "crash"
    RANDOM_DELAY = "random_delay"
    SPLIT_BRAIN = "split_brain"
    LIVENESS_KILL = "liveness_kill"
    FORENSIC_TRIGGER = "forensic_trigger"


PARTITIONING = (StrategyName.SPLIT_BRAIN, StrategyName.LIVENESS_KILL, StrategyName.FORENSIC_TRIGGER)


@dataclass(frozen=True)
class StrategyConfig:
    """
    攻击者策略参数

    corrupted 为真实腐化集合；active 为主动偏离协议的副本，其余腐化副本保持空闲
    （照常运行诚实协议，直到攻击目标达成）。partition 覆盖全部非主动副本。
    """

    name: StrategyName = StrategyName.PASSIVE
    corrupted: FrozenSet[ReplicaId] = frozenset()
    active: FrozenSet[ReplicaId] = frozenset()
    partition: Tuple[FrozenSet[ReplicaId], FrozenSet[ReplicaId]] = (frozenset(), frozenset())
    attack_start: int = 0
    attack_budget: int = DEFAULT_ATTACK_BUDGET
    strict: bool = True

    @classmethod
    def defaults_for(cls, name: Union[str, StrategyName], n: int, f: int, **overrides: Any) -> "StrategyConfig":
        """按策略给出 n、f 下的默认腐化集合与划分"""
        name = StrategyName(name)

        def last(k: int) -> FrozenSet[ReplicaId]:
            return frozenset(range(n - k + 1, n + 1))

        corrupted: FrozenSet[ReplicaId] = frozenset()
        active: FrozenSet[ReplicaId] = frozenset()
        partition = (frozenset(), frozenset())
        if name in (StrategyName.SPLIT_BRAIN, StrategyName.LIVENESS_KILL):
            corrupted = last(f)
            active = frozenset({n})
            rest = list(range(1, n))
            partition = (frozenset(rest[: len(rest) // 2]), frozenset(rest[len(rest) // 2:]))
        elif name == StrategyName.FORENSIC_TRIGGER:
            corrupted = last(f + 1)
            active = corrupted
            honest = list(range(1, n - f))
            partition = (frozenset(honest[: len(honest) // 2]), frozenset(honest[len(honest) // 2:]))
        elif name in (StrategyName.CRASH, StrategyName.RANDOM_DELAY):
            corrupted = last(f)
            active = corrupted
        base = cls(name=name, corrupted=corrupted, active=active, partition=partition)
        return replace(base, **overrides) if overrides else base

    @property
    def idle(self) -> FrozenSet[ReplicaId]:
        return self.corrupted - self.active

    def side_of(self, replica: ReplicaId) -> Optional[int]:
        if replica in self.partition[0]:
            return 0
        if replica in self.partition[1]:
            return 1
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name.value,
            "corrupted": sorted(self.corrupted),
            "active": sorted(self.active),
            "partition": [sorted(self.partition[0]), sorted(self.partition[1])],
            "attack_start": self.attack_start,
            "attack_budget": self.attack_budget,
            "strict": self.strict,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    """一次实验的完整描述"""

    n: int = DEFAULT_N
    f: int = DEFAULT_F
    delta: int = DEFAULT_DELTA
    gst: GstSetting = 0
    slots: int = DEFAULT_SLOTS
    protocol: ProtocolKind = ProtocolKind.SYNCFIN
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    tx_schedule: Optional[Tuple[ScheduledTx, ...]] = None
    clients: int = DEFAULT_CLIENTS
    seed: int = DEFAULT_SEED

    @property
    def protocol_params(self) -> ProtocolParams:
        return ProtocolParams.for_protocol(self.protocol, self.n, self.f, self.delta)

    @property
    def gst_slot(self) -> Optional[int]:
        """固定的 GST；未知（无穷或等待攻击成功）时为 None"""
        return self.gst if isinstance(self.gst, int) else None

    @property
    def network_config(self) -> NetworkConfig:
        gst = self.gst_slot
        mode = NetworkMode.SYNCHRONY if gst == 0 else NetworkMode.PARTIAL_SYNCHRONY
        return NetworkConfig(delta=self.delta, gst=gst, mode=mode)

    @property
    def client_ids(self) -> List[str]:
        return [f"c{k}" for k in range(1, self.clients + 1)]

    @property
    def honest(self) -> List[ReplicaId]:
        return [r for r in range(1, self.n + 1) if r not in self.strategy.corrupted]

    def schedule(self) -> Tuple[ScheduledTx, ...]:
        if self.tx_schedule is not None:
            return self.tx_schedule
        return generate_tx_schedule(self)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def generate_tx_schedule(config: ScenarioConfig) -> Tuple[ScheduledTx, ...]:
    """
    由种子生成交易调度：时隙 0 给每个诚实副本一笔交易，
    之后每隔若干时隙随机选一个诚实副本输入一笔，直到运行时长的 3/4。
    """
    rng = np.random.default_rng(config.seed)
    honest = config.honest or list(range(1, config.n + 1))
    epoch_len = config.protocol_params.epoch_len
    schedule = [ScheduledTx(0, tx, target) for tx, target in enumerate(honest, start=1)]
    next_tx = len(schedule) + 1
    slot = 0
    horizon = config.slots * 3 // 4
    while True:
        slot += int(rng.integers(1, 4 * epoch_len + 1))
        if slot >= horizon:
            break
        target = int(rng.choice(honest))
        schedule.append(ScheduledTx(slot, next_tx, target))
        next_tx += 1
    return tuple(schedule)


def _int(data: Dict[str, Any], key: str, default: int) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"必须是整数，得到 {value!r}")
    return value


def _replica_set(value: Any, key: str) -> FrozenSet[ReplicaId]:
    if not isinstance(value, (list, tuple)) or not all(isinstance(r, int) for r in value):
        raise ConfigError(key, "必须是副本编号列表")
    return frozenset(value)


def strategy_from_dict(data: Union[str, Dict[str, Any]], n: int, f: int) -> StrategyConfig:
    if isinstance(data, str):
        data = {"name": data}
    try:
        name = StrategyName(data.get("name", StrategyName.PASSIVE.value))
    except ValueError:
        raise ConfigError("strategy.name", f"未知的攻击策略: {data.get('name')!r}") from None
    overrides: Dict[str, Any] = {}
    for key in ("corrupted", "active"):
        if key in data:
            overrides[key] = _replica_set(data[key], f"strategy.{key}")
    if "partition" in data:
        part = data["partition"]
        if not isinstance(part, (list, tuple)) or len(part) != 2:
            raise ConfigError("strategy.partition", "必须是两个副本集合组成的列表")
        overrides["partition"] = (
            _replica_set(part[0], "strategy.partition"),
            _replica_set(part[1], "strategy.partition"),
        )
    for key in ("attack_start", "attack_budget"):
        if key in data:
            overrides[key] = _int(data, key, 0)
    if "strict" in data:
        overrides["strict"] = bool(data["strict"])
    if "corrupted" in overrides and "active" not in overrides and name not in (
        StrategyName.SPLIT_BRAIN,
        StrategyName.LIVENESS_KILL,
    ):
        overrides["active"] = overrides["corrupted"]
    return StrategyConfig.defaults_for(name, n, f, **overrides)


def config_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """从 JSON 字典构造并校验场景配置"""
    if not isinstance(data, dict):
        raise ConfigError("config", "配置必须是 JSON 对象")
    n = _int(data, "n", DEFAULT_N)
    f = _int(data, "f", DEFAULT_F)
    try:
        protocol = ProtocolKind(data.get("protocol", ProtocolKind.SYNCFIN.value))
    except ValueError:
        raise ConfigError("protocol", f"未知的协议: {data.get('protocol')!r}") from None

    gst: GstSetting = data.get("gst", 0)
    if isinstance(gst, str) and gst not in (GST_ON_ATTACK_SUCCESS, GST_INFINITE):
        raise ConfigError("gst", f"必须是非负整数、'{GST_ON_ATTACK_SUCCESS}' 或 '{GST_INFINITE}'")
    if isinstance(gst, bool) or not isinstance(gst, (int, str)):
        raise ConfigError("gst", f"无法识别的 GST: {gst!r}")

    schedule = None
    if data.get("tx_schedule") is not None:
        try:
            schedule = tuple(ScheduledTx(int(s), int(tx), int(t)) for s, tx, t in data["tx_schedule"])
        except (TypeError, ValueError):
            raise ConfigError("tx_schedule", "每项必须是 [时隙, 交易编号, 目标副本]") from None

    config = ScenarioConfig(
        n=n,
        f=f,
        delta=_int(data, "delta", DEFAULT_DELTA),
        gst=gst,
        slots=_int(data, "slots", DEFAULT_SLOTS),
        protocol=protocol,
        strategy=strategy_from_dict(data.get("strategy", StrategyName.PASSIVE.value), n, f),
        tx_schedule=schedule,
        clients=_int(data, "clients", DEFAULT_CLIENTS),
        seed=_int(data, "seed", DEFAULT_SEED),
    )
    validate_config(config)
    return config


def validate_config(config: ScenarioConfig) -> None:
    n, f = config.n, config.f
    if n < 1:
        raise ConfigError("n", "副本数必须为正")
    if f < 0:
        raise ConfigError("f", "f 不能为负数")
    if config.protocol == ProtocolKind.SYNCFIN and n != 3 * f + 1:
        raise ConfigError("n", f"SyncFin 场景中 n 必须等于 3f+1 (n must equal 3f+1)，当前 n={n}, f={f}")
    if config.delta < 0:
        raise ConfigError("delta", "Δ 不能为负数")
    if config.slots < 1:
        raise ConfigError("slots", "运行时隙数必须为正")
    if isinstance(config.gst, int):
        if config.gst < 0:
            raise ConfigError("gst", "GST 不能为负数")
        if config.slots < config.gst:
            raise ConfigError("slots", f"运行时隙数 {config.slots} 小于 GST {config.gst}")
    if config.clients < 1:
        raise ConfigError("clients", "至少需要一个客户端")
    if not 0 <= config.seed < 2 ** 64:
        raise ConfigError("seed", "种子必须是 64 位无符号整数")

    replicas = set(range(1, n + 1))
    strategy = config.strategy
    if not strategy.corrupted <= replicas:
        raise ConfigError("strategy.corrupted", f"引用了不存在的副本: {sorted(strategy.corrupted - replicas)}")
    if not strategy.active <= strategy.corrupted:
        raise ConfigError("strategy.active", "主动副本必须属于腐化集合")
    if strategy.attack_start < 0 or strategy.attack_budget < 1:
        raise ConfigError("strategy", "attack_start 不能为负，attack_budget 必须为正")
    if strategy.name != StrategyName.PASSIVE and not strategy.corrupted:
        raise ConfigError("strategy.corrupted", f"策略 {strategy.name.value} 至少需要一个腐化副本")
    if strategy.name in PARTITIONING:
        a, b = strategy.partition
        if a & b:
            raise ConfigError("strategy.partition", "两个分区不能相交")
        if (a | b) != replicas - strategy.active:
            raise ConfigError("strategy.partition", "两个分区必须恰好覆盖全部非主动副本")
        if not strategy.active:
            raise ConfigError("strategy.active", "分区攻击至少需要一个主动副本")

    seen = set()
    for item in config.tx_schedule or ():
        if item.target not in replicas:
            raise ConfigError("tx_schedule", f"交易 {item.tx} 的目标副本 {item.target} 不存在")
        if not 0 <= item.slot < config.slots:
            raise ConfigError("tx_schedule", f"交易 {item.tx} 的时隙 {item.slot} 超出运行范围")
        if item.tx in seen:
            raise ConfigError("tx_schedule", f"交易编号 {item.tx} 重复")
        seen.add(item.tx)


def config_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "n": config.n,
        "f": config.f,
        "delta": config.delta,
        "gst": config.gst,
        "slots": config.slots,
        "protocol": config.protocol.value,
        "strategy": config.strategy.to_dict(),
        "tx_schedule": None if config.tx_schedule is None else [s.to_list() for s in config.tx_schedule],
        "clients": config.clients,
        "seed": config.seed,
    }


def load_config(path: str) -> Dict[str, Any]:
    """读取 JSON 配置文件，返回原始字典（命令行参数随后覆盖）"""
    if not os.path.exists(path):
        raise ConfigError("config", f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"配置文件解析错误: {e}") from e
