"""
场景运行与分类

run() 执行一次模拟并汇总报告：客户端快照、安全性违规、活性报告、取证判定、
攻击时间线与执行记录摘要。classify() 运行固定的场景组合，给出三种协议在
各项性质上的经验结论。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

from client import LivenessReport, SafetyViolation, liveness_report, safety_check
from constants import CLASSIFY_T_CONFIRM, DEFAULT_F, DEFAULT_N, DEFAULT_SLOTS, SCHEMA_VERSION, TCONFIRM_EPOCHS
from core_model import BlockStore, FinalitySignature, Proposal, Sync, is_ancestor
from errors import InsufficientEvidenceError
from forensics import Evidence, Verdict, extract_evidence, forensic
from params import GST_ON_ATTACK_SUCCESS, ScenarioConfig, StrategyConfig, StrategyName, config_to_dict
from simulator import SimulationResult, simulate
from transcript import Transcript
from underlay import ProtocolKind

logger = logging.getLogger(__name__)

YES, NO, NOT_APPLICABLE = "yes", "no", "n.a."

PROPERTIES = ("synch_safe", "synch_live", "final", "accountable", "live_after_gst")

# 三种协议应当落入的性质区域
EXPECTED_MEMBERSHIP: Dict[str, Dict[str, str]] = {
    ProtocolKind.MAJORITY_SYNC.value: {"synch_safe": YES, "synch_live": YES, "final": NO},
    ProtocolKind.SYNCFIN.value: {
        "synch_safe": YES,
        "synch_live": YES,
        "final": YES,
        "accountable": YES,
        "live_after_gst": NO,
    },
    ProtocolKind.PSYNC_QUORUM.value: {"final": YES, "live_after_gst": YES},
}


def honest_signature_faults(transcript: Transcript, n: int) -> List[str]:
    """
    扫描诚实副本发出的终局签名：每个高度至多一个，且所有签名区块在同一条链上。
    返回发现的问题描述，空列表表示没有问题。
    """
    store = BlockStore()
    for log in list(transcript.sent.values()) + list(transcript.received.values()):
        for entry in log:
            payload = entry.message.payload
            if isinstance(payload, Proposal):
                store.add(payload.block)
            elif isinstance(payload, Sync):
                for block in payload.blocks:
                    store.add(block)

    faults = []
    for replica in transcript.honest(n):
        signed: Dict[int, str] = {}
        for entry in transcript.sent.get(replica, ()):
            sig = entry.message.payload
            if not isinstance(sig, FinalitySignature):
                continue
            previous = signed.setdefault(sig.height, sig.block)
            if previous != sig.block:
                faults.append(f"副本 {replica} 在高度 {sig.height} 签了两个区块")
        heights = sorted(signed)
        for low, high in zip(heights, heights[1:]):
            a, b = signed[low], signed[high]
            if a in store and b in store and not is_ancestor(a, b, store):
                faults.append(f"副本 {replica} 在高度 {low} 与 {high} 签名的区块不在同一条链上")
    return faults


def post_fork_quorum_blocks(result: SimulationResult, fork_height: Optional[int]) -> int:
    """分叉高度之上在任一客户端处凑齐 2f+1 个终局签名的区块数"""
    if fork_height is None:
        return 0
    quorum = result.config.protocol_params.quorum
    blocks = set()
    for view in result.clients.values():
        for block_hash, signers in view.sigs.items():
            block = view.store.get(block_hash)
            if block is not None and block.height > fork_height and len(signers) >= quorum:
                blocks.add(block_hash)
    return len(blocks)


def ledger_growth_after(result: SimulationResult, since: Optional[int]) -> Dict[str, int]:
    """每个客户端在时隙 since 之后新增的账本长度；since 为 None 时为空"""
    if since is None:
        return {}
    growth = {}
    for client in result.config.client_ids:
        before = 0
        for snap in result.transcript.client_snapshots(client):
            if snap.slot <= since:
                before = len(snap.ledger)
        growth[client] = len(result.clients[client].ledger) - before
    return growth


@dataclass
class RunReport:
    config: ScenarioConfig
    digest: str
    snapshots: Dict[str, List[Dict[str, Any]]]
    violation: Optional[SafetyViolation]
    liveness: LivenessReport
    evidence: Optional[Evidence] = None
    verdict: Optional[Verdict] = None
    forensic_error: Optional[str] = None
    timeline: List[Dict[str, Any]] = field(default_factory=list)
    fork_height: Optional[int] = None
    gst: Optional[int] = None
    growth_after_gst: Dict[str, int] = field(default_factory=dict)
    post_fork_quorum_blocks: int = 0
    signature_faults: List[str] = field(default_factory=list)
    stats: Dict[str, int] = field(default_factory=dict)

    @property
    def violation_detected(self) -> bool:
        return self.violation is not None or bool(self.liveness.flagged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": config_to_dict(self.config),
            "transcript_digest": self.digest,
            "snapshots": self.snapshots,
            "safety_violation": None if self.violation is None else self.violation.to_dict(),
            "liveness": self.liveness.to_dict(),
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "forensic_error": self.forensic_error,
            "timeline": self.timeline,
            "fork_height": self.fork_height,
            "gst": self.gst,
            "growth_after_gst": self.growth_after_gst,
            "post_fork_quorum_blocks": self.post_fork_quorum_blocks,
            "signature_faults": self.signature_faults,
            "stats": self.stats,
        }


def run(config: ScenarioConfig, t_confirm: Optional[int] = None) -> RunReport:
    """执行一次完整模拟并生成报告"""
    result = simulate(config)
    params = config.protocol_params
    if t_confirm is None:
        t_confirm = TCONFIRM_EPOCHS * params.epoch_len

    violation = safety_check(result.snapshots)
    evidence = verdict = None
    forensic_error = None
    if violation is not None:
        logger.info("检测到安全性违规：高度 %d", violation.height)
        evidence = extract_evidence(result.clients[violation.first.client], result.clients[violation.second.client])
        if evidence is not None:
            try:
                verdict = forensic(evidence)
            except InsufficientEvidenceError as e:
                forensic_error = str(e)

    liveness = liveness_report(
        config.schedule(),
        config.honest,
        result.snapshots,
        config.client_ids,
        result.gst,
        t_confirm,
        result.end_slot,
    )
    snapshots = {
        c: [s.to_dict() for s in result.transcript.client_snapshots(c)] for c in config.client_ids
    }
    fork_height = result.strategy.fork_height
    return RunReport(
        config=config,
        digest=result.transcript.digest(),
        snapshots=snapshots,
        violation=violation,
        liveness=liveness,
        evidence=evidence,
        verdict=verdict,
        forensic_error=forensic_error,
        timeline=list(result.strategy.timeline),
        fork_height=fork_height,
        gst=result.gst,
        growth_after_gst=ledger_growth_after(
            result, None if result.gst is None else result.gst + config.delta
        ),
        post_fork_quorum_blocks=post_fork_quorum_blocks(result, fork_height),
        signature_faults=honest_signature_faults(result.transcript, config.n),
        stats=result.stats,
    )


def sweep(
    config: ScenarioConfig,
    runs: int,
    workers: Optional[int] = None,
    t_confirm: Optional[int] = None,
) -> List[RunReport]:
    """种子 seed, seed+1, ... 各跑一次，结果按种子顺序返回"""
    configs = [config.with_seed(config.seed + k) for k in range(runs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: run(c, t_confirm), configs))


def _scenario(protocol: ProtocolKind, name: StrategyName, gst: Any, slots: int, **strategy: Any) -> ScenarioConfig:
    return ScenarioConfig(
        n=DEFAULT_N,
        f=DEFAULT_F,
        gst=gst,
        slots=slots,
        protocol=protocol,
        strategy=StrategyConfig.defaults_for(name, DEFAULT_N, DEFAULT_F, **strategy),
    )


def _battery(configs: Iterable[ScenarioConfig], seeds: Sequence[int], t_confirm: Optional[int] = None) -> List[RunReport]:
    reports = []
    for config in configs:
        for seed in seeds:
            reports.append(run(config.with_seed(seed), t_confirm))
    return reports


def classify_protocol(protocol: ProtocolKind, seeds: Sequence[int], slots: int = DEFAULT_SLOTS) -> Dict[str, str]:
    row: Dict[str, str] = {}
    synchronous = _battery(
        [
            _scenario(protocol, StrategyName.PASSIVE, 0, slots),
            _scenario(protocol, StrategyName.CRASH, 0, slots),
        ],
        seeds,
    )
    row["synch_safe"] = YES if all(r.violation is None for r in synchronous) else NO
    row["synch_live"] = YES if all(not r.liveness.flagged for r in synchronous) else NO

    adversarial = _battery(
        [
            _scenario(protocol, name, 60, slots, strict=False)
            for name in (StrategyName.SPLIT_BRAIN, StrategyName.LIVENESS_KILL, StrategyName.RANDOM_DELAY)
        ],
        seeds,
    )
    row["final"] = YES if all(r.violation is None for r in adversarial) else NO

    triggered = [
        r
        for r in _battery(
            [_scenario(protocol, StrategyName.FORENSIC_TRIGGER, GST_ON_ATTACK_SUCCESS, slots, strict=False)],
            seeds,
        )
        if r.violation is not None
    ]
    if not triggered:
        row["accountable"] = NOT_APPLICABLE
    else:
        f = DEFAULT_F
        corrupted = frozenset(range(DEFAULT_N - f, DEFAULT_N + 1))
        row["accountable"] = YES if all(
            r.verdict is not None and len(r.verdict.accused) >= f + 1 and r.verdict.accused <= corrupted
            for r in triggered
        ) else NO

    after_gst = _battery(
        [_scenario(protocol, StrategyName.LIVENESS_KILL, 60, slots, strict=False)],
        seeds,
        t_confirm=CLASSIFY_T_CONFIRM,
    )
    row["live_after_gst"] = YES if all(not r.liveness.flagged for r in after_gst) else NO
    logger.info("协议 %s 分类完成: %s", protocol.value, row)
    return row


@dataclass
class Classification:
    seeds: List[int]
    rows: Dict[str, Dict[str, str]]

    @property
    def matches_expected(self) -> bool:
        return all(
            self.rows[protocol].get(prop) == value
            for protocol, expected in EXPECTED_MEMBERSHIP.items()
            for prop, value in expected.items()
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "seeds": self.seeds,
            "properties": list(PROPERTIES),
            "rows": self.rows,
            "expected": EXPECTED_MEMBERSHIP,
            "matches_expected": self.matches_expected,
        }


def classify(
    seeds: Sequence[int] = (0, 1, 2),
    slots: int = DEFAULT_SLOTS,
    workers: Optional[int] = None,
) -> Classification:
    """对三种协议各跑一遍固定场景组合，协议之间并行"""
    protocols = list(ProtocolKind)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda p: classify_protocol(p, seeds, slots), protocols))
    return Classification(seeds=list(seeds), rows={p.value: row for p, row in zip(protocols, rows)})
