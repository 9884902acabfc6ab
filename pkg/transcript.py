"""
执行记录

一次执行的完整有序记录：每个副本收到/发出的消息、每个客户端的观察日志、
真实的腐化集合与客户端快照。摘要是规范化序列化的 sha256。
"""

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List

from client import ClientSnapshot
from core_model import LogEntry, ReplicaId, canonical_json


@dataclass
class Transcript:
    config: Dict[str, Any]
    received: Dict[ReplicaId, List[LogEntry]] = field(default_factory=dict)
    sent: Dict[ReplicaId, List[LogEntry]] = field(default_factory=dict)
    clients: Dict[str, List[LogEntry]] = field(default_factory=dict)
    corrupted: FrozenSet[ReplicaId] = frozenset()
    snapshots: List[ClientSnapshot] = field(default_factory=list)

    def honest(self, n: int) -> List[ReplicaId]:
        return [r for r in range(1, n + 1) if r not in self.corrupted]

    def client_snapshots(self, client: str) -> List[ClientSnapshot]:
        return [s for s in self.snapshots if s.client == client]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "received": {str(r): [e.to_dict() for e in log] for r, log in sorted(self.received.items())},
            "sent": {str(r): [e.to_dict() for e in log] for r, log in sorted(self.sent.items())},
            "clients": {c: [e.to_dict() for e in log] for c, log in sorted(self.clients.items())},
            "corrupted": sorted(self.corrupted),
            "snapshots": [s.to_dict() for s in self.snapshots],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Transcript":
        return cls(
            config=data["config"],
            received={int(r): [LogEntry.from_dict(e) for e in log] for r, log in data["received"].items()},
            sent={int(r): [LogEntry.from_dict(e) for e in log] for r, log in data["sent"].items()},
            clients={c: [LogEntry.from_dict(e) for e in log] for c, log in data["clients"].items()},
            corrupted=frozenset(int(r) for r in data["corrupted"]),
            snapshots=[ClientSnapshot.from_dict(s) for s in data["snapshots"]],
        )

    def digest(self) -> str:
        """逐条流式计算，与 to_dict() 的内容一一对应"""
        h = hashlib.sha256()
        h.update(canonical_json(self.config).encode("utf-8"))
        sections = (
            ("received", sorted(self.received.items())),
            ("sent", sorted(self.sent.items())),
            ("clients", sorted(self.clients.items())),
        )
        for name, logs in sections:
            for owner, log in logs:
                h.update(f"#{name}:{owner}\n".encode("utf-8"))
                for entry in log:
                    m = entry.message
                    line = f"{entry.slot}|{m.sender}|{m.recipient}|{m.send_slot}|{m.payload_canonical}\n"
                    h.update(line.encode("utf-8"))
        h.update(canonical_json(sorted(self.corrupted)).encode("utf-8"))
        h.update(canonical_json([s.to_dict() for s in self.snapshots]).encode("utf-8"))
        return h.hexdigest()
