#!/usr/bin/env python3
"""
SyncFin 模拟器 - 命令行接口

子命令：
  run       运行一个场景（--runs N 时按种子扫描）并输出报告
  classify  运行固定的场景组合，输出三种协议的性质分类
  forensic  对证据文件执行取证，输出判定
  worlds    记录世界 0 并重放 n-f 个无延迟世界，输出不可区分性表格
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional

from constants import (
    DEFAULT_SLOTS,
    EXIT_ATTACK_FAILED,
    EXIT_CONFIG,
    EXIT_ERROR,
    EXIT_OK,
    EXIT_VIOLATION,
)
from errors import (
    AttackFailedError,
    ConfigError,
    EvidenceParseError,
    InsufficientEvidenceError,
    PreconditionError,
    SimulationError,
)
from forensics import Evidence, forensic, verify_verdict
from params import GST_INFINITE, GST_ON_ATTACK_SUCCESS, config_from_dict, load_config
from runner import classify, run, sweep
from worlds import run_worlds

# 命令行参数映射到配置文件键名
param_mapping = {
    'n': 'n',
    'f': 'f',
    'delta': 'delta',
    'gst': 'gst',
    'slots': 'slots',
    'protocol': 'protocol',
    'strategy': 'strategy',
    'clients': 'clients',
    'seed': 'seed',
}

# worlds 子命令在没有配置文件时使用的世界 0
DEFAULT_WORLD0 = {
    'protocol': 'majority_sync',
    'strategy': 'split_brain',
    'gst': GST_ON_ATTACK_SUCCESS,
    'slots': 120,
}


def _gst(value: str):
    if value in (GST_ON_ATTACK_SUCCESS, GST_INFINITE):
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"必须是非负整数、{GST_ON_ATTACK_SUCCESS} 或 {GST_INFINITE}"
        ) from None


def _add_scenario_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', '-C', help='配置文件路径（JSON格式），配置文件中的参数会被命令行参数覆盖')
    parser.add_argument('--seed', type=int, help='随机种子（覆盖配置文件）')
    parser.add_argument('--n', type=int, help='副本数，默认：7')
    parser.add_argument('--f', type=int, help='容错数，默认：2')
    parser.add_argument('--delta', type=int, help='GST 之后的消息延迟上界 Δ（时隙），默认：1')
    parser.add_argument('--gst', type=_gst, help='GST：整数、on_attack_success 或 infinite，默认：0')
    parser.add_argument('--slots', type=int, help='运行时隙数，默认：400')
    parser.add_argument('--protocol', choices=['majority_sync', 'psync_quorum', 'syncfin'], help='协议，默认：syncfin')
    parser.add_argument(
        '--strategy',
        choices=['passive', 'crash', 'random_delay', 'split_brain', 'liveness_kill', 'forensic_trigger'],
        help='攻击策略，默认：passive',
    )
    parser.add_argument('--clients', type=int, help='客户端数，默认：2')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='SyncFin 模拟器 - 命令行接口')
    parser.add_argument('-v', '--verbose', action='store_true', help='输出调试日志')
    sub = parser.add_subparsers(dest='command', required=True)

    p_run = sub.add_parser('run', help='运行场景并输出报告')
    _add_scenario_args(p_run)
    p_run.add_argument('--out', '-o', default='out', help='输出目录，默认：out')
    p_run.add_argument('--runs', type=int, default=1, help='种子扫描次数（从 --seed 开始），默认：1')
    p_run.add_argument('--workers', type=int, help='并行线程数，默认由系统决定')
    p_run.add_argument('--t-confirm', type=int, help='活性检查的确认时限（时隙），默认：10 个纪元')

    p_cls = sub.add_parser('classify', help='输出三种协议的性质分类')
    p_cls.add_argument('--seed', type=int, default=0, help='起始种子，默认：0')
    p_cls.add_argument('--runs', type=int, default=3, help='每个场景的种子数，默认：3')
    p_cls.add_argument('--slots', type=int, default=DEFAULT_SLOTS, help='每次运行的时隙数，默认：400')
    p_cls.add_argument('--out', '-o', default='out', help='输出目录，默认：out')
    p_cls.add_argument('--workers', type=int, help='并行线程数，默认由系统决定')

    p_for = sub.add_parser('forensic', help='对证据文件执行取证')
    p_for.add_argument('evidence', help='证据文件路径（JSON格式）')
    p_for.add_argument('--out', '-o', default='out', help='输出目录，默认：out')

    p_wld = sub.add_parser('worlds', help='记录世界 0 并重放 n-f 个世界')
    _add_scenario_args(p_wld)
    p_wld.add_argument('--out', '-o', default='out', help='输出目录，默认：out')
    p_wld.add_argument('--verdict', type=int, nargs='+', help='要检验的固定判定（副本编号），默认：n-f..n')
    p_wld.add_argument('--replica-seed', type=int, help='重放时诚实副本使用的种子（用于检验发散检测）')
    p_wld.add_argument('--workers', type=int, help='并行线程数，默认由系统决定')
    return parser


def scenario_dict(args: argparse.Namespace, defaults: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """配置文件 → 默认值之上叠加命令行参数"""
    config_data: Dict[str, Any] = dict(defaults or {})
    if args.config:
        config_data.update(load_config(args.config))
    for cli_param, config_key in param_mapping.items():
        value = getattr(args, cli_param, None)
        if value is not None:
            config_data[config_key] = value
    return config_data


def _write_json(out_dir: str, name: str, data: Any) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
    return path


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_dict(scenario_dict(args))
    if args.runs < 1:
        raise ConfigError('runs', '--runs 必须为正')
    print(f"正在运行 {config.protocol.value} / {config.strategy.name.value}，种子 {config.seed}，共 {args.runs} 次...")
    if args.runs == 1:
        reports = [run(config, args.t_confirm)]
    else:
        reports = sweep(config, args.runs, args.workers, args.t_confirm)

    detected = False
    for report in reports:
        suffix = '' if args.runs == 1 else f'_seed{report.config.seed}'
        path = _write_json(args.out, f'report{suffix}.json', report.to_dict())
        if report.evidence is not None:
            _write_json(args.out, f'evidence{suffix}.json', report.evidence.to_dict())
        if report.violation is not None:
            accused = sorted(report.verdict.accused) if report.verdict is not None else []
            print(f"种子 {report.config.seed}: 安全性违规（高度 {report.violation.height}），被指控副本 {accused}")
        if report.liveness.flagged:
            print(f"种子 {report.config.seed}: {len(report.liveness.flagged)} 笔交易超过确认时限")
        detected = detected or report.violation_detected
        print(f"报告已保存到: {path}（摘要 {report.digest[:16]}）")
    return EXIT_VIOLATION if detected else EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    seeds = list(range(args.seed, args.seed + args.runs))
    print(f"正在运行分类场景组合，种子 {seeds}...")
    result = classify(seeds, args.slots, args.workers)
    for protocol, row in result.rows.items():
        cells = ', '.join(f'{k}={v}' for k, v in row.items())
        print(f"  {protocol:<14} {cells}")
    path = _write_json(args.out, 'classification.json', result.to_dict())
    print(f"分类完成！结果已保存到: {path}")
    if not result.matches_expected:
        print("警告：分类结果与预期的性质区域不一致")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_forensic(args: argparse.Namespace) -> int:
    if not os.path.exists(args.evidence):
        raise EvidenceParseError(f'证据文件不存在: {args.evidence}')
    try:
        with open(args.evidence, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise EvidenceParseError(f'证据文件解析错误: {e}') from e
    if not isinstance(data, dict):
        raise EvidenceParseError('证据文件必须是 JSON 对象')
    evidence = Evidence.from_dict(data)
    verdict = forensic(evidence)
    path = _write_json(args.out, 'verdict.json', verdict.to_dict())
    print(f"取证完成！被指控副本 {sorted(verdict.accused)}，判定可独立验证: {verify_verdict(verdict)}")
    print(f"判定已保存到: {path}")
    return EXIT_VIOLATION if len(verdict.accused) >= evidence.f + 1 else EXIT_OK


def cmd_worlds(args: argparse.Namespace) -> int:
    config = config_from_dict(scenario_dict(args, DEFAULT_WORLD0))
    print(f"正在记录世界 0 并重放 {config.n - config.f} 个世界...")
    verdict = frozenset(args.verdict) if args.verdict else None
    t0, table = run_worlds(config, verdict, args.workers, args.replica_seed)
    _write_json(args.out, 'world0_transcript.json', t0.to_dict())
    path = _write_json(args.out, 'worlds_table.json', table.to_dict())
    for row in table.rows:
        print(
            f"  世界 {row.world}: 诚实副本 {row.honest_replica}，记录一致={row.equal}，"
            f"仍有违规={row.violation}，固定判定指控诚实副本={row.accused_honest}"
        )
    print(f"表格已保存到: {path}")
    return EXIT_OK if table.all_equal else EXIT_ERROR


COMMANDS = {
    'run': cmd_run,
    'classify': cmd_classify,
    'forensic': cmd_forensic,
    'worlds': cmd_worlds,
}


def main(argv=None) -> int:
    """主函数，解析参数并按子命令执行，返回进程退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PreconditionError) as e:
        print(f"配置错误: {e}")
        return EXIT_CONFIG
    except (EvidenceParseError, InsufficientEvidenceError) as e:
        print(f"证据错误: {e}")
        return EXIT_CONFIG
    except AttackFailedError as e:
        print(f"攻击未达成: {e}")
        return EXIT_ATTACK_FAILED
    except SimulationError as e:
        print(f"运行失败: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
