#!/usr/bin/env python3
"""
常量定义文件

包含模拟器中使用的各种常量值，方便统一管理和后期修改。
"""

# 报告/配置格式版本
SCHEMA_VERSION = 1

# 创世区块的哨兵哈希
GENESIS_HASH = "0" * 64

# 交易输入的“环境”发送者
ENVIRONMENT = 0

# 默认规模参数（n=3f+1 的最小可容纳全部三种攻击的配置）
DEFAULT_N = 7
DEFAULT_F = 2
DEFAULT_DELTA = 1
DEFAULT_SLOTS = 400
DEFAULT_CLIENTS = 2
DEFAULT_SEED = 0

# 攻击目标的默认时隙预算
DEFAULT_ATTACK_BUDGET = 200

# 无延迟模式下同一时隙内的消息上限系数（上限 = 系数 * n^2）
SAME_SLOT_FACTOR = 10

# 验收中 Tconfirm 的上限（纪元数）
TCONFIRM_EPOCHS = 10

# 分类电池中 GST 之后的活性阈值（时隙）
CLASSIFY_T_CONFIRM = 20

# 进程退出码
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2
EXIT_CONFIG = 3
EXIT_ATTACK_FAILED = 4
