"""
模拟器异常层次

所有异常都继承 SimulationError，命令行按类型映射到退出码。
"""


class SimulationError(Exception):
    """模拟器错误基类"""


class ConfigError(SimulationError):
    """配置校验失败，携带出错的字段名"""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class MissingAncestorError(SimulationError):
    """区块存储中缺少祖先区块"""


class UnauthorizedSenderError(SimulationError):
    """以不属于自己的身份发送消息"""


class DeliveryBoundError(SimulationError):
    """投递时隙违反部分同步上界，属于策略实现错误"""


class SlotOverflowError(SimulationError):
    """同一时隙内消息数超过上限"""


class DriverOrderError(SimulationError):
    """终局小工具的调用顺序错误（后代先于祖先）"""


class AttackFailedError(SimulationError):
    """攻击在预算内未达成目标"""


class IrreproducibleViewError(SimulationError):
    """客户端账本无法从其自身消息日志重新推导"""


class InsufficientEvidenceError(SimulationError):
    """证据不足以重新推导冲突账本"""


class NoConflictError(InsufficientEvidenceError):
    """证据中的两个账本互为前缀，不构成冲突"""


class EvidenceParseError(SimulationError):
    """证据/报告文件无法解析"""


class DivergenceError(SimulationError):
    """重放时诚实副本的输出与基准记录不一致"""


class PreconditionError(SimulationError):
    """实验的前置条件不满足"""
