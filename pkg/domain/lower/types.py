from dataclasses import dataclass, field


class CompileError(Exception):
    """AST 无法降级为字节码（栈超预算、未定义变量等），程序被丢弃。"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class LoadError(Exception):
    def __init__(self, rule_id: str, message: str):
        super().__init__(f"{rule_id}: {message}")
        self.rule_id = rule_id
        self.message = message

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "message": self.message}


@dataclass(slots=True)
class StackLayout:
    """变量到栈偏移（相对 r10，负数）的分配结果。"""

    offsets: dict[int, int] = field(default_factory=dict)
    buffers: dict[int, int] = field(default_factory=dict)
    size: int = 0

    def slot(self, var: int) -> int:
        try:
            return self.offsets[var]
        except KeyError:
            raise CompileError(f"v{var} has no stack slot") from None

    def is_buffer(self, var: int) -> bool:
        return var in self.buffers

    def chunks(self):
        """按 8 字节遍历所有已分配区域（序幕清零用）。"""
        for var, offset in self.offsets.items():
            size = self.buffers.get(var, 8)
            for chunk in range(offset, offset + _round8(size), 8):
                yield chunk


def _round8(size: int) -> int:
    return -(-size // 8) * 8
