class BytecodeError(Exception):
    """字节码语法错误（verifier 错误分类中的 syntax 类）。"""

    category = "syntax"

    def __init__(self, rule_id: str, insn_index: int, message: str):
        super().__init__(message)
        self.rule_id = rule_id
        self.insn_index = insn_index
        self.message = message

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "rule_id": self.rule_id,
            "insn_index": self.insn_index,
            "message": self.message,
        }
