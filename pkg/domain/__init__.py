"""
domain：指令集、目录、校验器、生成、降级、模拟内核与模糊测试各域

约定：跨包只从各子包 `__init__.py` 导入公开 API。
"""

__all__: list[str] = []
