from .service import ConfigService, VERSION
from .types import LabSettings

__all__ = [
    "ConfigService",
    "VERSION",
    "LabSettings",
]
