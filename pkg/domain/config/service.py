import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from .types import LabSettings

load_dotenv(dotenv_path=".env")

VERSION = "v0.3.0"

_SETTING_KEYS = {
    "catalog": "BPFLAB_CATALOG",
    "seed": "BPFLAB_SEED",
    "workers": "BPFLAB_WORKERS",
    "seed_bugs": "BPFLAB_SEED_BUGS",
    "corpus_dir": "BPFLAB_CORPUS_DIR",
    "log_level": "BPFLAB_LOG_LEVEL",
    "task_concurrency": "BPFLAB_TASK_CONCURRENCY",
}


class ConfigService:
    _cache: Dict[str, Any] = {}

    @classmethod
    def get(cls, key: str, default: Optional[Any] = None) -> Any:
        if key in cls._cache:
            return cls._cache[key]
        env_value = os.getenv(key)
        if env_value is not None:
            cls._cache[key] = env_value
            return env_value
        return default

    @classmethod
    def set(cls, key: str, value: Any):
        """仅在进程内覆盖，不回写环境变量。"""
        cls._cache[key] = value

    @classmethod
    def clear_cache(cls):
        cls._cache.clear()

    @classmethod
    def settings(cls) -> LabSettings:
        raw = {}
        for field, key in _SETTING_KEYS.items():
            value = cls.get(key)
            if value not in (None, ""):
                raw[field] = value
        return LabSettings(**raw)
