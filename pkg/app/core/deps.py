from fastapi import Depends

from app.core.config import Settings, settings


def get_settings() -> Settings:
    return settings


def get_worker_count(current: Settings = Depends(get_settings)) -> int:
    return max(1, current.MAX_WORKERS)
