import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseSettings

VERSION = 1
API_VERSION = f"v{VERSION}"

PACKAGE_DIR = Path(__file__).resolve().parent
DEFAULT_PROFILES_FILE = PACKAGE_DIR / "data" / "energy_profiles.yaml"

load_dotenv()


class Settings(BaseSettings):
    # Project
    project_name: str = "keepalive-sim"
    environment: str = "local"
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s -%(levelname)s - %(module)s:%(funcName)s::ln.%(lineno)s:: >%(message)s<"

    # Runs
    output_dir: str = "runs"
    threads: int = 1
    default_cold_ms: float = 1000.0
    profiles_file: Optional[str] = None

    # API
    MAX_TRACE_RECORDS: int = 50_000
    host: str = "0.0.0.0"
    port: int = 5000
    api_endpoint_version: str = API_VERSION

    # Sentry
    sentry_dsn: Optional[str] = None

    class Config:
        env_prefix = "keepalive_"
        case_sensitive = False
        env_file = ".env"


@lru_cache
def get_settings() -> Settings:
    return Settings()


def setup_logging(level: str | None = None) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format=settings.LOG_FORMAT,
        force=True,
    )


def init_sentry() -> bool:
    settings = get_settings()

    # Only report outside local development, and only when a DSN is configured
    if settings.environment == "local" or not settings.sentry_dsn:
        return False

    import sentry_sdk

    sentry_sdk.init(
        dsn=settings.sentry_dsn,
        traces_sample_rate=0.2,
        environment=settings.environment,
        release=f"{settings.project_name}@{VERSION}",
    )
    return True
