"""
Runtime settings read from the environment / .env file
"""
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class RuntimeSettings(BaseSettings):
    """Process-level knobs that are not part of a run configuration"""
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding='utf-8',
        extra='ignore'  # Ignore extra fields
    )

    threads: int = Field(default=1, ge=1, alias="MURTREE_THREADS")
    log_level: str = Field(default="INFO", alias="MURTREE_LOG_LEVEL")
    log_file: Optional[str] = Field(default=None, alias="MURTREE_LOG_FILE")


def load_runtime_settings() -> RuntimeSettings:
    """Fresh read of the environment (tests patch variables between calls)"""
    return RuntimeSettings()


# Global settings instance
runtime_settings = RuntimeSettings()
