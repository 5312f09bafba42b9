"""Central configuration loading from environment variables."""
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from the environment (``MASKEDCLIP_*``)."""

    # Application
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json", pattern="^(json|text)$")

    model_config = SettingsConfigDict(
        env_prefix="MASKEDCLIP_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )
