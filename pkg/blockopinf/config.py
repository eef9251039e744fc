import os
import logging

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="BLOCKOPINF_", extra="ignore")

    # Logging
    LOG_LEVEL: str = "INFO"

    # Work pool used by the regularization search
    WORKERS: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)

    # Any reduced state entry above this magnitude counts as a blow-up
    BLOWUP_THRESHOLD: float = Field(default=1e10, gt=0)

    # Treat rank-deficient unregularized solves as fatal in the pipeline
    STRICT: bool = False


settings = Settings()


def configure_logging(level: str = None) -> None:
    """Install the console handler once; later calls only adjust the level."""
    from rich.logging import RichHandler

    level = (level or settings.LOG_LEVEL).upper()
    root = logging.getLogger()
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        logging.basicConfig(
            level=level,
            format="%(message)s",
            datefmt="[%X]",
            handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        )
    root.setLevel(level)
