import logging
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-level settings read from the environment (and a local .env file)."""

    log_level: str = Field(default="INFO", description="Root logging level")
    results_log: str = Field(default="results.jsonl", description="JSONL sink for evaluation reports")
    checkpoint_path: Optional[str] = Field(default=None, description="Student checkpoint served by the API")
    api_host: str = "0.0.0.0"
    api_port: int = 8000

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            log_level=os.environ.get("DVD_LOG_LEVEL", "INFO"),
            results_log=os.environ.get("DVD_RESULTS_LOG", "results.jsonl"),
            checkpoint_path=os.environ.get("DVD_CHECKPOINT_PATH") or None,
            api_host=os.environ.get("DVD_API_HOST", "0.0.0.0"),
            api_port=int(os.environ.get("DVD_API_PORT", "8000")),
        )


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once per process."""
    level = (level or Settings.from_env().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))
