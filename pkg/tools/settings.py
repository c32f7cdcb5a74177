# tools/settings.py
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path


# ----------------------------
# Dotenv loading
# ----------------------------
def load_env_safely() -> None:
    """
    Loads .env explicitly from the working directory or the repo root
    (one level above tools/). Existing environment variables win.
    """
    try:
        from dotenv import load_dotenv  # python-dotenv
    except Exception:
        return

    candidates = [
        Path(os.getcwd()) / ".env",
        Path(__file__).resolve().parents[1] / ".env",
    ]
    for p in candidates:
        if p.exists():
            load_dotenv(dotenv_path=str(p), override=False)
            return


def _env_int(name: str, default: int) -> int:
    raw = (os.getenv(name) or "").strip()
    try:
        return int(raw) if raw else default
    except ValueError:
        return default


@dataclass(frozen=True)
class EnvDefaults:
    threads: int = 1
    seed: int = 42
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "EnvDefaults":
        load_env_safely()
        return cls(
            threads=max(1, _env_int("LAKEOPT_THREADS", 1)),
            seed=_env_int("LAKEOPT_SEED", 42),
            log_level=(os.getenv("LAKEOPT_LOG_LEVEL") or "INFO").strip().upper(),
        )
