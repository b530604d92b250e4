"""Shipped benchmark manifests and toy guidance images."""

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent


def data_path(name: str) -> Path:
    path = DATA_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"no shipped data file {name!r}")
    return path
