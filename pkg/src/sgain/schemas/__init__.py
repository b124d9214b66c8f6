"""JSON schemas for the CLI outputs."""

from importlib import resources
import json

NAMES = ("certificate", "equilibrium", "lyapunov")


def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}")
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
