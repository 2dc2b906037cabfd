"""Exact Wardrop equilibria under externality prices."""

from importlib import resources
from pathlib import Path

from .exact import LexRational, Rational, rational
from .model import Flow, Instance, load_instance

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Path of a bundled instance, e.g. ``fixture_path("pigou")``."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("tollcast") / "fixtures" / name))


def load_fixture(name: str) -> Instance:
    return load_instance(fixture_path(name))


__all__ = ["Flow", "Instance", "LexRational", "Rational", "fixture_path", "load_fixture", "load_instance", "rational"]
