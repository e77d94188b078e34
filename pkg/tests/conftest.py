import json
from pathlib import Path

import pytest

from gridguard.pipeline import RunConfig, run_all

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small_config(output_dir, **overrides) -> RunConfig:
    """The quick config (2 transformers x 5 meters over 3 days) with overrides merged in."""
    doc = json.loads((CONFIGS / "quick.json").read_text())
    doc["output_dir"] = str(output_dir)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return RunConfig.from_dict(doc)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small") / "run"
    manifest = run_all(small_config(root))
    return root, manifest


_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, line: str) -> None:
    _ACCEPTANCE[number] = line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
