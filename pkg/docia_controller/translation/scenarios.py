"""Built-in scenarios: small corpora replayed against scripted backends."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import docia_logger as logger
from .backends import ScriptedBackend
from .core import (
    ConfigError,
    Document,
    IoError,
    PipelineConfig,
    documents_from_data,
    validate_config,
)
from .pipelines import CorpusResult, record_to_dict, run_corpus

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
DIGEST_FILE = SCENARIO_DIR / "digests.yaml"
FLOAT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Scenario:
    """A corpus, a backend script, a configuration and the expected outcome."""

    name: str
    documents: tuple[Document, ...]
    script: tuple[dict[str, Any], ...]
    config: PipelineConfig
    expect: dict[str, Any] = field(default_factory=dict, compare=False)
    description: str = ""

    def backend(self) -> ScriptedBackend:
        """Create a fresh backend from the script.

        Returns:
            the scripted backend
        """
        return ScriptedBackend.from_data(self.script, source=self.name)

    def replay(self) -> ScenarioOutcome:
        """Run the scenario.

        Returns:
            the outcome, with the differences from the expectations
        """
        backend = self.backend()
        result = run_corpus(self.documents, self.config, backend)
        return ScenarioOutcome(
            scenario=self,
            result=result,
            calls=backend.calls,
            mismatches=tuple(check_expectations(self.expect, result)),
        )


@dataclass(frozen=True)
class ScenarioOutcome:
    """Result of replaying a scenario."""

    scenario: Scenario
    result: CorpusResult
    calls: int
    mismatches: tuple[str, ...] = ()

    @property
    def output(self) -> str:
        """The output JSONL."""
        return self.result.to_jsonl()

    @property
    def digest(self) -> str:
        """SHA-256 of the output JSONL."""
        return hashlib.sha256(self.output.encode("utf-8")).hexdigest()


def _matches(expected: Any, actual: Any, path: str, mismatches: list[str]) -> None:
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            mismatches.append(f"{path}: expected an object, got {actual!r}")
            return
        for key, value in expected.items():
            _matches(value, actual.get(key), f"{path}.{key}", mismatches)
    elif isinstance(expected, float) and isinstance(actual, int | float):
        if not math.isclose(expected, actual, rel_tol=0, abs_tol=FLOAT_TOLERANCE):
            mismatches.append(f"{path}: expected {expected!r}, got {actual!r}")
    elif expected != actual:
        mismatches.append(f"{path}: expected {expected!r}, got {actual!r}")


def check_expectations(expect: dict[str, Any], result: CorpusResult) -> list[str]:
    """Compare a run with hand-computed expectations.

    Supported keys are ``llm_calls`` (total primary calls), ``extra_calls``,
    ``segments`` (``doc#index`` → subset of the output object) and
    ``failed`` (whether the run has fatal failures).

    Args:
        expect: the expectations
        result: the corpus result

    Returns:
        one message per difference
    """
    mismatches: list[str] = []
    records = {str(r.id): record_to_dict(r) for r in result.records}
    if "llm_calls" in expect:
        _matches(
            expect["llm_calls"],
            sum(r.llm_calls for r in result.records),
            "llm_calls",
            mismatches,
        )
    if "extra_calls" in expect:
        _matches(
            expect["extra_calls"],
            sum(r.extra_calls for r in result.records),
            "extra_calls",
            mismatches,
        )
    if "failed" in expect:
        _matches(expect["failed"], result.failed, "failed", mismatches)
    for segment, fields in (expect.get("segments") or {}).items():
        if segment not in records:
            mismatches.append(f"{segment}: no such segment in the output")
            continue
        _matches(fields, records[segment], segment, mismatches)
    return mismatches


def _scenario(
    name: str, data: dict[str, Any], variant: dict[str, Any] | None = None
) -> Scenario:
    variant = variant or {}
    config = {**(data.get("config") or {}), **(variant.get("config") or {})}
    try:
        return Scenario(
            name=name,
            documents=tuple(documents_from_data(data["documents"])),
            script=tuple(variant.get("script") or data["script"]),
            config=validate_config(config),
            expect=variant.get("expect") or data.get("expect") or {},
            description=variant.get("description") or data.get("description", ""),
        )
    except KeyError as e:
        error = f"scenario {name} has no {e.args[0]!r}"
        raise ConfigError(error) from e


def load_scenarios(path: str | Path) -> list[Scenario]:
    """Read a scenario file, expanding its variants.

    A file holds ``name``, ``documents`` (input rows), ``script``,
    ``config`` and ``expect``. Each entry of ``variants`` (with its own
    ``name``, ``config`` overrides and ``expect``) becomes a scenario named
    ``{name}/{variant}``.

    Args:
        path: the YAML file

    Raises:
        IoError: if the file cannot be read
        ConfigError: if the file is malformed

    Returns:
        the scenarios
    """
    try:
        with Path(path).open(encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        error = f"cannot read scenario {path}: {e}"
        raise IoError(error) from e
    except yaml.YAMLError as e:
        error = f"invalid scenario {path}: {e}"
        raise ConfigError(error) from e

    name = data.get("name") or Path(path).stem
    variants = data.get("variants") or []
    if not variants:
        return [_scenario(name, data)]
    return [_scenario(f"{name}/{v['name']}", data, v) for v in variants]


def builtin_scenarios(directory: str | Path = SCENARIO_DIR) -> list[Scenario]:
    """Load every scenario shipped with the app.

    Args:
        directory: the scenario directory

    Returns:
        the scenarios, sorted by name
    """
    scenarios = []
    for path in sorted(Path(directory).glob("*.yaml")):
        if path.name == DIGEST_FILE.name:
            continue
        scenarios += load_scenarios(path)
    return sorted(scenarios, key=lambda s: s.name)


def read_digests(path: str | Path = DIGEST_FILE) -> dict[str, str]:
    """Read the blessed output digests.

    Args:
        path: the digest file

    Returns:
        digests keyed by scenario name (empty if the file does not exist)
    """
    try:
        with Path(path).open(encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except FileNotFoundError:
        return {}
    except OSError as e:
        error = f"cannot read digests {path}: {e}"
        raise IoError(error) from e


def write_digests(digests: dict[str, str], path: str | Path = DIGEST_FILE) -> None:
    """Replace the blessed output digests.

    Args:
        digests: digests keyed by scenario name
        path: the digest file
    """
    try:
        with Path(path).open("w", encoding="utf-8") as f:
            f.write("# written by `manage.py docia_verify --bless`\n")
            yaml.safe_dump(dict(sorted(digests.items())), f, allow_unicode=True)
    except OSError as e:
        error = f"cannot write digests {path}: {e}"
        raise IoError(error) from e
    logger.info("digests blessed", path=str(path), scenarios=len(digests))


@dataclass(frozen=True)
class Verification:
    """Verdict on one scenario."""

    name: str
    status: str
    """ok, mismatch, changed (digest differs) or unblessed"""
    digest: str
    messages: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        """Whether the scenario behaves as expected (unblessed still passes)."""
        return self.status in ("ok", "unblessed")


def verify(
    scenarios: list[Scenario], digests: dict[str, str]
) -> list[Verification]:
    """Replay scenarios and compare them with expectations and digests.

    Args:
        scenarios: the scenarios
        digests: blessed digests keyed by scenario name

    Returns:
        one verdict per scenario
    """
    verdicts = []
    for scenario in scenarios:
        outcome = scenario.replay()
        if outcome.mismatches:
            status = "mismatch"
        elif scenario.name not in digests:
            status = "unblessed"
        elif digests[scenario.name] != outcome.digest:
            status = "changed"
        else:
            status = "ok"
        verdicts.append(
            Verification(scenario.name, status, outcome.digest, outcome.mismatches)
        )
        logger.debug("scenario replayed", scenario=scenario.name, status=status)
    return verdicts
