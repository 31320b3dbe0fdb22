"""Pipeline configuration with flags > environment > config file precedence.

The config file is flat ``key = value`` text; keys mirror the CLI flag names
with dashes replaced by underscores.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

ENV_EMBED_URL = "ONTOPLACE_EMBED_URL"
ENV_LLM_URL = "ONTOPLACE_LLM_URL"
ENV_SCORER_URL = "ONTOPLACE_SCORER_URL"


def load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path} line {line_no}: expected key=value, got {line!r}")
            values[key.strip()] = value.strip()
    return values


@dataclass
class PipelineConfig:
    """Resolved settings for one CLI invocation."""

    ontology_dir: str | None = None
    dataset_path: str | None = None
    method: str = "lexical"
    k: int = 10
    embed_url: str | None = None
    llm_url: str | None = None
    scorer_url: str | None = None
    vocab_path: str | None = None
    parallelism: int = 1
    seed: int = 0
    file_values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError("k must be an even number >= 2")

    def require_endpoint(self, name: str) -> str:
        value = getattr(self, name)
        if not value:
            raise ValueError(f"method requires {name.replace('_', '-')} to be set")
        return value


def resolve(
    flag_value: str | None,
    env_var: str | None,
    file_values: dict[str, str],
    key: str,
    default: str | None = None,
) -> str | None:
    """Flags beat environment variables beat config-file entries."""
    if flag_value is not None:
        return flag_value
    if env_var:
        env = os.environ.get(env_var)
        if env:
            return env
    if key in file_values:
        return file_values[key]
    return default
