"""
Environment settings and experiment config loading.
"""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.core.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_ROOT = "runs"
DEFAULT_LOG_LEVEL = "INFO"


def load_settings() -> Dict[str, str]:
    """Load settings from the environment, reading a local .env file first."""
    load_dotenv()
    return {
        "SIMCL_OUTPUT_ROOT": os.getenv("SIMCL_OUTPUT_ROOT", DEFAULT_OUTPUT_ROOT),
        "SIMCL_LOG_LEVEL": os.getenv("SIMCL_LOG_LEVEL", DEFAULT_LOG_LEVEL),
    }


def get_setting(name: str) -> str:
    """Get one setting by name."""
    settings = load_settings()
    if name not in settings:
        raise ConfigError(f"Unknown setting {name}.")
    return settings[name]


def resolve_output_dir(cfg: ExperimentConfig, override: Optional[str] = None) -> Path:
    """CLI override, then the config file, then SIMCL_OUTPUT_ROOT/<name>."""
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(get_setting("SIMCL_OUTPUT_ROOT")) / cfg.name


def _key_lines(text: str) -> Dict[Tuple[Any, ...], int]:
    """Map every key path in a YAML document to its 1-based line number."""
    lines: Dict[Tuple[Any, ...], int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node: Any, path: Tuple[Any, ...]) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = path + (key_node.value,)
                lines[child] = key_node.start_mark.line + 1
                walk(value_node, child)
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                child = path + (index,)
                lines[child] = item.start_mark.line + 1
                walk(item, child)

    if root is not None:
        walk(root, ())
    return lines


def _line_for(lines: Dict[Tuple[Any, ...], int], loc: Sequence[Any]) -> Optional[int]:
    # pydantic inserts discriminator tags into error locations; skip parts absent from the file
    path: Tuple[Any, ...] = ()
    line = None
    for part in loc:
        candidate = path + (part,)
        if candidate in lines:
            path = candidate
            line = lines[candidate]
    return line


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse and validate an experiment config from YAML text."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"YAML syntax error: {problem}", line=mark.line + 1 if mark else None) from e

    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        first = errors[0]
        loc = tuple(first["loc"])
        key = ".".join(str(part) for part in loc)
        message = "unknown key" if first["type"] == "extra_forbidden" else first["msg"]
        if len(errors) > 1:
            message += f" (+{len(errors) - 1} more)"
        raise ConfigError(message, key=key, line=_line_for(_key_lines(text), loc)) from e


def load_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    cfg = parse_config_text(text)
    logger.info(f"Loaded {cfg.kind} config '{cfg.name}' from {path}")
    return cfg


def normalize_config(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Plain-data form with every default filled in."""
    return cfg.model_dump(mode="json")


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize a config back to YAML; parse(dump(cfg)) == cfg."""
    return yaml.safe_dump(normalize_config(cfg), sort_keys=True, default_flow_style=False)


def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Short hash of the run-relevant config (output location and seed list excluded)."""
    data = normalize_config(cfg)
    data.pop("output_dir", None)
    data.pop("seeds", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
