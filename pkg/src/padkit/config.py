"""Layered configuration: defaults < config file < environment < command-line overrides."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from .training import ConfigError, TrainConfig

ENV_PREFIX = "PADKIT_"


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_value(text: str) -> Any:
    """YAML scalar/collection parsing, so ``0.5``, ``true``, ``[1, 2]`` and ``null`` work."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def set_dotted(tree: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        child = node.get(p)
        if child is None:
            child = node[p] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a mapping")
        node = child
    node[parts[-1]] = value


def parse_overrides(items: Iterable[str]) -> list[tuple[str, Any]]:
    out = []
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} must look like key=value")
        out.append((key.strip(), parse_value(value)))
    return out


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> list[tuple[str, Any]]:
    """``PADKIT_MODEL__ARCHITECTURE=pixbis`` sets ``model.architecture``."""
    environ = os.environ if environ is None else environ
    out = []
    for name, value in sorted(environ.items()):
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((key, parse_value(value)))
    return out


def resolve(defaults: Mapping, file_tree: Optional[Mapping] = None, env: Iterable[tuple[str, Any]] = (),
            overrides: Iterable[tuple[str, Any]] = ()) -> dict:
    """Merge the layers; later layers win key by key."""
    tree = copy.deepcopy(dict(defaults))

    def merge(dst, src):
        for k, v in src.items():
            if isinstance(v, Mapping) and isinstance(dst.get(k), dict):
                merge(dst[k], v)
            else:
                dst[k] = copy.deepcopy(v)

    if file_tree:
        merge(tree, file_tree)
    for key, value in env:
        set_dotted(tree, key, value)
    for key, value in overrides:
        set_dotted(tree, key, value)
    return tree


def default_tree() -> dict:
    return TrainConfig().to_dict()


def build_train_config(config_path=None, overrides: Iterable[str] = (), environ=None,
                       extra_keys: Iterable[str] = ()) -> tuple[TrainConfig, dict]:
    """Resolve all layers into a TrainConfig.

    Keys named in ``extra_keys`` (e.g. ``protocols``) are split off and
    returned separately instead of being validated as TrainConfig fields.
    """
    file_tree = load_config_file(config_path) if config_path else {}
    tree = resolve(default_tree(), file_tree, env_overrides(environ), parse_overrides(overrides))
    extras = {k: tree.pop(k) for k in list(extra_keys) if k in tree}
    try:
        cfg = TrainConfig.from_dict(tree)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg, extras
