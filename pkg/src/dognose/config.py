"""JSON round-tripping of nested frozen dataclasses, plus dotted-path overrides."""
from __future__ import annotations

import dataclasses
import json
import typing
from enum import Enum
from pathlib import Path


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    return obj


def _strip_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def from_dict(cls, data):
    """Build ``cls`` from a plain dict; unknown keys are an error."""
    if not isinstance(data, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = _strip_optional(hints[name])
        if value is None:
            kwargs[name] = None
        elif dataclasses.is_dataclass(tp):
            kwargs[name] = from_dict(tp, value)
        elif isinstance(tp, type) and issubclass(tp, Enum):
            kwargs[name] = tp(value)
        elif tp is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{cls.__name__}.{name} must be a number")
            kwargs[name] = float(value)
        elif tp is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{cls.__name__}.{name} must be an integer")
            kwargs[name] = value
        elif tp is bool:
            if not isinstance(value, bool):
                raise ValueError(f"{cls.__name__}.{name} must be true or false")
            kwargs[name] = value
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(data: dict, path: str, value):
    """Set ``a.b.c`` inside nested dicts, refusing to invent new keys."""
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node or not isinstance(node[key], dict):
            raise KeyError(path)
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise KeyError(path)
    node[keys[-1]] = value


def get_path(obj, path: str):
    for key in path.split("."):
        obj = obj[key] if isinstance(obj, dict) else getattr(obj, key)
    return obj


def replace_path(obj, path: str, value):
    """Return a copy of a nested frozen dataclass with one leaf replaced."""
    head, _, rest = path.partition(".")
    if not dataclasses.is_dataclass(obj) or head not in {f.name for f in dataclasses.fields(obj)}:
        raise KeyError(path)
    if rest:
        value = replace_path(getattr(obj, head), rest, value)
    return dataclasses.replace(obj, **{head: value})


def apply_overrides(cls, data: dict, overrides):
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        key, sep, text = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        set_path(data, key.strip(), parse_value(text.strip()))
    return from_dict(cls, data)


def dumps(obj) -> str:
    return json.dumps(to_dict(obj), indent=2, sort_keys=True) + "\n"


def save(obj, path):
    Path(path).write_text(dumps(obj))


def load(cls, path):
    return from_dict(cls, json.loads(Path(path).read_text()))
