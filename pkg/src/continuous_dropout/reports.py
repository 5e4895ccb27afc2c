"""Serialization shared by all report dataclasses."""

import enum
import json
import os
from dataclasses import fields, is_dataclass
from typing import Any, Optional

import numpy as np
import pandas as pd
import toml

SCHEMA_VERSION = 1


def _plain(value: Any) -> Any:
    """Convert numpy values, enums and nested dataclasses into plain Python."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, enum.Enum):
        return value.value
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class ReportMixin:
    """Mixin for dataclass reports persisted as JSON or TOML."""

    schema_name: str = "report"

    def to_dict(self) -> dict:
        data = _plain(self)
        data["schema"] = self.schema_name
        data["schema_version"] = SCHEMA_VERSION
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str) -> None:
        """Serialize the report to file.

        If the file extension is ``.json`` the report is stored as JSON,
        otherwise it is stored in ``toml`` format.
        """
        ext = os.path.splitext(path)[1].lower()
        with open(path, "w", encoding="utf-8") as f:
            if ext == ".json":
                json.dump(self.to_dict(), f, indent=2)
            else:
                toml.dump(self.to_dict(), f)

    @classmethod
    def from_dict(cls, data: dict):
        data = {k: v for k, v in data.items() if k not in ("schema", "schema_version")}
        return cls(**data)

    @classmethod
    def load(cls, path: str):
        """Load a report written by :meth:`save`."""
        ext = os.path.splitext(path)[1].lower()
        with open(path, "r", encoding="utf-8") as f:
            if ext == ".json":
                data = json.load(f)
            else:
                data = toml.load(f)
        return cls.from_dict(data)


def save_records(records: list, path: str) -> None:
    """Write a list of reports as one JSON document."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "records": [r.to_dict() if isinstance(r, ReportMixin) else _plain(r) for r in records],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, encoding="utf-8")


def optional_array(value: Optional[list]) -> Optional[np.ndarray]:
    return None if value is None else np.asarray(value, dtype=float)
