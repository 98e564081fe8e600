from __future__ import annotations

import json
from typing import Optional


class Config(dict):
    @classmethod
    def from_json(cls, path: str, key: Optional[str] = None) -> Config:
        """Read a JSON config file, optionally narrowing it to one top-level section.

        A missing section yields an empty config so that callers can always
        merge it with their defaults.
        """
        with open(path) as f:
            config = json.load(f)
            if key:
                config = config.get(key, {})
            return cls(**config)
