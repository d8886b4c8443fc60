"""Evaluation report container with lossless JSON round-tripping."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

METRIC_KEYS = ("si_snr_db", "stoi", "lsd_db")
# reserved so externally computed intrusive scores can be merged in
OPTIONAL_KEYS = ("pesq", "csig", "cbak", "covl")


@dataclass
class MetricReport:
    per_file: dict[str, dict[str, float]] = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def add(self, name: str, scores: dict[str, float]) -> None:
        unknown = set(scores) - set(METRIC_KEYS) - set(OPTIONAL_KEYS)
        if unknown:
            raise ValueError(f"unknown metric keys {sorted(unknown)}")
        self.per_file[name] = dict(scores)

    @property
    def clip_count(self) -> int:
        return len(self.per_file)

    def aggregates(self) -> dict[str, float]:
        out = {}
        for key in METRIC_KEYS + OPTIONAL_KEYS:
            vals = [s[key] for s in self.per_file.values() if key in s]
            if vals:
                out[key] = sum(vals) / len(vals)
        return out

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version,
                "clip_count": self.clip_count,
                "aggregates": self.aggregates(),
                "per_file": self.per_file,
                "config_echo": self.config_echo}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')}")
        return cls(per_file=d["per_file"], config_echo=d.get("config_echo", {}))
