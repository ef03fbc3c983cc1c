"""Experiment configuration: defaults, KEY=VALUE files and command-line flags.

Config files follow the .env convention:

    # outage vs key rate at Rc = 2
    r0 = 4, 6, 7, 8
    rc = 2
    snr-db = 30

Keys are case-insensitive and ``-`` / ``_`` are interchangeable; list values
are comma-separated. A flag beats the file, the file beats the default.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, NamedTuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

# Run-local keys that never change the numbers written.
UNRECORDED = ("out", "trace", "workers")

COMMANDS = ("capacity", "outage", "simulate", "fec", "replay")
FORMATS = ("csv", "summary", "parquet")


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def _int(text: str) -> int:
    return int(text, 0)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _list(item: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        values = [item(part.strip()) for part in text.split(",") if part.strip()]
        if not values:
            raise ValueError("empty list")
        return values

    return parse


def _optional(item: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str) -> Any:
        return None if text.strip().lower() in ("", "none", "auto") else item(text)

    return parse


def _seed(text: str) -> int:
    value = _int(text)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


def _positive_int(text: str) -> int:
    value = _int(text)
    if value < 1:
        raise ValueError(f"must be >= 1, got {value}")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return value

    return parse


class Field(NamedTuple):
    parse: Callable[[str], Any]
    default: Any


COMMON = {
    "seed": Field(_seed, 0),
    "out": Field(_optional(str), None),
    "format": Field(_optional(_choice(*FORMATS)), None),
    "workers": Field(_positive_int, 1),
}

GAINS = {
    "mean_gain_bob": Field(_float, 1.0),
    "mean_gain_eve": Field(_float, 1.0),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "capacity": {
        **GAINS,
        "snr_db": Field(_list(_float), [float(x) for x in range(0, 45, 5)]),
        "rc": Field(_list(_float), [0.0, 3.0, 7.0]),
        "r0_max": Field(_float, 25.0),
        "r0_points": Field(_positive_int, 500),
        "power_points": Field(_positive_int, 16),
    },
    "outage": {
        **GAINS,
        "r0": Field(_list(_float), [4.0, 6.0, 7.0, 8.0]),
        "rc": Field(_list(_float), [2.0]),
        "snr_db": Field(_float, 30.0),
        "target_pout": Field(_float, 1e-6),
        "k_max": Field(_positive_int, 100_000),
    },
    "simulate": {
        **GAINS,
        "r0": Field(_float, 4.0),
        "rc": Field(_float, 2.0),
        "snr_db": Field(_float, 30.0),
        "k": Field(_positive_int, 10),
        "payload_bits": Field(_positive_int, 128),
        "exchanges": Field(_positive_int, 10_000),
        "max_frames": Field(_optional(_positive_int), None),
        "replace_on_nack": Field(_bool, True),
        "trace": Field(_optional(str), None),
        "trace_exchanges": Field(_positive_int, 10),
    },
    "fec": {
        "schemes": Field(
            _list(str),
            [
                "uncoded-bpsk-240", "coded-bpsk-240", "coded-qpsk-240",
                "uncoded-bpsk-480", "coded-bpsk-480", "coded-qpsk-480",
            ],
        ),
        "snr_db": Field(_list(_float), [float(x) for x in range(-10, 42, 2)]),
        "trials": Field(_positive_int, 10_000),
        "target_pout": Field(_float, 1e-10),
        "r0": Field(_optional(_float), None),
        "puncture": Field(_choice("rate-1/2", "rate-2/3", "rate-3/4"), "rate-1/2"),
        "genie_budget": Field(_int, 50),
        "genie_mode": Field(_choice("post", "pre"), "post"),
        "hard_decision": Field(_bool, False),
    },
    "replay": {
        "trace": Field(_optional(str), None),
    },
}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Raw KEY=VALUE pairs with normalized keys; values are left unparsed."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected KEY=VALUE, got {line!r}")
            key, value = line.split("=", 1)
            values[normalize_key(key)] = value.strip()
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved parameters for one subcommand run."""

    command: str
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def meta(self) -> dict[str, Any]:
        """JSON-ready record of everything that determines the output."""
        keys = sorted(k for k in self.values if k not in UNRECORDED)
        return {"command": self.command, **{k: self.values[k] for k in keys}}


def schema(command: str) -> dict[str, Field]:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    return {**COMMON, **SCHEMAS[command]}


def resolve(
    command: str,
    flags: dict[str, str | None],
    file_values: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Merge defaults, config file and flags (in rising priority) and parse."""
    fields = schema(command)
    file_values = file_values or {}
    unknown = sorted(set(file_values) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")

    values: dict[str, Any] = {}
    for key, fld in fields.items():
        raw = flags.get(key)
        source = "flag"
        if raw is None:
            raw = file_values.get(key)
            source = "config"
        if raw is None:
            values[key] = fld.default
            continue
        try:
            values[key] = fld.parse(str(raw))
        except ValueError as exc:
            raise ConfigError(f"{key} ({source}): {exc}") from None
    logger.debug("resolved %s config: %s", command, values)
    return ExperimentConfig(command, values)
