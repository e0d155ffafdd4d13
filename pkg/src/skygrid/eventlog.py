"""Structured JSONL event logs for simulation runs.

One JSON object per line. The first record is a header that pins the scenario
hash, master seed, timestep, grid geometry, roster, and corridor layout, so a
log is self-describing and replay-comparable. Tick records follow in
non-decreasing tick order, and a final result record summarizes the run.

Serialization uses sorted keys and repr-exact floats, so identical runs
produce byte-identical logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Union

from .errors import EmptyLog, InvalidScenario

LOG_VERSION = 1


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


@dataclass
class EventLogWriter:
    """Appends records to a JSONL stream, enforcing header-first order."""

    stream: IO[str]
    _wrote_header: bool = field(default=False, init=False)
    _last_tick: int = field(default=-1, init=False)

    def write_header(self, header: dict) -> None:
        if self._wrote_header:
            raise ValueError("header already written")
        record = {"type": "header", "version": LOG_VERSION, **header}
        self.stream.write(_dump(record) + "\n")
        self._wrote_header = True

    def write_tick(self, tick_record: dict) -> None:
        if not self._wrote_header:
            raise ValueError("header must be written before tick records")
        tick = tick_record["tick"]
        if tick < self._last_tick:
            raise ValueError(f"tick {tick} out of order after {self._last_tick}")
        self._last_tick = tick
        self.stream.write(_dump({"type": "tick", **tick_record}) + "\n")

    def write_result(self, result: dict) -> None:
        if not self._wrote_header:
            raise ValueError("header must be written before the result record")
        self.stream.write(_dump({"type": "result", **result}) + "\n")


def read_event_log(source: Union[str, Iterable[str]]) -> list[dict]:
    """Parse a JSONL event log from a path or an iterable of lines.

    Raises EmptyLog when the source has no records, InvalidScenario when a
    line is not valid JSON or the first record is not a header.
    """
    if isinstance(source, str):
        with open(source) as fh:
            lines = fh.readlines()
    else:
        lines = list(source)
    records = []
    for n, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise InvalidScenario(f"event log line {n + 1} is not valid JSON: "
                                  f"{err}") from err
    if not records:
        raise EmptyLog("event log has no records")
    if records[0].get("type") != "header":
        raise InvalidScenario("event log does not start with a header record")
    return records


def iter_ticks(records: list[dict]) -> Iterator[dict]:
    return (r for r in records if r.get("type") == "tick")


def log_header(records: list[dict]) -> dict:
    return records[0]


def log_result(records: list[dict]) -> Optional[dict]:
    for record in reversed(records):
        if record.get("type") == "result":
            return record
    return None
