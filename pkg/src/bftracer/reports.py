"""Deterministic output records: JSON-lines measurements and two-column
plot data.

Scientific records are byte-reproducible for a fixed config and seed, so
wall-clock timings and other volatile metadata go into a separate
``run_meta.json`` sidecar, never into the record stream.
"""

from __future__ import annotations

import json
import os
import platform
import time


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")


def write_columns(path, header_lines, rows) -> None:
    """Whitespace-separated numeric columns with ``#`` header lines."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for row in rows:
            fh.write(" ".join(_show(x) for x in row) + "\n")


def _show(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


class RunWriter:
    """Collects records and timings for one CLI run and writes them at the end."""

    def __init__(self, out_dir, config_hash: str):
        self.out_dir = out_dir
        self.config_hash = config_hash
        self.records: list[dict] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.monotonic()
        os.makedirs(out_dir, exist_ok=True)

    def add(self, record: dict) -> None:
        rec = dict(record)
        rec["config"] = self.config_hash
        self.records.append(rec)

    def time_block(self, key: str):
        writer = self

        class _Timer:
            def __enter__(self):
                self.start = time.monotonic()
                return self

            def __exit__(self, *exc):
                writer.timings[key] = writer.timings.get(key, 0.0) + (
                    time.monotonic() - self.start)
                return False

        return _Timer()

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def finish(self) -> None:
        write_jsonl(self.path("records.jsonl"), self.records)
        meta = {
            "config": self.config_hash,
            "wall_time_s": time.monotonic() - self._t0,
            "timings_s": self.timings,
            "python": platform.python_version(),
        }
        with open(self.path("run_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
