"""Durable experiment state.

Records live under a store directory, one JSON document per experiment, so
a write only ever rewrites the record it changes. Scheduler history sits in
a single history.json next to them. Documents that cannot be read at load
time (bad JSON, wrong schema version) are moved into a quarantine/
subdirectory instead of blocking startup; each move is reported through
``startup_warnings``. Restarting the platform against the same directory
recovers the records; anything mid-flight when the process died is marked
failed on recovery.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from typing import Any, Optional


class StoreError(RuntimeError):
    pass


_UNSAFE = re.compile(r"[^-._a-zA-Z0-9]")


class ExperimentStore:
    VERSION = 1

    def __init__(self, path: Optional[str] = None) -> None:
        self.path = path
        self.startup_warnings: list[str] = []
        self._experiments: dict[str, dict[str, Any]] = {}
        self._history: dict[str, dict[str, Any]] = {}
        if path is None:
            return
        if os.path.isfile(path):
            raise StoreError(f"store path {path!r} is a file, expected a directory")
        os.makedirs(self._exp_dir, exist_ok=True)
        self._load()

    @property
    def _exp_dir(self) -> str:
        return os.path.join(self.path, "experiments")

    @property
    def _quarantine_dir(self) -> str:
        return os.path.join(self.path, "quarantine")

    @property
    def _history_path(self) -> str:
        return os.path.join(self.path, "history.json")

    # --- loading ----------------------------------------------------------

    def _load(self) -> None:
        for name in sorted(os.listdir(self._exp_dir)):
            if not name.endswith(".json"):
                continue
            full = os.path.join(self._exp_dir, name)
            try:
                record = self._read_document(full)
            except (OSError, ValueError) as exc:
                self._quarantine(full, str(exc))
                continue
            self._experiments[record["experiment_id"]] = record
        if os.path.exists(self._history_path):
            try:
                with open(self._history_path, "r", encoding="utf-8") as fh:
                    raw = json.load(fh)
                if raw.get("version") != self.VERSION:
                    raise ValueError(
                        f"unsupported store version {raw.get('version')!r}")
                self._history = dict(raw.get("entries", {}))
            except (OSError, ValueError) as exc:
                self._quarantine(self._history_path, str(exc))

    def _read_document(self, full: str) -> dict[str, Any]:
        with open(full, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("version") != self.VERSION:
            raise ValueError(f"unsupported store version {raw.get('version')!r}")
        record = raw.get("record")
        if not isinstance(record, dict) or "experiment_id" not in record:
            raise ValueError("document has no experiment record")
        return record

    def _quarantine(self, full: str, reason: str) -> None:
        os.makedirs(self._quarantine_dir, exist_ok=True)
        base = os.path.basename(full)
        dest = os.path.join(self._quarantine_dir, base)
        n = 1
        while os.path.exists(dest):
            dest = os.path.join(self._quarantine_dir, f"{base}.{n}")
            n += 1
        os.replace(full, dest)
        self.startup_warnings.append(f"quarantined {base}: {reason}")

    # --- writing ----------------------------------------------------------

    def _write_json(self, dest: str, payload: dict[str, Any]) -> None:
        directory = os.path.dirname(os.path.abspath(dest))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".store-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=1, sort_keys=True)
            os.replace(tmp, dest)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _record_path(self, experiment_id: str) -> str:
        return os.path.join(self._exp_dir, _UNSAFE.sub("_", experiment_id) + ".json")

    # --- experiments ------------------------------------------------------

    def put_experiment(self, record: dict[str, Any]) -> None:
        self._experiments[record["experiment_id"]] = record
        if self.path:
            self._write_json(self._record_path(record["experiment_id"]),
                             {"version": self.VERSION, "record": record})

    def get_experiment(self, experiment_id: str) -> Optional[dict[str, Any]]:
        return self._experiments.get(experiment_id)

    def experiments(self) -> list[dict[str, Any]]:
        return list(self._experiments.values())

    def non_terminal(self, terminal_states: set[str]) -> list[dict[str, Any]]:
        return [r for r in self._experiments.values()
                if r.get("state") not in terminal_states]

    # --- scheduler history ----------------------------------------------

    def put_history(self, key: str, entry: dict[str, Any]) -> None:
        self._history[key] = entry
        if self.path:
            self._write_json(self._history_path,
                             {"version": self.VERSION, "entries": self._history})

    def history(self) -> dict[str, dict[str, Any]]:
        return dict(self._history)
