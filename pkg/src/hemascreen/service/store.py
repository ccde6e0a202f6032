"""Durable state: an append-only JSONL event log plus content-addressed blobs.

Every piece of query state is a pure function of the event sequence, so
replaying the log after a restart reconstructs the service bit-exactly.
Image bytes and model bundles live outside the log, addressed by hash or
version from within events.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
import threading
from pathlib import Path


def utc_now() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


def parse_ts(value: str) -> datetime.datetime:
    return datetime.datetime.fromisoformat(value)


class EventStore:
    """Single-writer event log with replayed in-memory views."""

    def __init__(self, data_dir, clock=None):
        self.data_dir = Path(data_dir)
        self.blobs_dir = self.data_dir / "blobs"
        self.bundles_dir = self.data_dir / "bundles"
        for d in (self.data_dir, self.blobs_dir, self.bundles_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.events_path = self.data_dir / "events.jsonl"
        self.clock = clock or utc_now
        self._lock = threading.Lock()
        self._seq = 0

        self.patients: dict = {}
        self.captures: dict = {}      # pid -> region -> [capture dict]
        self.reports: dict = {}       # pid -> [report dict]
        self.screenings: dict = {}    # pid -> [screening dict]
        self.calibrations: dict = {}  # pid -> calibration dict
        self.training_queue: list = []
        self.active_bundle: dict | None = None  # {"version", "path"}

        if self.events_path.exists():
            with open(self.events_path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    event = json.loads(line)
                    self._seq = event["seq"]
                    self._apply(event)

    # ------------------------------------------------------------- writing

    def append(self, event_type: str, data: dict, ts: str | None = None) -> int:
        """Persist one event (fsynced) and fold it into the in-memory views."""
        with self._lock:
            self._seq += 1
            event = {
                "seq": self._seq,
                "ts": ts or self.clock().isoformat(),
                "type": event_type,
                "data": data,
            }
            # no sort_keys: replayed dicts must keep the insertion order the
            # live views were built with, so responses stay byte-identical
            line = json.dumps(event)
            with open(self.events_path, "a") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._apply(event)
            return event["seq"]

    def store_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.blobs_dir / digest
        if not path.exists():
            path.write_bytes(data)
        return digest

    def load_blob(self, digest: str) -> bytes:
        path = self.blobs_dir / digest
        if not path.exists():
            raise FileNotFoundError(f"blob {digest} missing")
        return path.read_bytes()

    def bundle_path(self, version: int) -> Path:
        return self.bundles_dir / f"v{version}.zip"

    # ------------------------------------------------------------- replay

    def _apply(self, event: dict) -> None:
        data = event["data"]
        kind = event["type"]
        if kind == "patient_created":
            self.patients[data["id"]] = dict(data)
        elif kind == "capture_ingested":
            regions = self.captures.setdefault(data["patient_id"], {})
            regions.setdefault(data["region"], []).append(
                {**data, "ts": event["ts"], "seq": event["seq"]}
            )
        elif kind == "report_ingested":
            self.reports.setdefault(data["patient_id"], []).append(
                {**data, "seq": event["seq"]}
            )
        elif kind == "screening_recorded":
            self.screenings.setdefault(data["patient_id"], []).append(
                {**data, "seq": event["seq"]}
            )
        elif kind == "calibration_updated":
            self.calibrations[data["patient_id"]] = dict(data)
        elif kind == "training_sample_queued":
            self.training_queue.append({**data, "seq": event["seq"]})
        elif kind == "bundle_swapped":
            self.active_bundle = {"version": data["version"], "path": data["path"]}
            if data.get("clear_queue"):
                self.training_queue = []
        elif kind in ("retrain_skipped", "retrain_rejected"):
            pass  # informational only
        else:
            raise ValueError(f"unknown event type {kind!r} at seq {event['seq']}")

    # ------------------------------------------------------------- queries

    def latest_captures(self, patient_id: str) -> dict:
        """Most recent capture per region."""
        out = {}
        for region, items in self.captures.get(patient_id, {}).items():
            out[region] = max(items, key=lambda c: c["seq"])
        return out
