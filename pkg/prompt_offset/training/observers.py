# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

"""
observers.py

Observers receive training events from the trainer and accumulate
statistics. Events are dictionaries with a 'kind' key:

    session_start  session, stages executed before the first step
    step           session, step, sample_index (B), order (B x T or None), losses
    session_end    session

Observers buffer per-session records and write them when the session ends,
so a session interrupted before its checkpoint leaves no partial output.
"""

import csv
import logging
from abc import ABC, abstractmethod
from pathlib import Path

from prompt_offset import dump_zip_json

LOGGER = logging.getLogger(__name__)

SELECTION_COLUMNS = ("run_id", "session", "step", "sample_index", "order")


class Observer(ABC):
    """Observer base class"""

    savefile = ''
    statistic_labels = ()

    @abstractmethod
    def notify(self, statistics, event):
        """notify observer of a new training event and aggregate statistics"""

    def start(self, resume=False):
        """called once before training, `resume` keeps earlier output"""

    def speak(self):
        """Give a generic message"""
        LOGGER.info("Saving in %s", self.savefile)


def notify_all(observers, statistics, event):
    for obs in observers:
        obs.notify(statistics, event)


class SelectionLogObserver(Observer):
    """
    Records the ordered prompt indices chosen for every training sample.
    Rows are kept in `records` and appended to a CSV with columns
    run_id, session, step, sample_index, order (comma-joined).
    """

    savefile_template = "selections.csv"

    statistic_labels = ("selections_logged",)

    def __init__(self, run_id, processed_dir=None, savefile=None):
        self.run_id = run_id
        self.records = []
        self._pending = []
        self.savefile = None
        if processed_dir is not None:
            self.set_save_location(processed_dir, savefile)

    def set_save_location(self, processed_dir, savefile=None):
        self.processed_dir = Path(processed_dir)
        self.savefile = self.processed_dir / (savefile or self.savefile_template)

    def start(self, resume=False):
        if self.savefile is None:
            return
        if resume and self.savefile.exists():
            return
        with open(self.savefile, "w", encoding="utf-8", newline="") as fout:
            csv.DictWriter(fout, fieldnames=SELECTION_COLUMNS).writeheader()

    def notify(self, statistics, event):
        if event["kind"] == "step" and event.get("order") is not None:
            for sample_index, order in zip(event["sample_index"], event["order"]):
                row = {
                    "run_id": self.run_id,
                    "session": event["session"],
                    "step": event["step"],
                    "sample_index": sample_index,
                    "order": ",".join(str(i) for i in order),
                }
                self._pending.append(row)
                statistics["selections_logged"] = statistics.get("selections_logged", 0) + 1
        elif event["kind"] == "session_end":
            self.records.extend(self._pending)
            if self.savefile is not None and self._pending:
                with open(self.savefile, "a", encoding="utf-8", newline="") as fout:
                    csv.DictWriter(fout, fieldnames=SELECTION_COLUMNS).writerows(self._pending)
            self._pending = []

    def session_orders(self, session):
        """Selections of one session as lists of indices"""
        return [
            [int(i) for i in row["order"].split(",")]
            for row in self.records if row["session"] == session
        ]


def read_selection_log(path):
    """
    Read a selection CSV back into a dict session -> list of index lists

    Returns an empty dict for a log with a header only.
    """
    sessions = {}
    with open(path, "r", encoding="utf-8", newline="") as fin:
        for row in csv.DictReader(fin):
            order = [int(i) for i in row["order"].split(",") if i != ""]
            sessions.setdefault(int(row["session"]), []).append(order)
    return sessions


class TraceObserver(Observer):
    """
    Records the stages every training step executes, with its losses, as
    lz4-compressed JSON lines, one file per session, readable with
    `prompt_offset.load_zip_json`.
    """

    savefile_template = "trace-session-{}.jsonl.lz4"

    statistic_labels = ("steps_traced", "trace_bytes")

    def __init__(self, processed_dir=None):
        self.processed_dir = Path(processed_dir) if processed_dir is not None else None
        self.records = []
        self._pending = []

    def set_save_location(self, processed_dir):
        self.processed_dir = Path(processed_dir)

    @property
    def savefile(self):
        if self.processed_dir is None:
            return ''
        return self.processed_dir / self.savefile_template.format("*")

    def notify(self, statistics, event):
        if event["kind"] in ("session_start", "step"):
            record = {k: v for k, v in event.items() if k not in ("order", "sample_index")}
            self._pending.append(record)
            if event["kind"] == "step":
                statistics["steps_traced"] = statistics.get("steps_traced", 0) + 1
        elif event["kind"] == "session_end":
            self.records.extend(self._pending)
            if self.processed_dir is not None and self._pending:
                filename = self.processed_dir / self.savefile_template.format(event["session"])
                n_bytes = dump_zip_json(self._pending, filename)
                statistics["trace_bytes"] = statistics.get("trace_bytes", 0) + n_bytes
            self._pending = []
