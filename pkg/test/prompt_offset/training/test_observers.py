# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.

from prompt_offset import load_zip_json
from prompt_offset.training.observers import (
    SelectionLogObserver,
    TraceObserver,
    notify_all,
    read_selection_log,
)


def _step(session, step, orders):
    return {
        "kind": "step",
        "session": session,
        "phase": "session",
        "epoch": 0,
        "step": step,
        "stages": ["query", "sort"],
        "losses": {"ce": 1.0, "clustering": -0.1, "total": 0.9},
        "sample_index": list(range(len(orders))) if orders else [0],
        "order": orders,
    }


def test_selection_log_written_on_session_end(tmp_path):
    observer = SelectionLogObserver("run", processed_dir=tmp_path)
    observer.start()
    statistics = {}
    observer.notify(statistics, _step(1, 0, [[1, 0], [0, 1]]))
    assert read_selection_log(observer.savefile) == {}
    observer.notify(statistics, {"kind": "session_end", "session": 1})
    assert read_selection_log(observer.savefile) == {1: [[1, 0], [0, 1]]}
    assert observer.session_orders(1) == [[1, 0], [0, 1]]
    assert statistics["selections_logged"] == 2


def test_selection_log_ignores_baselines(tmp_path):
    observer = SelectionLogObserver("run", processed_dir=tmp_path)
    observer.start()
    notify_all([observer], {}, _step(0, 0, None))
    notify_all([observer], {}, {"kind": "session_end", "session": 0})
    assert read_selection_log(observer.savefile) == {}
    assert observer.records == []


def test_selection_log_resume_appends(tmp_path):
    first = SelectionLogObserver("run", processed_dir=tmp_path)
    first.start()
    notify_all([first], {}, _step(0, 0, [[0, 1]]))
    notify_all([first], {}, {"kind": "session_end", "session": 0})
    second = SelectionLogObserver("run", processed_dir=tmp_path)
    second.start(resume=True)
    notify_all([second], {}, _step(1, 0, [[1, 0]]))
    notify_all([second], {}, {"kind": "session_end", "session": 1})
    assert read_selection_log(tmp_path / "selections.csv") == {0: [[0, 1]], 1: [[1, 0]]}


def test_trace_files(tmp_path):
    observer = TraceObserver(processed_dir=tmp_path)
    statistics = {}
    notify_all([observer], statistics, {"kind": "session_start", "session": 0, "stages": ["pretrain"]})
    notify_all([observer], statistics, _step(0, 0, [[0, 1]]))
    notify_all([observer], statistics, {"kind": "session_end", "session": 0})
    records = list(load_zip_json(tmp_path / "trace-session-0.jsonl.lz4"))
    assert [r["kind"] for r in records] == ["session_start", "step"]
    assert "order" not in records[1]
    assert records[1]["losses"]["total"] == 0.9
    assert statistics["steps_traced"] == 1
    assert statistics["trace_bytes"] > 0
