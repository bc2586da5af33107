import json

import pytest

from src import cli, run_store
from src.error_kinds import RECORD_CORRUPT, RECORD_MISSING, RECORD_VERSION, LabError
from src.run_store import (
    RECORD_FILE,
    RUNS_DIR_ENV,
    SCHEMA_VERSION,
    accuracy_frame,
    load_record,
    new_run_dir,
    weights_frame,
    write_record,
)


def _record():
    acc = {"kind": "natural", "per_class": [0.9, 0.5], "average": 0.7, "worst": 0.5, "worst_class": 1}
    return {
        "seeds": [
            {
                "seed": 0,
                "methods": {
                    "uniform": {
                        "status": "ok",
                        "accuracies": {"natural": acc},
                        "train": {"weights": [[1.0, 0.0, 0.0]] * 2},
                    },
                },
            }
        ]
    }


def _write_raw(run_dir, data):
    (run_dir / RECORD_FILE).write_text(json.dumps(data), encoding="utf-8")


def test_new_run_dir_picks_first_free_slot(tmp_path):
    a = new_run_dir("exp", tmp_path)
    b = new_run_dir("exp", tmp_path)
    assert a.name == "exp-001"
    assert b.name == "exp-002"


def test_runs_root_follows_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(RUNS_DIR_ENV, str(tmp_path / "elsewhere"))
    assert run_store.runs_root() == tmp_path / "elsewhere"
    monkeypatch.delenv(RUNS_DIR_ENV)
    assert str(run_store.runs_root()) == "runs"


def test_record_round_trip_stamps_schema_version(tmp_path):
    write_record(tmp_path, _record())
    back = load_record(tmp_path)
    assert back["schema_version"] == SCHEMA_VERSION
    assert back["seeds"] == _record()["seeds"]
    assert not list(tmp_path.glob("*.tmp"))


def test_load_record_errors(tmp_path):
    with pytest.raises(LabError) as e:
        load_record(tmp_path)
    assert e.value.kind == RECORD_MISSING

    (tmp_path / RECORD_FILE).write_text("{broken", encoding="utf-8")
    with pytest.raises(LabError) as e:
        load_record(tmp_path)
    assert e.value.kind == RECORD_CORRUPT

    _write_raw(tmp_path, {"schema_version": "9.0"})
    with pytest.raises(LabError) as e:
        load_record(tmp_path)
    assert e.value.kind == RECORD_VERSION


@pytest.mark.parametrize(
    "content",
    [
        {},
        {"seeds": []},
        {"seeds": {"0": {}}},
        {"seeds": [{"methods": {}}]},
        {"seeds": [{"seed": 0}]},
        {"seeds": [{"seed": 0, "methods": {}}]},
        {"seeds": [{"seed": 0, "methods": {"uniform": {}}}]},
    ],
)
def test_records_without_content_are_corrupt(tmp_path, content):
    _write_raw(tmp_path, {"schema_version": SCHEMA_VERSION, **content})
    with pytest.raises(LabError) as e:
        load_record(tmp_path)
    assert e.value.kind == RECORD_CORRUPT


def test_report_and_audit_reject_a_gutted_record(tmp_path, capsys):
    _write_raw(tmp_path, {"schema_version": SCHEMA_VERSION})
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_INPUT
    assert not (tmp_path / "report.md").exists()

    _write_raw(tmp_path, {"schema_version": SCHEMA_VERSION, "seeds": [{"seed": 0}]})
    assert cli.main(["audit", str(tmp_path)]) == cli.EXIT_INPUT
    assert "record_corrupt" in capsys.readouterr().err


def test_tabular_views():
    acc = accuracy_frame(_record())
    assert list(acc.columns) == ["seed", "method", "kind", "class_0", "class_1", "average", "worst"]
    assert acc.iloc[0]["class_1"] == 0.5
    weights = weights_frame(_record())
    assert weights["epoch"].tolist() == [1, 2]
    assert weights["w_0"].tolist() == [1.0, 1.0]
