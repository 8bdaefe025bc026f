import json

import pytest

from domac.audit import audit_command, close_run_logging, configure_run_logging, log_event


def test_log_event_payload():
    payload = log_event("evaluate", {"update_step": 3})
    assert payload["action"] == "evaluate" and payload["status"] == "success"
    assert payload["details"] == {"update_step": 3}


def test_run_log_is_json_per_line(tmp_path):
    configure_run_logging(str(tmp_path))
    log_event("train_start", {"variant": "DOMAC"})
    log_event("checkpoint", {"path": "x"}, status="pending")
    close_run_logging()
    lines = (tmp_path / "logs" / "train.log").read_text().splitlines()
    assert len(lines) == 2
    prefix, _, body = lines[0].partition(" - INFO - ")
    assert prefix and json.loads(body)["details"] == {"variant": "DOMAC"}
    assert json.loads(lines[1].partition(" - INFO - ")[2])["status"] == "pending"


def test_audit_command_logs_outcome(monkeypatch):
    events = []
    monkeypatch.setattr("domac.audit.log_event",
                        lambda action, details=None, status="success": events.append((action, status)))

    class Args:
        pass

    assert audit_command("train")(lambda args: 0)(Args()) == 0
    assert events == [("train - Started", "pending"), ("train", "success")]
    events.clear()
    assert audit_command("eval")(lambda args: 2)(Args()) == 2
    assert events[-1] == ("eval", "failed")
    events.clear()

    def boom(args):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        audit_command("inspect")(boom)(Args())
    assert events == [("inspect - Started", "pending"), ("inspect", "error")]
