"""HTTP API tests through the FastAPI TestClient."""

import time

from domain.harness import FuzzInput, TriggerCall, TriggerKind, prologue_for
from domain.astgen import deserialize_ast

LEAKY = """\
program SOCKET_FILTER
map 0 RINGBUF key=0 value=0 entries=4096 flags=0x0
call v0 = ringbuf_reserve(&map_0, 16, 0)
if v0 != null {
  call ringbuf_discard(v0, 0)
}
return 0
"""

UNBALANCED = """\
program SOCKET_FILTER
map 0 RINGBUF key=0 value=0 entries=4096 flags=0x0
call v0 = ringbuf_reserve(&map_0, 16, 0)
return 0
"""


class TestCatalogApi:
    def test_program_types(self, client) -> None:
        resp = client.get("/api/catalog/program-types")
        assert resp.status_code == 200
        names = {item["name"] for item in resp.json()["data"]}
        assert {"SOCKET_FILTER", "KPROBE", "XDP"} <= names

    def test_helpers_filtered_by_type(self, client) -> None:
        everything = client.get("/api/catalog/helpers").json()["data"]
        xdp = client.get("/api/catalog/helpers", params={"prog_type": "xdp"}).json()["data"]
        assert 0 < len(xdp) < len(everything)

    def test_map_constraints(self, client) -> None:
        data = client.get("/api/catalog/maps/ringbuf").json()["data"]
        assert data["key_size"]["choices"] == [0]
        assert data["max_entries"]["power_of_two"]

    def test_unknown_map_type(self, client) -> None:
        resp = client.get("/api/catalog/maps/bogus")
        assert resp.status_code == 404
        assert resp.json()["error"] == "HTTPException"


class TestProgramsApi:
    def test_generate(self, client) -> None:
        resp = client.post("/api/programs/generate", json={"seed": 7, "prog_type": "socket_filter"})
        data = resp.json()["data"]
        assert data["prog_type"] == "SOCKET_FILTER"
        assert data["ast"].startswith("program SOCKET_FILTER")
        assert data["insns"] > 0
        again = client.post("/api/programs/generate", json={"seed": 7, "prog_type": "socket_filter"}).json()["data"]
        assert again["ast"] == data["ast"]

    def test_generate_unknown_type(self, client) -> None:
        resp = client.post("/api/programs/generate", json={"prog_type": "nope"})
        assert resp.status_code == 400

    def test_verify_accepts(self, client) -> None:
        resp = client.post("/api/programs/verify", json={"ast": LEAKY})
        assert resp.status_code == 200
        assert resp.json()["data"]["paths_explored"] >= 1

    def test_verify_rejects_with_rule_id(self, client) -> None:
        resp = client.post("/api/programs/verify", json={"ast": UNBALANCED})
        assert resp.status_code == 400
        body = resp.json()
        assert body["error"] == "VerifierError"
        assert body["detail"]["rule_id"] == "ref_leak"

    def test_parse_error(self, client) -> None:
        resp = client.post("/api/programs/verify", json={"ast": "program SOCKET_FILTER\nwhat\n"})
        assert resp.status_code == 400
        assert resp.json()["detail"]["line"] == 2

    def test_missing_body_field(self, client) -> None:
        resp = client.post("/api/programs/verify", json={})
        assert resp.status_code == 422


class TestRuntimeApi:
    def test_run_clean(self, client) -> None:
        resp = client.post("/api/runtime/run", json={"ast": LEAKY, "payload_hex": "00" * 32})
        data = resp.json()["data"]
        assert data["return_value"] == 0
        assert data["oracle_findings"] == []

    def test_run_with_seeded_bug(self, client) -> None:
        resp = client.post("/api/runtime/run", json={"ast": LEAKY, "payload_hex": "00" * 32, "seed_bugs": "ringbuf_leak"})
        findings = resp.json()["data"]["oracle_findings"]
        assert [f["oracle"] for f in findings] == ["ref_leak_runtime"]

    def test_bad_seed_bug_name(self, client) -> None:
        resp = client.post("/api/runtime/run", json={"ast": LEAKY, "seed_bugs": "nope"})
        assert resp.status_code in (400, 422)


class TestFuzzApi:
    def test_replay(self, client) -> None:
        ast = deserialize_ast(LEAKY)
        inp = FuzzInput(ast, prologue_for(ast), [TriggerCall(TriggerKind.TEST_RUN, b"\x00" * 32)])
        resp = client.post("/api/fuzz/replay", json={"input": inp.to_dict(), "seed_bugs": "ringbuf_leak"})
        data = resp.json()["data"]
        assert data["loaded"] and data["executed"]
        assert [b["oracle"] for b in data["bugs"]] == ["ref_leak_runtime"]
        assert data["calls"][0]["call"] == "map_create[0]"

    def test_session_runs_in_queue(self, client, tmp_path) -> None:
        cfg = {"seed": 1, "budget": "20", "scheduler": {"batch_size": 10}, "corpus_dir": str(tmp_path / "corpus")}
        resp = client.post("/api/fuzz/sessions", json=cfg)
        assert resp.json()["msg"] == "queued"
        task_id = resp.json()["data"]["task_id"]
        deadline = time.monotonic() + 60
        task = {}
        while time.monotonic() < deadline:
            task = client.get(f"/api/tasks/queue/{task_id}").json()["data"]
            if task["status"] in ("success", "failed"):
                break
            time.sleep(0.05)
        assert task["status"] == "success", task.get("error")
        assert "iterations        20" in task["result"]["report"]
        assert task["progress"]["executions"] >= 0
        assert (tmp_path / "corpus" / "manifest.json").exists()

    def test_bad_budget(self, client) -> None:
        resp = client.post("/api/fuzz/sessions", json={"budget": "10m"})
        assert resp.status_code == 422


class TestTasksApi:
    def test_unknown_task(self, client) -> None:
        resp = client.get("/api/tasks/queue/missing")
        assert resp.status_code == 404

    def test_queue_settings(self, client) -> None:
        resp = client.post("/api/tasks/queue/settings", json={"concurrency": 2})
        assert resp.json()["data"]["concurrency"] == 2
        assert client.get("/api/tasks/queue/settings").json()["data"]["active_workers"] == 2


class TestConfigApi:
    def test_config(self, client) -> None:
        data = client.get("/api/config/").json()["data"]
        assert data["version"].startswith("v")
        assert data["settings"]["workers"] >= 1
