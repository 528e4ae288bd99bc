from fastapi.testclient import TestClient

from backend.main import app

client = TestClient(app)


def test_health():
    assert client.get("/api/health").json() == {"status": "ok"}


def test_simulate_endpoint():
    response = client.post("/api/simulate", json={"n": 80, "setting": "S2", "seed": 4})
    body = response.json()
    assert body["success"] is True
    assert body["n"] == 80
    assert body["setting"] == "S2"
    assert 0.0 <= body["treated_share"] <= 1.0


def test_simulate_endpoint_validates_body():
    assert client.post("/api/simulate", json={"n": 0}).status_code == 422


def test_graph_upload():
    text = "n=4 radius=none\n0 1\n1 2\n"
    response = client.post("/api/graph/upload", files={"file": ("g.edges", text, "text/plain")})
    body = response.json()
    assert body["success"] is True
    assert (body["n"], body["edges"], body["isolated"]) == (4, 2, 1)
    assert (body["min_degree"], body["max_degree"]) == (0, 2)


def test_graph_upload_rejects_bad_files():
    body = client.post("/api/graph/upload",
                       files={"file": ("g.edges", "n=2\n0 5\n", "text/plain")}).json()
    assert "error" in body
    body = client.post("/api/graph/upload",
                       files={"file": ("g.bin", b"\xff\xfe\x00", "application/octet-stream")}).json()
    assert "error" in body


def test_validity_endpoint():
    body = client.post("/api/test-validity",
                       json={"setting": "S1", "n": 80, "epochs": 10, "seed": 1}).json()
    assert body["success"] is True
    record = body["record"]
    assert record["setting"] == "S1" and record["n"] == 80
    assert record.get("p_value") is None or 0.0 <= record["p_value"] <= 1.0


def test_direct_effect_endpoint_rejects_unknown_method():
    body = client.post("/api/estimate-direct", json={"n": 50, "method": "tmle"}).json()
    assert "error" in body


def test_oversized_graphs_are_refused():
    text = "n=1000000000000 radius=none\n0 1\n"
    body = client.post("/api/graph/upload",
                       files={"file": ("g.edges", text, "text/plain")}).json()
    assert "error" in body
    body = client.post("/api/simulate", json={"n": 10 ** 9, "setting": "S1"}).json()
    assert "error" in body
