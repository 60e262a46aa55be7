"""Test the FastAPI endpoints"""

from fastapi.testclient import TestClient

from api.app import app

client = TestClient(app)

QUICK = {"G_schedule": [200, 500], "ramp_every": 2, "max_iter": 8, "stop_decimals": 2, "L_ref": 100, "threads": 1}


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_simulate():
    response = client.post("/simulate", json={"theta": [1.9, 1.8, 1.9, 0.9], "strata": 4, "per_stratum": 3, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["kind"] == "continuous"
    assert len(body["rows"]) == 12


def test_simulate_rejects_bad_theta():
    response = client.post("/simulate", json={"theta": [1.0, -1.0, 1.0, 1.0], "strata": 2, "per_stratum": 2})
    assert response.status_code == 400


def test_fit_round_trip():
    rows = client.post("/simulate", json={"theta": [1.9, 1.8, 1.9, 0.9], "strata": 5, "per_stratum": 4}).json()["rows"]
    response = client.post("/fit", json={"kind": "continuous", "rows": rows, "config": QUICK})
    assert response.status_code == 200
    report = response.json()
    assert set(report["theta_hat"]) == {"a", "b", "c", "d"}
    assert len(report["strata"]) == 5


def test_fit_all_zero_is_unprocessable():
    rows = [{"stratum": "A", "y": 0.0}, {"stratum": "B", "y": 0.0}]
    response = client.post("/fit", json={"rows": rows, "config": QUICK})
    assert response.status_code == 422


def test_fit_bad_config_is_bad_request():
    rows = [{"stratum": "A", "y": 1.0}]
    response = client.post("/fit", json={"rows": rows, "config": {"unknown": 1}})
    assert response.status_code == 400
