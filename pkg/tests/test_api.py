def scenario_payload(scenario_factory, **overrides):
    return scenario_factory(**overrides).model_dump(mode="json")


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "OTFS-ISAC" in response.json()["message"]


def test_run_simulation(client, scenario_factory):
    response = client.post("/api/v1/simulation/run", json=scenario_payload(scenario_factory, trials=1))
    assert response.status_code == 200
    data = response.json()
    assert list(data["schemes"]) == ["ideal", "proposed", "pilot"]
    assert data["seed"] == 11
    assert [point["snr_db"] for point in data["schemes"]["ideal"]["points"]] == [0.0, 6.0]


def test_run_simulation_rejects_unknown_fields(client, scenario_factory):
    payload = scenario_payload(scenario_factory)
    payload["frame_size"] = 12
    response = client.post("/api/v1/simulation/run", json=payload)
    assert response.status_code == 422


def test_run_simulation_domain_error(client, scenario_factory):
    response = client.post("/api/v1/simulation/run", json=scenario_payload(scenario_factory, pilot_max_delay=10))
    assert response.status_code == 400
    assert "pilot guard region" in response.json()["detail"]


def test_sensing_report(client, scenario_factory):
    response = client.post("/api/v1/sensing/report?snr_db=15", json=scenario_payload(scenario_factory))
    assert response.status_code == 200
    data = response.json()
    assert data["snr_db"] == 15.0
    assert len(data["targets"]) == 1
    assert data["targets"][0]["l_hat"] == data["targets"][0]["l_true"]


def test_design_without_sensing_pressure(client, scenario_factory):
    payload = {"scenario": scenario_payload(scenario_factory), "t_crb": 1e12}
    response = client.post("/api/v1/design/allocate", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "feasible"
    assert data["blend"] == 0.0
    assert len(data["power_allocation"]) == 16 * 8


def test_design_infeasible_threshold(client, scenario_factory):
    payload = {"scenario": scenario_payload(scenario_factory), "t_crb": 1e-30}
    response = client.post("/api/v1/design/allocate", json=payload)
    assert response.status_code == 400
    assert "T_CRB infeasible" in response.json()["detail"]


def test_design_requires_positive_threshold(client, scenario_factory):
    payload = {"scenario": scenario_payload(scenario_factory), "t_crb": 0}
    response = client.post("/api/v1/design/allocate", json=payload)
    assert response.status_code == 422
