import json
import os

import pytest

import offpath

SRC = os.environ.get("OFFPATH_SOURCE_DIR", os.path.join(os.path.dirname(__file__), "..", ".."))
SCENARIOS = os.path.join(SRC, "scenarios")


def test_coremelt_scenario_runs():
    s = offpath.load_scenario(os.path.join(SCENARIOS, "coremelt10.scn"))
    s.set("cm_simulate", "off")
    r = offpath.run(s)
    assert len(r.runs) == 1
    ev = r.runs[0].phase("coremelt_evaluate")
    assert ev.success
    assert ev.metric("disconnected_pairs") == 4


def test_reports_are_deterministic():
    s = offpath.parse_scenario("preset = fig7\nattack = ack_storm\nseed = 2\nduration_s = 1\nrepeat = 2\n")
    a, b = offpath.run(s), offpath.run(s)
    assert a.to_csv() == b.to_csv()
    doc = json.loads(a.to_json())
    assert [run["seed"] for run in doc["runs"]] == [2, 3]
    assert a.to_csv().splitlines()[0] == (
        "scenario,seed,attack,phase,success,virtual_ms,attacker_bytes,metric_name,metric_value"
    )


def test_config_errors_surface_as_value_errors():
    with pytest.raises(offpath.ConfigError):
        offpath.parse_scenario("preset = port\n")
    with pytest.raises(ValueError, match=":3:"):
        offpath.parse_scenario("preset = port\nseed = 1\nwhat = 2\n")


def test_classify():
    assert offpath.classify(0.0, 1.0) == "blocked"
    assert offpath.classify(1.0, 0.5) == "degraded"
    assert offpath.classify(1.0, 1.0) == "unaffected"
