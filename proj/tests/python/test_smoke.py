import json
import os
from pathlib import Path

import numpy as np
import pytest

import mflb

SOURCE = Path(os.environ.get("MFLB_SOURCE_DIR", Path(__file__).resolve().parents[2]))
EXAMPLE = SOURCE / "scenarios" / "example.json"


def test_fgn_and_mfdfa():
    x = np.asarray(mflb.gen_fgn(0.7, 1 << 14, seed=3))
    assert x.shape == (1 << 14,)
    spec = mflb.mfdfa(x)
    assert abs(spec["H"] - 0.7) < 0.08
    assert len(spec["h"]) == len(spec["q"])


def test_cascade_matches_closed_form():
    x = mflb.gen_binomial_cascade(0.75, 14)
    assert sum(x) == pytest.approx(1.0)
    spec = mflb.mfdfa(x, q=[-2, 2])
    assert spec["h"][1] == pytest.approx(mflb.analytic_binomial_h(0.75, 2), abs=0.05)


def test_windows_and_jain():
    assert mflb.window_count(1000, 256, 64) == 12
    assert mflb.sliding_window_starts(1000, 256, 64)[-1] == 704
    assert mflb.jain_index([1, 0, 0, 0]) == pytest.approx(0.25)


def test_run_scenario_from_dict():
    doc = json.loads(EXAMPLE.read_text())
    doc["duration"] = 512
    m = mflb.run_scenario(doc, seed=2)
    assert m["seed"] == 2
    assert 0 < m["jain"] <= 1
    assert set(m["utilization"]) == {"1", "2", "3", "4"}
    again = mflb.run_scenario(json.dumps(doc), seed=2)
    assert again == m


def test_cli_run(tmp_path):
    rc = mflb.cli(["run", "--config", str(EXAMPLE), "--out", str(tmp_path), "--algorithm", "round_robin"])
    assert rc == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["control_overhead"] == 0
    assert mflb.cli(["run"]) != 0
