"""Run log schema stability and CSV round trips."""

import math

import pytest

from offboost.errors import FormatError
from offboost.runlog import COLUMNS, RunLog


def _row(step, **over):
    base = dict(
        env_step=step, wall_ms=step * 3, eval_return_mean=-100.5,
        eval_return_std=4.25, success_rate=float("nan"), loss_q_pi=1.0,
        loss_q_mu=2.0, loss_v_mu=0.5, loss_actor=-3.5, alpha=0.2,
        gate_fraction=0.25, v_pi_mean=-80.0, v_mu_mean=-85.0,
        seed=7, run_id="pendulum_adaptive_stochastic_s7",
    )
    base.update(over)
    return base


def test_append_validates_columns():
    log = RunLog()
    with pytest.raises(FormatError, match="missing"):
        log.append(env_step=1)
    with pytest.raises(FormatError, match="unknown"):
        log.append(**_row(1), bogus=1)


def test_env_step_strictly_increasing():
    log = RunLog()
    log.append(**_row(100))
    with pytest.raises(FormatError, match="increasing"):
        log.append(**_row(100))


def test_csv_round_trip_preserves_floats_exactly():
    log = RunLog()
    log.append(**_row(100, eval_return_mean=-123.456789012345678))
    log.append(**_row(200, alpha=1e-17))
    path = "/tmp/runlog_roundtrip_test.csv"
    log.save_csv(path)
    loaded = RunLog.load_csv(path)
    assert loaded.rows[0]["eval_return_mean"] == log.rows[0]["eval_return_mean"]
    assert loaded.rows[1]["alpha"] == log.rows[1]["alpha"]
    assert math.isnan(loaded.rows[0]["success_rate"])
    assert loaded.rows[0]["run_id"] == log.rows[0]["run_id"]
    assert loaded.rows[0]["seed"] == 7


def test_load_rejects_foreign_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(FormatError, match="header"):
        RunLog.load_csv(p)


def test_column_accessor():
    log = RunLog()
    log.append(**_row(100))
    log.append(**_row(200))
    assert log.column("env_step") == [100, 200]
    assert COLUMNS[0] == "env_step"
