"""Config validation, study runners, artifact writing, determinism."""

import json
import math
import os
import xml.etree.ElementTree as ET

import pytest

from cylspec import study
from cylspec.study import ConfigError, StudyConfig, StudyRecord


def interval_config(coefficient=None, solver=None, **study_table):
    return {
        "geometry": {
            "base": {"kind": "interval", "a": -1.0, "b": 1.0},
            "cross": {"intervals": [[0.0, 1.0]]},
        },
        "coefficient": coefficient or {"entries": [["2", "0.5"], ["0.5", "1"]]},
        "solver": solver or {"seed": 11},
        "study": study_table,
    }


def polygon_config(**study_table):
    cfg = interval_config(**study_table)
    cfg["geometry"]["base"] = {
        "kind": "regular_polygon",
        "sides": 4,
        "circumradius": 1.0,
    }
    cfg["coefficient"] = {"identity": 3}
    return cfg


# ---------------------------------------------------------------------------
# parsing and validation


def test_kind_tables_are_consistent():
    assert set(study.STUDY_KINDS) == set(study._STUDY_KEYS)
    assert set(study.STUDY_KINDS) == set(study._RUNNERS)


def test_round_trip_through_to_dict():
    cfg = StudyConfig.from_dict(
        interval_config(kind="reduced", direction=[1.0], target_h=0.25)
    )
    again = StudyConfig.from_dict(cfg.to_dict())
    assert cfg == again
    assert cfg.params["rel_tol"] == 1e-4
    assert tuple(cfg.params["L_schedule"]) == study.DEFAULT_L_SCHEDULE


def test_kind_argument_fills_in_and_conflicts():
    d = interval_config(direction=[1.0])
    cfg = StudyConfig.from_dict(d, kind="reduced")
    assert cfg.kind == "reduced"
    d2 = interval_config(kind="full", length=2.0)
    with pytest.raises(ConfigError, match="conflicts with the requested"):
        StudyConfig.from_dict(d2, kind="reduced")
    with pytest.raises(ConfigError, match="missing key 'kind'"):
        StudyConfig.from_dict(interval_config(direction=[1.0]))
    with pytest.raises(ConfigError, match="unknown study kind"):
        StudyConfig.from_dict(interval_config(kind="sweeep"))


def test_unknown_keys_get_a_hint():
    with pytest.raises(ConfigError, match="did you mean 'target_h'"):
        StudyConfig.from_dict(interval_config(kind="cross-section", targeth=0.1))
    with pytest.raises(ConfigError, match="did you mean 'mesh_kind'"):
        StudyConfig.from_dict(
            interval_config(kind="full", length=2.0, meshh="auto")
        )
    cfg = interval_config(kind="cross-section")
    cfg["coefficient"]["entriess"] = []
    with pytest.raises(ConfigError, match="did you mean 'entries'"):
        StudyConfig.from_dict(cfg)
    cfg = interval_config(kind="cross-section")
    cfg["solverr"] = {}
    with pytest.raises(ConfigError, match=r"did you mean 'solver'"):
        StudyConfig.from_dict(cfg)


def test_cross_kind_hint_for_misplaced_keys():
    # a key valid for another kind still gets a pointer
    with pytest.raises(ConfigError, match="did you mean"):
        StudyConfig.from_dict(
            interval_config(kind="cross-section", radii=[1.0, 2.0])
        )


def test_missing_sections():
    cfg = interval_config(kind="cross-section")
    del cfg["geometry"]
    with pytest.raises(ConfigError, match=r"missing section \[geometry\]"):
        StudyConfig.from_dict(cfg)
    with pytest.raises(ConfigError, match="config must be a table"):
        StudyConfig.from_dict([])


def test_geometry_validation():
    cfg = interval_config(kind="cross-section")
    cfg["geometry"]["base"] = {"kind": "disk"}
    with pytest.raises(ConfigError, match="unknown base kind"):
        StudyConfig.from_dict(cfg)
    cfg = interval_config(kind="cross-section")
    cfg["geometry"]["cross"]["intervals"] = [[0.0, 1.0, 2.0]]
    with pytest.raises(ConfigError, match=r"cross interval must be \[a, b\]"):
        StudyConfig.from_dict(cfg)
    cfg = interval_config(kind="cross-section")
    cfg["geometry"]["cross"]["intervals"] = [[1.0, 0.0]]
    with pytest.raises(ConfigError, match="invalid \\[geometry\\] cross"):
        StudyConfig.from_dict(cfg)


def test_coefficient_validation():
    with pytest.raises(ConfigError, match="needs m \\+ p = 2"):
        StudyConfig.from_dict(
            interval_config(coefficient={"identity": 3}, kind="cross-section")
        )
    with pytest.raises(ConfigError, match="exactly one of"):
        StudyConfig.from_dict(
            interval_config(
                coefficient={"identity": 2, "entries": [["1", "0"], ["0", "1"]]},
                kind="cross-section",
            )
        )
    with pytest.raises(ConfigError, match="conflicts with the base geometry"):
        StudyConfig.from_dict(
            interval_config(
                coefficient={"m": 2, "identity": 2}, kind="cross-section"
            )
        )
    with pytest.raises(ConfigError, match="has p = 2 cross variables"):
        StudyConfig.from_dict(
            interval_config(
                coefficient={
                    "m": 1,
                    "entries": [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]],
                },
                kind="cross-section",
            )
        )
    # symmetric but indefinite: rejected by the ellipticity sampler
    with pytest.raises(ConfigError, match="invalid \\[coefficient\\]"):
        StudyConfig.from_dict(
            interval_config(
                coefficient={"entries": [["1", "2"], ["2", "1"]]},
                kind="cross-section",
            )
        )


def test_solver_validation():
    with pytest.raises(ConfigError, match=r"\[solver\] tol must be a number"):
        StudyConfig.from_dict(
            interval_config(solver={"tol": "tight"}, kind="cross-section")
        )
    with pytest.raises(ConfigError, match=r"\[solver\] seed must be an integer"):
        StudyConfig.from_dict(
            interval_config(solver={"seed": True}, kind="cross-section")
        )
    with pytest.raises(ConfigError, match="must be >= 1"):
        StudyConfig.from_dict(
            interval_config(solver={"max_iter": 0}, kind="cross-section")
        )
    cfg = StudyConfig.from_dict(
        interval_config(
            solver={"tol": 1e-8, "seed": 3, "max_iter": 900, "dof_cap": 5000},
            kind="cross-section",
        )
    )
    assert cfg.solver.tol == 1e-8
    assert cfg.solver.seed == 3
    assert cfg.solver.max_iter == 900
    assert cfg.solver.dof_cap == 5000


def test_direction_normalization_and_checks():
    cfg = StudyConfig.from_dict(
        polygon_config(kind="reduced", direction=[3.0, 4.0])
    )
    assert cfg.params["direction"] == pytest.approx([0.6, 0.8])
    with pytest.raises(ConfigError, match="must have 1 components"):
        StudyConfig.from_dict(
            interval_config(kind="reduced", direction=[1.0, 0.0])
        )
    with pytest.raises(ConfigError, match="must be nonzero"):
        StudyConfig.from_dict(interval_config(kind="reduced", direction=[0.0]))


def test_schedule_validation():
    with pytest.raises(ConfigError, match="strictly increasing"):
        StudyConfig.from_dict(
            interval_config(kind="reduced", direction=[1.0], L_schedule=[4.0, 4.0])
        )
    with pytest.raises(ConfigError, match="rel_tol must be below 1"):
        StudyConfig.from_dict(
            interval_config(kind="reduced", direction=[1.0], rel_tol=1.0)
        )
    with pytest.raises(ConfigError, match="must be a nonempty array"):
        StudyConfig.from_dict(
            interval_config(kind="reduced", direction=[1.0], L_schedule=[])
        )


def test_convergence_needs_exactly_one_axis():
    with pytest.raises(ConfigError, match="exactly one of 'lengths' or 'h_schedule'"):
        StudyConfig.from_dict(
            interval_config(kind="convergence", lengths=[1.0, 2.0],
                            h_schedule=[0.25])
        )
    with pytest.raises(ConfigError, match="exactly one of 'lengths' or 'h_schedule'"):
        StudyConfig.from_dict(interval_config(kind="convergence"))
    with pytest.raises(ConfigError, match="missing key 'length'"):
        StudyConfig.from_dict(
            interval_config(kind="convergence", h_schedule=[0.5, 0.25])
        )
    cfg = StudyConfig.from_dict(
        interval_config(kind="convergence", h_schedule=[0.5, 0.25], length=2.0)
    )
    assert cfg.params["reference_directions"] == 16


def test_decay_and_bc_validation():
    with pytest.raises(ConfigError, match="at least 2 radii"):
        StudyConfig.from_dict(
            interval_config(kind="decay", length=4.0, radii=[2.0])
        )
    with pytest.raises(ConfigError, match="must not exceed the cylinder length"):
        StudyConfig.from_dict(
            interval_config(kind="decay", length=4.0, radii=[2.0, 5.0])
        )
    with pytest.raises(ConfigError, match="bc must be 'mixed' or 'dirichlet'"):
        StudyConfig.from_dict(
            interval_config(kind="full", length=2.0, bc="robin")
        )
    with pytest.raises(ConfigError, match="mesh_kind must be 'auto' or 'simplicial'"):
        StudyConfig.from_dict(
            interval_config(kind="full", length=2.0, mesh_kind="hex")
        )
    with pytest.raises(ConfigError, match="face must be a face id string"):
        StudyConfig.from_dict(
            interval_config(kind="upper-bound", length=4.0, face=1)
        )
    # radii arrive sorted regardless of input order
    cfg = StudyConfig.from_dict(
        interval_config(kind="decay", length=4.0, radii=[3.0, 1.0, 2.0])
    )
    assert cfg.params["radii"] == [1.0, 2.0, 3.0]


def test_load_config_from_toml(tmp_path):
    path = tmp_path / "study.toml"
    path.write_text(
        """
[geometry.base]
kind = "interval"
a = -1.0
b = 1.0

[geometry.cross]
intervals = [[0.0, 1.0]]

[coefficient]
entries = [["2", "0.5"], ["0.5", "1"]]

[study]
kind = "cross-section"
target_h = 0.125
"""
    )
    cfg = study.load_config(str(path))
    assert cfg.kind == "cross-section"
    assert cfg.params["target_h"] == 0.125
    with pytest.raises(ConfigError, match="cannot read config"):
        study.load_config(str(tmp_path / "absent.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("geometry = [unclosed")
    with pytest.raises(ConfigError, match="not valid TOML"):
        study.load_config(str(bad))


def test_config_hash_tracks_content_not_layout():
    a = interval_config(kind="cross-section", target_h=0.25)
    b = {k: a[k] for k in reversed(list(a))}
    ha = study.config_hash(StudyConfig.from_dict(a).to_dict())
    hb = study.config_hash(StudyConfig.from_dict(b).to_dict())
    assert ha == hb and len(ha) == 64
    c = interval_config(solver={"seed": 12}, kind="cross-section", target_h=0.25)
    assert study.config_hash(StudyConfig.from_dict(c).to_dict()) != ha


# ---------------------------------------------------------------------------
# records and artifacts


def _tiny_record(failure=None):
    return StudyRecord(
        study="reduced",
        config={"study": {"kind": "reduced"}},
        columns=["L", "value"],
        rows=[{"L": 2.0, "value": 1.0 / 3.0}, {"L": 4.0, "value": 0.25}],
        summary={"Z_extrap": 0.25},
        references=[("mu1", 0.5, "dashed")],
        x_column="L",
        y_columns=["value"],
        provenance={"config_sha256": "0" * 64, "code_version": "0", "seed": 1},
        failure=failure,
    )


def test_csv_text_round_trip_format():
    text = _tiny_record().csv_text()
    lines = text.splitlines()
    assert lines[0] == "L,value"
    assert lines[1] == "2,0.33333333333333331"
    assert float(lines[1].split(",")[1]) == 1.0 / 3.0


def test_json_dict_shape():
    doc = _tiny_record().to_json_dict()
    assert doc["study"] == "reduced"
    assert doc["rows"][0] == {"L": 2.0, "value": pytest.approx(1.0 / 3.0)}
    assert "failure" not in doc
    assert _tiny_record(failure="boom").to_json_dict()["failure"] == "boom"


def test_emit_plot_rejects_empty_records():
    rec = _tiny_record()
    rec.rows = []
    with pytest.raises(ValueError, match="cannot plot an empty record"):
        study.emit_plot(rec)


def test_write_artifacts_layout(tmp_path):
    out = tmp_path / "run"
    paths = study.write_artifacts(_tiny_record(), str(out))
    assert sorted(paths) == ["csv", "json", "svg"]
    assert (out / "results.csv").read_text().startswith("L,value\n")
    doc = json.loads((out / "results.json").read_text())
    assert doc["provenance"]["seed"] == 1
    ET.fromstring((out / "plot.svg").read_text())
    assert not (out / "FAILED").exists()


def test_write_artifacts_failure_marker(tmp_path):
    paths = study.write_artifacts(_tiny_record(failure="cell 2 blew up"),
                                  str(tmp_path))
    assert (tmp_path / "FAILED").read_text() == "cell 2 blew up\n"
    assert "failed" in paths


# ---------------------------------------------------------------------------
# runners (smoke level; numerics are covered by the solver tests)


def run(d, **kw):
    return study.run_study(StudyConfig.from_dict(d), **kw)


def test_run_cross_section():
    rec = run(interval_config(kind="cross-section", target_h=0.125))
    assert rec.failure is None
    assert rec.columns == ["target_h", "mu1", "gap_indicator", "residual", "dofs"]
    assert len(rec.rows) == 1
    assert rec.summary["gap_condition"] is True
    assert rec.summary["prediction"] == study.GAP_TEXT
    assert rec.provenance["config_sha256"] == study.config_hash(rec.config)
    lines = study.summary_lines(rec)
    assert lines[0] == "study: cross-section  rows: 1"
    assert any("prediction" in ln for ln in lines)


def test_run_cross_section_no_gap():
    rec = run(
        interval_config(
            coefficient={"identity": 2}, kind="cross-section", target_h=0.125
        )
    )
    assert rec.summary["gap_condition"] is False
    assert rec.summary["prediction"] == study.NO_GAP_TEXT


def test_run_reduced():
    rec = run(
        interval_config(
            kind="reduced", direction=[1.0], L_schedule=[2.0, 4.0], target_h=0.25
        )
    )
    assert rec.failure is None
    assert [r["L"] for r in rec.rows] == [2.0, 4.0]
    assert rec.summary["Z_extrap"] == rec.rows[-1]["value"]
    assert rec.summary["Z_extrap_minus_mu1"] == pytest.approx(
        rec.summary["Z_extrap"] - rec.summary["mu1"]
    )
    assert ("mu1", rec.summary["mu1"], "dashed") in rec.references


def test_run_sweep_one_dimensional():
    rec = run(
        interval_config(kind="sweep", L_schedule=[2.0, 4.0], target_h=0.25)
    )
    assert rec.failure is None
    assert rec.x_column == "nu"
    assert [r["nu"] for r in rec.rows] == [-1.0, 1.0]
    styles = {(lab, sty) for lab, _, sty in rec.references}
    assert styles == {("mu1", "dashed"), ("min Z", "dotted")}
    assert rec.summary["min_value"] == min(r["value"] for r in rec.rows)
    assert rec.summary["mu1_minus_min"] == pytest.approx(
        rec.summary["mu1"] - rec.summary["min_value"]
    )


def test_run_full():
    rec = run(
        interval_config(kind="full", length=2.0, k=2, target_h=0.25)
    )
    assert rec.failure is None
    assert [r["index"] for r in rec.rows] == [1.0, 2.0]
    assert rec.rows[0]["value"] < rec.rows[1]["value"]
    assert rec.summary["mu1_minus_lambda1"] > 0.0
    assert rec.columns == ["index", "value", "residual", "dofs"]


def test_run_convergence_in_length():
    rec = run(
        interval_config(
            kind="convergence", lengths=[1.0, 2.0], target_h=0.25,
            reference_directions=2,
        )
    )
    assert rec.failure is None
    assert rec.columns == ["length", "value", "residual", "dofs"]
    assert "min_Z" in rec.summary
    assert rec.summary["last_value"] == rec.rows[-1]["value"]
    assert any(sty == "dotted" for _, _, sty in rec.references)


def test_run_convergence_in_h():
    rec = run(
        interval_config(
            kind="convergence", h_schedule=[0.5, 0.25], length=2.0,
            reference_directions=0,
        )
    )
    assert rec.failure is None
    # coarse to fine, discrete values decrease toward the limit
    assert [r["target_h"] for r in rec.rows] == [0.5, 0.25]
    assert rec.rows[0]["value"] > rec.rows[1]["value"]
    assert "min_Z" not in rec.summary


def test_run_decay():
    rec = run(
        interval_config(kind="decay", length=4.0, radii=[2.0, 4.0], target_h=0.25)
    )
    assert rec.failure is None
    assert rec.y_columns == ["mass", "grad_mass"]
    assert rec.rows[-1]["mass"] == pytest.approx(1.0, abs=1e-10)
    assert rec.summary["log_slope"] < 0.0


def test_run_upper_bound():
    rec = run(
        interval_config(
            kind="upper-bound", length=4.0, face="right", K_schedule=[1.0, 2.0],
            target_h=0.25,
        )
    )
    assert rec.failure is None
    q = [r["quotient"] for r in rec.rows]
    assert q[0] > q[1] > rec.summary["lambda1"] - 1e-10
    assert ("lambda_l", rec.summary["lambda1"], "solid") in rec.references


def test_run_dirichlet_bracket():
    rec = run(
        interval_config(
            kind="dirichlet-bracket", lengths=[1.0, 2.0], target_h=0.25
        )
    )
    assert rec.failure is None
    vals = [r["value"] for r in rec.rows]
    assert vals[0] > vals[1] > rec.summary["mu1"]
    assert rec.summary["fit_slope"] < 0.0


def test_run_study_records_a_total_failure():
    rec = run(
        interval_config(
            coefficient={"identity": 2}, kind="decay", length=4.0,
            radii=[2.0, 4.0], target_h=0.25,
        )
    )
    assert rec.failure is not None
    assert "decay hypotheses not met" in rec.failure
    assert rec.rows == [] and rec.columns == []
    assert rec.provenance["config_sha256"] == study.config_hash(rec.config)
    lines = study.summary_lines(rec)
    assert lines[1].startswith("FAILED:")


def test_partial_failure_stops_or_keeps_going(tmp_path):
    d = interval_config(
        solver={"seed": 11, "dof_cap": 60},
        kind="convergence", lengths=[1.0, 8.0], target_h=0.25,
        reference_directions=0,
    )
    halted = run(d)
    assert halted.failure is not None and "dof cap exceeded" in halted.failure
    assert len(halted.rows) == 1  # partial results survive
    kept = run(d, keep_going=True)
    assert kept.failure is not None
    assert len(kept.rows) == 2
    assert math.isnan(kept.rows[1]["value"])
    assert kept.rows[1]["dofs"] == 0.0
    paths = study.write_artifacts(kept, str(tmp_path))
    text = (tmp_path / "results.csv").read_text()
    assert "nan" in text.splitlines()[2]
    assert "failed" in paths and "svg" in paths


def test_sweep_keep_going_total_failure_is_recorded():
    # a budget of 6 lets the 3-dof cross-section reference converge but
    # starves both strip cells; every direction of an m=1 sweep shares the
    # strip mesh, so keep_going has nothing to keep and the aggregate error
    # lands in the record
    d = interval_config(
        solver={"seed": 11, "max_iter": 6},
        kind="sweep", L_schedule=[2.0], target_h=0.25,
    )
    rec = run(d, keep_going=True)
    assert rec.rows == []
    assert "all sweep directions failed" in rec.failure


def test_rerun_is_byte_identical(tmp_path):
    d = interval_config(
        kind="reduced", direction=[1.0], L_schedule=[2.0, 4.0], target_h=0.25
    )
    one = run(d)
    two = run(d)
    assert one.csv_text().encode() == two.csv_text().encode()
    assert study.emit_plot(one) == study.emit_plot(two)
    assert json.dumps(one.to_json_dict()) == json.dumps(two.to_json_dict())


def test_sweep_jobs_do_not_change_rows():
    d = interval_config(kind="sweep", L_schedule=[2.0], target_h=0.25)
    serial = run(d, keep_going=True)
    fanned = run(d, jobs=2, keep_going=True)
    assert serial.csv_text() == fanned.csv_text()