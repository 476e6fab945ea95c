"""Command-line interface tests: exit codes, document schema, determinism.

Every runner call goes through degenmfg.cli.main(argv) so the tests see
exactly what a shell invocation would produce, without subprocess cost.
"""

import csv
import hashlib
import json
from pathlib import Path

import pytest

from degenmfg.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _load(name: str) -> dict:
    with open(CONFIGS / name, encoding="utf-8") as f:
        return json.load(f)


def _dump(cfg: dict, path: Path) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg, f)
    return str(path)


def _stderr_doc(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def _is_qty(obj) -> bool:
    return (
        isinstance(obj, dict)
        and set(obj) == {"value", "unit"}
        and isinstance(obj["unit"], str)
    )


def test_solve_zero_document_schema(tmp_path):
    out = tmp_path / "run"
    rc = main(["solve", "--config", str(CONFIGS / "solve_zero.json"),
               "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert doc["command"] == "solve"
    assert doc["exit_code"] == 0
    assert doc["seed"] == 0
    assert doc["threads"] == 1
    assert isinstance(doc["package_version"], str)
    # hash must be reproducible from the embedded config alone
    canon = json.dumps(doc["config"], sort_keys=True,
                       separators=(",", ":"), ensure_ascii=True)
    assert doc["config_sha256"] == hashlib.sha256(canon.encode()).hexdigest()
    res = doc["results"]
    assert res["converged"] is True
    assert _is_qty(res["final_residual"])
    for key in ("u_t0_L2_inv_a", "u_T_H1_inv_a", "m_t0_L2_a", "m_T_H1a_div"):
        assert _is_qty(res["norms"][key])
        assert isinstance(res["norms"][key]["value"], float)
    # curve files: one name row, one unit row, then data
    for fname in ("residuals.csv", "profiles.csv"):
        rows = _read_rows(out / fname)
        assert len(rows) > 2
        assert len(rows[0]) == len(rows[1])
        for cell in rows[2]:
            float(cell)


def test_result_deterministic_modulo_timestamp(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = main(["solve", "--config", str(CONFIGS / "solve_zero.json"),
                   "--out", str(out)])
        assert rc == 0
        outs.append(out)

    def stripped(p: Path) -> str:
        lines = (p / "result.json").read_text(encoding="utf-8").splitlines()
        kept = [ln for ln in lines if '"timestamp"' not in ln]
        return "\n".join(kept)

    assert stripped(outs[0]) == stripped(outs[1])
    for fname in ("residuals.csv", "profiles.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_out_flag_beats_config_out_dir(tmp_path):
    cfg = _load("solve_zero.json")
    cfg["out_dir"] = str(tmp_path / "from_config")
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["solve", "--config", path, "--out", str(tmp_path / "from_flag")])
    assert rc == 0
    assert (tmp_path / "from_flag" / "result.json").exists()
    assert not (tmp_path / "from_config").exists()


def test_config_out_dir_used_without_flag(tmp_path):
    cfg = _load("coeff_check.json")
    cfg["out_dir"] = str(tmp_path / "here")
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["coeff-check", "--config", path])
    assert rc == 0
    assert (tmp_path / "here" / "result.json").exists()


def test_missing_field_is_named(tmp_path, capsys):
    cfg = _load("holder.json")
    del cfg["t0"]
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["stability-holder", "--config", path, "--out", str(tmp_path / "o")])
    assert rc == 2
    doc = _stderr_doc(capsys)
    assert doc["error"]["code"] == 2
    assert "missing required field: t0" in doc["error"]["details"]
    assert not (tmp_path / "o").exists()


def test_malformed_json_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"command": "solve",', encoding="utf-8")
    rc = main(["solve", "--config", str(path)])
    assert rc == 2
    assert "not valid JSON" in _stderr_doc(capsys)["error"]["message"]


def test_missing_config_file_exit_2(tmp_path, capsys):
    rc = main(["solve", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "cannot read config" in _stderr_doc(capsys)["error"]["message"]


def test_unknown_field_rejected(tmp_path, capsys):
    cfg = _load("convergence_space.json")
    cfg["extraneous"] = 1
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["convergence", "--config", path])
    assert rc == 2
    assert "unknown field: extraneous" in _stderr_doc(capsys)["error"]["details"]


def test_unknown_case_lists_catalog(tmp_path, capsys):
    cfg = _load("convergence_space.json")
    cfg["case"] = "nope"
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["convergence", "--config", path])
    assert rc == 2
    details = _stderr_doc(capsys)["error"]["details"]
    assert any(d.startswith("case: must be one of") and "drifted-well" in d
               for d in details)


def test_bad_threads_exit_2(tmp_path, capsys):
    rc = main(["coeff-check", "--config", str(CONFIGS / "coeff_check.json"),
               "--out", str(tmp_path / "o"), "--threads", "0"])
    assert rc == 2
    assert "--threads" in _stderr_doc(capsys)["error"]["message"]


def test_threads_flag_recorded(tmp_path):
    out = tmp_path / "o"
    rc = main(["coeff-check", "--config", str(CONFIGS / "coeff_check.json"),
               "--out", str(out), "--threads", "3"])
    assert rc == 0
    doc = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert doc["threads"] == 3


def test_nonconverging_solve_exit_3(tmp_path, capsys):
    cfg = _load("solve_nonlinear.json")
    cfg["grid"] = {"n_x": 32, "n_t": 32}
    cfg["data"] = {"m0": {"kind": "a", "scale": 16.0},
                   "h": {"kind": "a", "scale": 16.0}}
    cfg["iter"] = {"max_sweeps": 1, "tolerance": 1e-14}
    path = _dump(cfg, tmp_path / "cfg.json")
    rc = main(["solve", "--config", path, "--out", str(tmp_path / "o")])
    assert rc == 3
    doc = _stderr_doc(capsys)
    assert doc["error"]["code"] == 3
    assert "did not converge" in doc["error"]["message"]
    assert not (tmp_path / "o").exists()


def test_weight_overflow_exit_4_still_reports(tmp_path):
    cfg = {
        "command": "verify-carleman",
        "case": "drifted-well",
        "grid": {"n_x": 32, "n_t": 32},
        "s_values": [300.0, 400.0],
        "lam_values": [2.0],
        "seed": 0,
    }
    path = _dump(cfg, tmp_path / "cfg.json")
    out = tmp_path / "o"
    rc = main(["verify-carleman", "--config", path, "--out", str(out)])
    assert rc == 4
    doc = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert doc["exit_code"] == 4
    res = doc["results"]
    assert res["overflow_cells"]["value"] == 2
    assert res["total_cells"]["value"] == 2
    # non-finite statistics survive serialization as tagged strings
    assert res["top_half_max"]["value"] == "NaN"
    rows = _read_rows(out / "ratios.csv")
    assert any("NaN" in row for row in rows[2:])


def test_convergence_command_reports_order(tmp_path):
    out = tmp_path / "o"
    rc = main(["convergence", "--config", str(CONFIGS / "convergence_space.json"),
               "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "result.json").read_text(encoding="utf-8"))
    order = doc["results"]["observed_order"]["value"]
    assert 1.7 <= order <= 2.3
    rows = _read_rows(out / "errors.csv")
    assert rows[0] == ["n_x", "n_t", "h", "dt", "max_error"]
    assert len(rows) >= 5
    errs = [float(r[4]) for r in rows[2:]]
    assert errs == sorted(errs, reverse=True)


def test_carleman_sweep_csv(tmp_path):
    cfg = _load("carleman_sweep.json")
    cfg["grid"] = {"n_x": 48, "n_t": 48}
    path = _dump(cfg, tmp_path / "cfg.json")
    out = tmp_path / "o"
    rc = main(["verify-carleman", "--config", path, "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "result.json").read_text(encoding="utf-8"))
    res = doc["results"]
    assert res["overflow_cells"]["value"] == 0
    assert _is_qty(res["top_half_max"])
    rows = _read_rows(out / "ratios.csv")
    # one row per (s, lam) combination
    assert len(rows) - 2 == len(cfg["s_values"]) * len(cfg["lam_values"])


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", "x.json"])
