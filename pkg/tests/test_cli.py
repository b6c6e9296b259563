import csv
import json

import pytest

from hypermix import cli
from hypermix.errors import ConfigError, Inconclusive

SMALL = {
    "steer": {"n": 2, "z_decades": [1, 5], "per_decade": 1, "pairs": 2},
    "tensor-steer": {"dims": [2, 2], "pairs": 2, "m_max": 4},
    "group-build": {"k": 2, "grade": 4, "samples": 5},
    "mix-cert": {"dims": [2, 2], "pairs": 2, "t_decades": [2, 4], "per_decade": 1},
    "orbit-coverage": {"runs": 2, "samples": 2000},
    "gallery": {"samples": 2000},
    "lp-demo": {"res": 64, "t_max": 14},
}


def _run(tmp_path, sub, name="out", **extra):
    cfg = {"subcommand": sub, "seed": 5, "params": SMALL[sub], **extra}
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = cli.main([sub, "--config", str(path), "--out", str(out)])
    return code, out


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("sub", cli.SUBCOMMANDS)
def test_each_subcommand_writes_report(tmp_path, sub):
    code, out = _run(tmp_path, sub)
    assert code == 0
    body = json.loads((out / "report.json").read_text())
    assert body["config"]["subcommand"] == sub
    assert body["config"]["seed"] == 5
    assert list(out.glob("*.csv"))
    meta = json.loads((out / "run.meta.json").read_text())
    assert meta["status"] == 0


def test_steer_residual_table(tmp_path):
    code, out = _run(tmp_path, "steer")
    rows = _read_csv(out / "residuals.csv")
    assert rows[0] == ["pair", "z_abs", "residual_x", "residual_image"]
    assert len(rows) == 1 + 2 * 5  # two pairs, one z per decade 10..10^5
    assert {float(r[1]) for r in rows[1:]} == {10.0, 100.0, 1e3, 1e4, 1e5}
    res = json.loads((out / "report.json").read_text())["result"]
    assert res["predicted_slopes"] == [-1, -2]


def test_steer_rational_mode(tmp_path):
    code, out = _run(tmp_path, "steer", arith="rational")
    assert code == 0
    rows = _read_csv(out / "residuals.csv")[1:]
    assert all(float(r[2]) <= 1.0 for r in rows)


def test_gallery_report_pattern(tmp_path):
    code, out = _run(tmp_path, "gallery")
    res = json.loads((out / "report.json").read_text())["result"]
    assert res["pattern"] == ["hypercyclic-type", "not", "not", "hypercyclic-type"]


def test_group_build_rational_commutes(tmp_path):
    code, out = _run(tmp_path, "group-build", arith="rational")
    res = json.loads((out / "report.json").read_text())["result"]
    assert res["commute_exact"] is True
    assert res["continuity_violations"] == 0


def test_mix_cert_controls(tmp_path):
    code, out = _run(tmp_path, "mix-cert")
    res = json.loads((out / "report.json").read_text())["result"]
    assert res["negative_controls"] == {"identity_empty": True, "rotation_empty": True}
    assert all(r is not None for r in res["r_per_pair"])


def test_missing_seed_names_field(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"subcommand": "steer"}))
    assert cli.main(["steer", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "seed" in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        cli.validate_config({"subcommand": "steer"})
    assert info.value.path == ("seed",)


def test_bad_param_reports_path():
    with pytest.raises(ConfigError) as info:
        cli.validate_config({"subcommand": "steer", "seed": 1, "params": {"n": 0}})
    assert info.value.path == ("params", "n")
    with pytest.raises(ConfigError) as info:
        cli.validate_config({"subcommand": "gallery", "seed": 1, "params": {"dims": [2]}})
    assert "params" in str(info.value)


def test_seed_flag_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 9, "params": SMALL["orbit-coverage"]}))
    out = tmp_path / "o"
    assert cli.main(["orbit-coverage", "--config", str(path), "--seed", "3", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["config"]["seed"] == 3


def test_defaults_filled():
    cfg = cli.validate_config({"subcommand": "lp-demo", "seed": 0, "params": {"k": 2}})
    assert cfg["params"]["k"] == 2 and cfg["params"]["eps"] == 1e-3
    assert cfg["arith"] == "float"


def test_subcommand_mismatch(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"subcommand": "gallery", "seed": 1}))
    assert cli.main(["steer", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "subcommand" in capsys.readouterr().err


@pytest.mark.parametrize("sub", ["tensor-steer", "mix-cert", "lp-demo"])
def test_byte_identical_reruns(tmp_path, sub, monkeypatch):
    monkeypatch.setenv("HYPERMIX_THREADS", "4")
    _, a = _run(tmp_path, sub, name="a")
    monkeypatch.setenv("HYPERMIX_THREADS", "1")
    _, b = _run(tmp_path, sub, name="b")
    for f in sorted(p.name for p in a.iterdir() if p.name != "run.meta.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_inconclusive_exit_code(tmp_path, monkeypatch):
    def boom(cfg, rng):
        raise Inconclusive("all sampled moduli lie within the band around 1")

    monkeypatch.setitem(cli.RUNNERS, "gallery", boom)
    code, out = _run(tmp_path, "gallery")
    assert code == 2
    assert "inconclusive" in json.loads((out / "report.json").read_text())["result"]
    assert json.loads((out / "run.meta.json").read_text())["status"] == 2


def test_threads_env(monkeypatch):
    monkeypatch.setenv("HYPERMIX_THREADS", "3")
    assert cli.max_workers() == 3
    monkeypatch.setenv("HYPERMIX_THREADS", "0")
    assert cli.max_workers() == 1
    monkeypatch.setenv("HYPERMIX_THREADS", "many")
    with pytest.raises(ConfigError):
        cli.max_workers()


def test_pmap_respects_cap(monkeypatch):
    import threading

    seen = set()

    def work(i):
        seen.add(threading.get_ident())
        return i * i

    monkeypatch.setenv("HYPERMIX_THREADS", "1")
    assert cli._pmap(work, range(20)) == [i * i for i in range(20)]
    assert seen == {threading.get_ident()}


def test_schema_is_draft_2020_12():
    import jsonschema

    jsonschema.Draft202012Validator.check_schema(cli.CONFIG_SCHEMA)
