import json
import os

from plotkit import cli

DATA = os.path.join(os.path.dirname(__file__), "data")


def test_density_end_to_end(tmp_path, capsys):
    out = tmp_path / "fig.png"
    code = cli.main(["density", "--in", os.path.join(DATA, "density.json"),
                     "--out", str(out)])
    assert code == 0
    assert out.exists() and out.stat().st_size > 0
    assert str(out) in capsys.readouterr().out


def test_resilience_and_profiles_end_to_end(tmp_path):
    for kind, golden in (("resilience", "resilience.json"),
                         ("profiles", "profiles.json")):
        out = tmp_path / f"{kind}.svg"
        code = cli.main([kind, "--in", os.path.join(DATA, golden),
                         "--out", str(out)])
        assert code == 0 and out.exists()


def test_wrong_section_exits_2(tmp_path, capsys):
    code = cli.main(["resilience", "--in", os.path.join(DATA, "profiles.json"),
                     "--out", str(tmp_path / "x.png")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_schema_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 42}))
    code = cli.main(["density", "--in", str(bad),
                     "--out", str(tmp_path / "x.png")])
    assert code == 2
    assert "schema_version" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path):
    assert cli.main(["density", "--in", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x.png")]) == 2
