import json
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassmob.cli import main
from wassmob.config import emit_config, parse_config, parse_config_text
from wassmob.errors import ParseError, ValidationError
from wassmob.experiments import Artifacts, emit_results

MINIMAL = """
[experiment]
kind = distance

[mobility]
family = exponential
"""


def test_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg["solver"]["tau"] == 1e-2
    assert cfg["solver"]["epsilon_floor"] == 1e-4
    assert cfg["grid"]["n"] == (64,)
    assert cfg.seed == 0


def test_missing_family_named():
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[experiment]\nkind = jko\n")
    assert "mobility.family" in exc.value.fields


def test_all_violations_reported():
    text = MINIMAL + "[solver]\ntau = -1\nsteps = x\nbogus = 3\n[grid]\nn = 1\n"
    with pytest.raises(ValidationError) as exc:
        parse_config_text(text)
    f = exc.value.fields
    assert {"solver.tau", "solver.steps", "solver.bogus", "grid.n"} <= set(f)
    assert any("line 9" in v for v in exc.value.violations)


def test_parse_error_location():
    with pytest.raises(ParseError) as exc:
        parse_config_text("[experiment]\nkind = distance\njust words\n")
    assert exc.value.line == 3 and exc.value.column == 1
    with pytest.raises(ParseError) as exc:
        parse_config_text("kind = distance\n")
    assert exc.value.line == 1


def test_relaxation_window_must_fit():
    with pytest.raises(ValidationError) as exc:
        parse_config_text("[experiment]\nkind = relaxation\n[relaxation]\nhorizon = 0.5\n")
    assert "relaxation.horizon" in exc.value.fields


def test_missing_csv_path(tmp_path):
    with pytest.raises(ValidationError) as exc:
        parse_config_text(MINIMAL + "[initial]\nkind = csv\npath = nope.csv\n", tmp_path)
    assert "initial.path" in exc.value.fields


@given(
    st.sampled_from(["distance", "jko", "relaxation"]),
    st.integers(0, 2**64 - 1),
    st.floats(1e-5, 1.0),
    st.integers(2, 400),
    st.lists(st.floats(1e-4, 1e-1), min_size=2, max_size=4),
)
def test_emit_parse_round_trip(kind, seed, tau, n, taus):
    text = f"""
[experiment]
kind = {kind}
seed = {seed}
[grid]
n = {n}
[mobility]
family = constant
matrix = 2.5
[solver]
tau = {tau!r}
taus = {", ".join(map(repr, taus))}
"""
    cfg = parse_config_text(text)
    again = parse_config_text(emit_config(cfg))
    assert again == cfg
    assert emit_config(again) == emit_config(cfg)


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_distance_identity_via_cli(tmp_path):
    cfg = write(tmp_path, MINIMAL + "[target]\ncenter = 0.3\n")
    out = tmp_path / "out"
    assert main(["distance", "--config", cfg, "--out", str(out)]) == 0
    led = json.loads((out / "ledgers" / "distance.json").read_text())
    assert led["wa_squared"] <= 1e-12
    man = json.loads((out / "MANIFEST.json").read_text())
    assert man["passed"] and "identity" in man["checks"]
    for rel in ("config.echo", "densities/rho0.csv", "plots/densities.csv"):
        assert rel in man["files"]


def test_rerun_is_bit_identical(tmp_path):
    cfg = write(tmp_path, "[experiment]\nkind = metric_axioms\n[grid]\nn = 16\n[mobility]\nfamily = exponential\n"
                          "[checks]\ntriples = 10\n")
    hashes = []
    for k, threads in enumerate(("1", "3")):
        os.environ["WASSMOB_THREADS"] = threads
        try:
            assert main(["metric_axioms", "--config", cfg, "--out", str(tmp_path / f"o{k}"), "--seed", "42"]) == 0
        finally:
            del os.environ["WASSMOB_THREADS"]
        hashes.append(json.loads((tmp_path / f"o{k}" / "MANIFEST.json").read_text())["files"])
    assert hashes[0] == hashes[1]


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[experiment]\nkind = jko\n")
    assert main(["jko", "--config", cfg]) == 2
    assert "mobility.family" in capsys.readouterr().err
    assert main(["distance", "--config", write(tmp_path, "[experiment]\nkind = relaxation\n", "r.ini")]) == 2


def test_failed_check_gives_nonzero_exit(tmp_path):
    cfg = write(tmp_path, "[experiment]\nkind = jko_vs_fv\n[grid]\nn = 32\n[mobility]\nfamily = constant\n"
                          "[solver]\ntaus = 2e-2, 1e-2\nhorizon = 0.04\nmin_order = 5\n")
    out = tmp_path / "o"
    assert main(["jko_vs_fv", "--config", cfg, "--out", str(out)]) == 1
    man = json.loads((out / "MANIFEST.json").read_text())
    assert "tau_order" in man["failures"]


def test_empty_artifacts_and_unwritable(tmp_path):
    man = emit_results(Artifacts(), tmp_path / "empty")
    assert man["files"] == {} and man["passed"]
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_results(Artifacts(), blocker / "sub")


@pytest.mark.parametrize("kind", ["geodesic", "jko", "fv_reference", "relaxation"])
def test_each_pipeline_runs(tmp_path, kind):
    body = {
        "geodesic": "[grid]\nn = 32\n[mobility]\nfamily = exponential\n[solver]\nslices = 8\n",
        "jko": "[grid]\nn = 32\n[mobility]\nfamily = exponential\n[potential]\nkind = quadratic_well\na = 4\n"
               "[solver]\nsteps = 3\n",
        "fv_reference": "[grid]\nn = 16, 12\nlo = 0, 0\nhi = 1, 1\n[mobility]\nfamily = exponential\nrate = 1, 0\n"
                        "[potential]\nkind = quadratic_well\n[solver]\ndt = 1e-2\nhorizon = 0.1\n",
        "relaxation": "[relaxation]\ndimension = 4\nhorizon = 1.5\nsamples = 50\n",
    }[kind]
    cfg = write(tmp_path, f"[experiment]\nkind = {kind}\n" + body)
    assert main([kind, "--config", cfg, "--out", str(tmp_path / "o")]) == 0
