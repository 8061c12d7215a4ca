import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from elastinv.bundle import BundleFormatError, FieldBundle, read_bundle, read_csv, write_bundle, write_csv
from elastinv.cli import grayscale_bytes, main, ppm_bytes, read_losses
from elastinv.grid import BoundarySpec, GridGeom, Scales, two_sided_tension

PHANTOM = {
    "phantom": {
        "kind": "inclusion",
        "materials": [{"E": 1000.0, "nu": 0.45}, {"E": 2000.0, "nu": 0.35}],
        "inclusions": [{"center": [0.006, 0.005], "radius": 0.003, "region": 1}],
    },
    "length_x": 0.012,
    "length_y": 0.010,
}


def _bundle(values=None):
    geom = GridGeom(5, 4, 0.5, 0.4)
    rng = np.random.default_rng(7)
    fields = {n: rng.normal(size=(4, 5)) * 10.0 ** rng.integers(-12, 12) for n in ("strain_xx", "strain_yy", "strain_xy")}
    if values is not None:
        fields["strain_xx"] = values
    fields["truth_E"] = np.full((4, 5), 1000.0)
    return FieldBundle(geom, Scales(0.45, 3.0), two_sided_tension(3.0), fields, {"noise": {"level": 0.0}})


def test_bundle_round_trip_bitwise(tmp_path):
    b = _bundle()
    write_bundle(b, tmp_path / "b")
    r = read_bundle(tmp_path / "b")
    assert r.geom == b.geom and r.scales == b.scales and r.boundary == b.boundary
    assert r.meta == b.meta
    assert set(r.fields) == set(b.fields)
    for name in b.fields:
        assert r.fields[name].tobytes() == np.asarray(b.fields[name], dtype=np.float64).tobytes()


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 5), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_property(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("csv") / "f.csv"
    write_csv(p, values)
    np.testing.assert_array_equal(read_csv(p), values)


def test_csv_layout_row0_is_bottom(tmp_path):
    write_csv(tmp_path / "f.csv", np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert (tmp_path / "f.csv").read_text() == "1,2\n3,4\n"


def test_version_guard(tmp_path):
    write_bundle(_bundle(), tmp_path / "b")
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    meta["format_version"] = 99
    (tmp_path / "b" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(BundleFormatError, match="format_version"):
        read_bundle(tmp_path / "b")


def test_bundle_shape_checks(tmp_path):
    with pytest.raises(BundleFormatError):
        write_bundle(_bundle(np.zeros((3, 5))), tmp_path / "bad")
    write_bundle(_bundle(), tmp_path / "b")
    write_csv(tmp_path / "b" / "strain_xx.csv", np.zeros((4, 4)))
    with pytest.raises(BundleFormatError):
        read_bundle(tmp_path / "b")


# rendering -------------------------------------------------------------------------

def test_render_two_value_field():
    assert set(grayscale_bytes(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0, 1.0).ravel()) == {0, 255}


def test_render_clamps():
    g = grayscale_bytes(np.array([[2.0, -1.0, 0.5]]), 0.0, 1.0)
    assert g.tolist() == [[255, 0, 128]]


def test_render_constant_field_in_range():
    g = grayscale_bytes(np.full((3, 3), 0.3), 0.0, 1.0)
    assert np.all(g == int(np.floor(255 * 0.3 + 0.5))) and g[0, 0] == 77


def test_render_degenerate_range():
    assert not grayscale_bytes(np.full((2, 2), 5.0)).any()
    with pytest.raises(ValueError):
        grayscale_bytes(np.array([[0.0, 1.0]]), 0.5, 0.5)


def test_render_nan_is_black_and_ignored_for_range():
    g = grayscale_bytes(np.array([[np.nan, 1.0, 3.0]]))
    assert g.tolist() == [[0, 0, 255]]


def test_ppm_layout_top_row_first():
    field = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    data = ppm_bytes(field, 0.0, 1.0)
    header = b"P6\n3 2\n255\n"
    assert data.startswith(header)
    body = data[len(header):]
    assert body == bytes([255] * 9 + [0] * 9)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_render_matches_formula_property(values):
    lo, hi = values.min(), values.max()
    g = grayscale_bytes(values)
    if hi == lo:
        assert not g.any()
        return
    for v, b in zip(values.ravel(), g.ravel()):
        x = 255.0 * (v - lo) / (hi - lo)
        assert abs(int(b) - x) <= 0.5 + 1e-9
    assert g.min() == 0 and g.max() == 255


# command line ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "phantom.json").write_text(json.dumps(PHANTOM))
    assert main(["generate", "--phantom", str(d / "phantom.json"), "--nx", "16", "--ny", "12",
                 "--out", str(d / "clean")]) == 0
    assert main(["generate", "--phantom", str(d / "phantom.json"), "--nx", "16", "--ny", "12",
                 "--noise", "0.1", "--noise-seed", "5", "--out", str(d / "noisy")]) == 0
    return d


def _write_config(path, variant, seeds=(0,), epochs=2):
    path.write_text(json.dumps({"variant": variant, "channels": [4, 8, 16],
                                "budget": {"epochs": epochs}, "seeds": list(seeds)}))
    return str(path)


def test_generate_contents(workdir):
    names = {p.name for p in (workdir / "clean").iterdir()}
    assert {"meta.json", "strain_xx.csv", "strain_yy.csv", "strain_xy.csv", "truth_E.csv", "truth_nu.csv"} <= names
    meta = json.loads((workdir / "clean" / "meta.json").read_text())
    assert meta["noise"]["level"] == 0.0
    assert meta["nx"] == 16 and meta["ny"] == 12
    assert meta["phantom"]["kind"] == "inclusion"
    noisy = json.loads((workdir / "noisy" / "meta.json").read_text())
    assert noisy["noise"]["level"] == 0.1 and noisy["noise"]["seed"] == 5
    assert not np.array_equal(read_csv(workdir / "noisy" / "strain_xx.csv"),
                              read_csv(workdir / "clean" / "strain_xx.csv"))


def test_generate_is_byte_identical(workdir, tmp_path):
    main(["generate", "--phantom", str(workdir / "phantom.json"), "--nx", "16", "--ny", "12",
          "--out", str(tmp_path / "again")])
    for p in (workdir / "clean").iterdir():
        assert (tmp_path / "again" / p.name).read_bytes() == p.read_bytes()


def test_invert_p_has_no_stress_or_psi(workdir, tmp_path):
    cfg = _write_config(tmp_path / "p.json", "P")
    assert main(["invert", "--data", str(workdir / "clean"), "--model", cfg, "--out", str(tmp_path / "o")]) == 0
    names = {p.name for p in (tmp_path / "o" / "run-0").iterdir()}
    assert {"est_E.csv", "est_nu.csv", "losses.csv", "valid_mask.csv"} <= names
    assert not any(n.startswith("est_stress") or n.startswith("psi_") for n in names)


def test_invert_w1_three_seeds(workdir, tmp_path):
    cfg = _write_config(tmp_path / "w.json", "PS-W1", seeds=(0, 1, 2))
    out = tmp_path / "o"
    assert main(["invert", "--data", str(workdir / "clean"), "--model", cfg, "--out", str(out)]) == 0
    for s in (0, 1, 2):
        names = {p.name for p in (out / f"run-{s}").iterdir()}
        assert {"psi_C.csv", "psi_E.csv", "psi_sides.csv", "psi_topbottom.csv", "est_stress_xy.csv"} <= names
    assert read_csv(out / "run-0" / "psi_sides.csv").shape == (2, 10)
    assert read_csv(out / "run-0" / "psi_topbottom.csv").shape == (2, 16)
    summary = json.loads((out / "aggregate" / "summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2] and summary["epochs"] == 2
    losses = read_losses(out / "run-0" / "losses.csv")
    header = (out / "run-0" / "losses.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "epoch" and header[-3:] == ["total", "E_error", "nu_error"]
    np.testing.assert_array_equal(losses["epoch"], [1, 2])
    terms = header[1:-3]
    np.testing.assert_allclose(sum(losses[t] for t in terms), losses["total"], rtol=1e-12)
    curves = (out / "aggregate" / "curves.csv").read_text().splitlines()
    assert len(curves) == 3 and curves[0].startswith("epoch,")


def test_invert_rejects_bad_config(workdir, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"variant": "nope", "budget": {"epochs": 1}}))
    assert main(["invert", "--data", str(workdir / "clean"), "--model", str(tmp_path / "c.json"),
                 "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "d.json").write_text("{not json")
    assert main(["invert", "--data", str(workdir / "clean"), "--model", str(tmp_path / "d.json"),
                 "--out", str(tmp_path / "o")]) == 2


def test_evaluate_truth_against_itself(workdir, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["evaluate", "--est", str(workdir / "clean"), "--truth", str(workdir / "clean"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "E_error,nu_error,valid_pixels,total_pixels"
    assert lines[1] == "0,0,192,192"
    assert not read_csv(tmp_path / "error_map_E.csv").any()


def test_evaluate_scaled_estimate_and_mask(workdir, tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    tE = read_csv(workdir / "clean" / "truth_E.csv")
    write_csv(est / "est_E.csv", 1.1 * tE)
    write_csv(est / "est_nu.csv", read_csv(workdir / "clean" / "truth_nu.csv"))
    mask = np.ones_like(tE)
    mask.ravel()[[3, 17, 40, 41, 42, 90, 100, 150, 151, 191]] = 0.0
    write_csv(est / "valid_mask.csv", mask)
    main(["evaluate", "--est", str(est), "--truth", str(workdir / "clean"), "--out", str(tmp_path / "m.csv")])
    e, nu, valid, total = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")
    assert float(e) == pytest.approx(0.1, rel=1e-12) and float(nu) == 0.0
    assert int(valid) == int(total) - 10
    err = read_csv(tmp_path / "error_map_E.csv")
    assert np.isnan(err).sum() == 10


def test_evaluate_geometry_mismatch(workdir, tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    write_csv(est / "est_E.csv", np.ones((3, 3)))
    write_csv(est / "est_nu.csv", np.ones((3, 3)))
    assert main(["evaluate", "--est", str(est), "--truth", str(workdir / "clean"), "--out", str(tmp_path / "m.csv")]) == 2


def test_render_command(tmp_path):
    write_csv(tmp_path / "f.csv", np.array([[0.0, 0.5], [1.0, 2.0]]))
    assert main(["render", "--field", str(tmp_path / "f.csv"), "--out", str(tmp_path / "f.ppm"),
                 "--min", "0", "--max", "1"]) == 0
    assert (tmp_path / "f.ppm").read_bytes() == b"P6\n2 2\n255\n" + bytes([255] * 6 + [0] * 3 + [128] * 3)
    assert main(["render", "--field", str(tmp_path / "f.csv"), "--out", str(tmp_path / "g.ppm"),
                 "--min", "1", "--max", "1"]) == 2


def test_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--nx", "4"])
    assert exc.value.code == 1
    assert main(["render", "--field", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "x.ppm")]) == 2
    spec = dict(PHANTOM, boundary=dict(two_sided_tension(1.0).to_dict(), auto_pin=False))
    (tmp_path / "p.json").write_text(json.dumps(spec))
    assert main(["generate", "--phantom", str(tmp_path / "p.json"), "--nx", "8", "--ny", "8",
                 "--out", str(tmp_path / "o")]) == 3


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "elastinv.cli", "render", "--field", str(tmp_path / "nope.csv"),
                        "--out", str(tmp_path / "x.ppm")], capture_output=True, text=True)
    assert r.returncode == 2 and "elastinv:" in r.stderr


def test_boundary_round_trip():
    b = BoundarySpec.from_dict(two_sided_tension(2.5).to_dict())
    assert b == two_sided_tension(2.5)
