import math

import pytest

from invisible_eit.config import CemSettings, ExperimentConfig, load_config, parse_config
from invisible_eit.errors import ParseError, ValidationError

MINIMAL = "electrodes = 4\nepsilon = 6.0\n"


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.electrode_angles_deg == (1.0, 91.0, 181.0, 271.0)
    assert cfg.epsilon == 6.0 and cfg.seed == "1" and cfg.cem is None
    assert cfg.omega.shape == "concentric_disk"
    run = cfg.run_config()
    assert run.stop_tol == 1e-8 and run.max_iter == 200 and run.tau0.shape == (3, 3)


def test_sections_and_comments():
    text = """
    # full example
    [electrodes]
    count = 6
    offset_deg = 0   # trailing comment
    [run]
    epsilon = 2
    seed = x + y + 1
    max_iter = 50
    [mesh]
    target_h = 0.05
    [omega]
    shape = annulus_sector
    r_in = 0.2
    r_out = 0.6
    angle_span_deg = 90
    [cem]
    impedance = 0.02
    [output]
    dir = results
    raster = 11
    """
    cfg = parse_config(text)
    assert cfg.electrode_angles_deg == (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)
    assert cfg.seed == "x + y + 1" and cfg.max_iter == 50 and cfg.target_h == 0.05
    assert cfg.omega.shape == "annulus_sector"
    assert cfg.cem == CemSettings(math.pi / 32, 0.02)
    assert cfg.output_dir == "results" and cfg.raster == 11


def test_explicit_angles_set_count():
    cfg = parse_config("epsilon = 1\n[electrodes]\nangles_deg = 10, 100, 250\n")
    assert cfg.electrode_count == 3
    assert cfg.electrode_angles_deg == (10.0, 100.0, 250.0)


def test_offset_disk():
    cfg = parse_config("epsilon = 1\n[omega]\nshape = offset_disk\ncenter = 0.1, -0.1\nradius = 0.3\n")
    assert cfg.omega.shape == "offset_disk"


@pytest.mark.parametrize("text, line, column", [
    ("", 1, 1),
    ("# only a comment\n", 1, 1),
    ("epsilon = 1\nnonsense\n", 2, 1),
    ("epsilon = 1\n[run\n", 2, 1),
    ("epsilon = 1\n  bad key = 2\n", 2, 3),
    ("epsilon =\n", 1, 10),
    ("epsilon = 1\nepsilon = 2\n", 2, 1),
    ("[run]\nepsilon = 1\n[run]\n", 3, 1),
])
def test_parse_errors_report_position(text, line, column):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert (info.value.line, info.value.column) == (line, column)


@pytest.mark.parametrize("text, field", [
    ("electrodes = 4\n", "epsilon"),
    ("epsilon = -1\n", "epsilon"),
    ("epsilon = 0\n", "epsilon"),
    ("epsilon = abc\n", "run.epsilon"),
    ("epsilon = 1\ncolour = red\n", "colour"),
    ("epsilon = 1\n[plot]\nx = 1\n", "plot"),
    ("epsilon = 1\n[run]\nfoo = 1\n", "run.foo"),
    ("epsilon = 1\n[run]\nepsilon = 2\n", "run.epsilon"),
    ("epsilon = 1\nelectrodes = 2.5\n", "electrodes.count"),
    ("epsilon = 1\nelectrodes = 1\n", "electrodes.count"),
    ("epsilon = 1\nseed = x +\n", "run.seed"),
    ("epsilon = 1\n[omega]\nshape = square\n", "omega.shape"),
    ("epsilon = 1\n[omega]\nshape = annulus_sector\n", "omega"),
    ("epsilon = 1\n[omega]\nshape = offset_disk\ncenter = 1\n", "omega.center"),
    ("epsilon = 1\n[mesh]\ntarget_h = -0.1\n", "mesh.target_h"),
    ("epsilon = 1\n[run]\nstop_tol = 0\n", "stop_tol"),
    ("epsilon = 1\n[cem]\nwidth = 3\n", "width"),
    ("epsilon = 1\n[electrodes]\nangles_deg = 10, 10\n", "electrodes"),
])
def test_validation_errors_name_field(text, field):
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert info.value.field == field


def test_overrides():
    cfg = parse_config("epsilon = 1\n[electrodes]\nangles_deg = 0, 120, 240\n")
    new = cfg.with_overrides(epsilon=3, electrodes=8, seed="x", output_dir="o")
    assert new.epsilon == 3.0 and new.electrode_count == 8 and new.angles_deg is None
    assert new.seed == "x" and new.output_dir == "o"
    assert cfg.with_overrides() == cfg
    with pytest.raises(ValidationError):
        cfg.with_overrides(epsilon=-2)


def test_builtin_seed_name_accepted():
    from invisible_eit.basis import BUILTIN_SEEDS
    name = next(iter(BUILTIN_SEEDS))
    assert ExperimentConfig(epsilon=1.0, seed=name).seed == name


def test_load_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(MINIMAL)
    assert load_config(path) == parse_config(MINIMAL)
