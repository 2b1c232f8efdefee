"""Config parsing: key coverage, radius forms, validation clauses."""

import pytest

from hybridmor.config import ConfigError, RunConfig, parse_config, read_config


def test_defaults():
    cfg = parse_config("")
    assert cfg.dim == 3 and cfg.divisions == 8 and cfg.p == 2
    assert cfg.n == 4 and cfg.partition == "rcb"
    assert cfg.r_value == 4.0 and cfg.r_relative is True
    assert cfg.eps == (1e-4,)
    assert cfg.alpha == 0.01 and cfg.tol == 1e-10
    assert cfg.workers == 1 and cfg.mode == "single"
    assert cfg.load == "poly" and cfg.load_degree == -1
    assert cfg.oracle is True and cfg.store_q is False
    assert cfg.spectrum == "none"
    assert cfg.mesh is None


def test_all_keys_and_comments():
    cfg = parse_config("""
        # full key coverage
        dim = 2
        divisions = 12          # inline comment
        p = 1
        n = 6
        partition = rcb
        r = 2h
        eps = 1e-2, 1e-3, 1e-4
        alpha = 0.02
        tol = 1e-8
        maxiter = 500
        workers = 3
        out = results/run1
        mode = single
        load = one
        load_degree = 4
        oracle = off
        store_q = on
        spectrum = auto
    """)
    assert cfg.dim == 2 and cfg.divisions == 12 and cfg.p == 1
    assert cfg.n == 6
    assert cfg.r_value == 2.0 and cfg.r_relative is True
    assert cfg.eps == (1e-2, 1e-3, 1e-4)
    assert cfg.alpha == 0.02 and cfg.tol == 1e-8 and cfg.maxiter == 500
    assert cfg.workers == 3 and cfg.out == "results/run1"
    assert cfg.load == "one" and cfg.load_degree == 4
    assert cfg.oracle is False and cfg.store_q is True
    assert cfg.spectrum == "auto"


def test_radius_forms():
    assert parse_config("r = 4h").r_value == 4.0
    assert parse_config("r = 4h").r_relative is True
    cfg = parse_config("r = 0.25")
    assert cfg.r_value == 0.25 and cfg.r_relative is False
    assert parse_config("r = 0").r_value == 0.0
    assert parse_config("r = 1.5h").r_value == 1.5


def test_sweep_and_partition_keys(tmp_path):
    cfg = parse_config("mode = h-sweep\ndivisions_list = 4, 8, 16")
    assert cfg.divisions_list == (4, 8, 16)
    cfg = parse_config(
        "mode = h-sweep\ndivisions_list = 4,8\nn_list = 2,4")
    assert cfg.n_list == (2, 4)
    cfg = parse_config("mode = n-sweep\nn_list = 2, 4, 8")
    assert cfg.n_list == (2, 4, 8)
    cfg = parse_config("partition = file\npartition_file = part.txt")
    assert cfg.partition_file == "part.txt"
    cfg = parse_config("mesh = grid.msh\nspectrum = 0, 3")
    assert cfg.mesh == "grid.msh" and cfg.spectrum == (0, 3)


def test_bool_spellings():
    for text in ("on", "true", "1", "yes"):
        assert parse_config(f"store_q = {text}").store_q is True
    for text in ("off", "false", "0", "no"):
        assert parse_config(f"store_q = {text}").store_q is False
    with pytest.raises(ConfigError, match="expected on/off"):
        parse_config("store_q = maybe")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2.*key = value"):
        parse_config("dim = 2\nnot a setting\n")
    with pytest.raises(ConfigError, match="line 3.*duplicate key 'dim'"):
        parse_config("dim = 2\nn = 4\ndim = 3\n")
    with pytest.raises(ConfigError, match="line 1.*bad value for 'dim'"):
        parse_config("dim = two\n")
    with pytest.raises(ConfigError, match="unknown key 'color'"):
        parse_config("color = red\n")


@pytest.mark.parametrize("text,match", [
    ("mode = fly", "unknown mode"),
    ("load = sin", "unknown load"),
    ("divisions = 0", "divisions must be >= 1"),
    ("dim = 4", "dim must be 2 or 3"),
    ("p = 3", "p must be 1 or 2"),
    ("n = 0", "n must be >= 1"),
    ("workers = 0", "workers must be >= 1"),
    ("maxiter = 0", "maxiter must be >= 1"),
    ("alpha = 0", "alpha must be positive"),
    ("tol = -1", "tol must be positive"),
    ("r = -2h", "r must be >= 0"),
    ("eps = ", "eps list"),
    ("eps = 1e-3, -1e-4", "eps list"),
    ("mode = h-sweep", "divisions_list"),
    ("mode = h-sweep\ndivisions_list = 4,8\nn_list = 2", "n_list"),
    ("mode = n-sweep", "n_list"),
    ("partition = file", "requires partition_file"),
    ("partition = metis", "unknown partition method"),
])
def test_validation_clauses(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_mesh_overrides_divisions_check():
    # an explicit mesh path skips the structured-mesh divisions check
    cfg = parse_config("mesh = grid.msh\ndivisions = 0")
    assert cfg.mesh == "grid.msh"


def test_read_config_roundtrip_and_missing_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dim = 2\nn = 3\n")
    cfg = read_config(path)
    assert cfg.dim == 2 and cfg.n == 3
    with pytest.raises(ConfigError, match="cannot read config"):
        read_config(tmp_path / "absent.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("dim = 9\n")
    with pytest.raises(ConfigError, match="bad.cfg"):
        read_config(bad)


def test_validate_returns_self():
    cfg = RunConfig()
    assert cfg.validate() is cfg
