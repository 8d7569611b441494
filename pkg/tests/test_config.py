from pathlib import Path

import pytest

from crystal_tdl.config import EXPERIMENTS, SCHEMAS, defaults, load_config, parse_config
from crystal_tdl.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_shipped_configs_parse_and_match_defaults(name):
    cfg = load_config(CONFIGS / f"{name}.ini")
    assert cfg.experiment == name
    assert cfg.params == defaults(name)
    assert cfg.out_dir == f"reports/{name}"


def test_minimal_config_takes_defaults():
    cfg = parse_config("[experiment]\nname = madelung\n")
    assert cfg.section("sweep")["etas"] == (1.0, 1.5, 2.0, 3.0)
    assert cfg.seed == 0 and cfg.formats == ("json", "csv")


def test_fractions_in_sweeps():
    cfg = parse_config("[experiment]\nname = ks-cb\n[sweep]\neps = 1/2, 0.25, 1/8\n")
    assert cfg.section("sweep")["eps"] == (0.5, 0.25, 0.125)


def test_hash_ignores_layout_and_output():
    a = parse_config("[experiment]\nname = madelung\nseed = 3\n[sweep]\netas = 1, 2\n")
    b = parse_config("# comment\n[sweep]\netas=1.0,2.0   ; inline\n\n[experiment]\nseed=3\nname=madelung\n[output]\ndir = elsewhere\n")
    assert a.sha256 == b.sha256
    c = parse_config("[experiment]\nname = madelung\nseed = 4\n[sweep]\netas = 1, 2\n")
    assert c.sha256 != a.sha256


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_ini_round_trip(name):
    cfg = parse_config(f"[experiment]\nname = {name}\n")
    back = parse_config(cfg.to_ini())
    assert back == cfg and back.sha256 == cfg.sha256


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[model]\na = 1\n", r"missing \[experiment\]"),
        ("[experiment]\nname = nope\n", "unknown experiment"),
        ("[experiment]\nname = madelung\ncolour = red\n", "unknown keys"),
        ("[experiment]\nname = madelung\n[model]\nlattice_vectors = 1, 0, 0\n", "nine numbers"),
        ("[experiment]\nname = madelung\n[model]\nfoo = 1\n", "unknown keys"),
        ("[experiment]\nname = madelung\n[scf]\nbeta = 0.3\n", "not used"),
        ("[experiment]\nname = madelung\n[tolerances]\ntol = -1e-9\n", "must be positive"),
        ("[experiment]\nname = madelung\n[tolerances]\ntol = 0\n", "must be positive"),
        ("[experiment]\nname = madelung\n[sweep]\netas =\n", "must not be empty"),
        ("[experiment]\nname = ks-cb\n[sweep]\neps = 0.3\n", "1/n"),
        ("[experiment]\nname = rhf-supercell\n[sweep]\nL = 2, 3\n", "at least three"),
        ("[experiment]\nname = rhf-supercell\n[scf]\nbeta = 1.5\n", "beta"),
        ("[experiment]\nname = rhf-supercell\n[scf]\nscheme = broyden\n", "scheme"),
        ("[experiment]\nname = tfw-scaling\n[acceptance]\np_band = 2.3, 1.7\n", "band"),
        ("[experiment]\nname = tfw-scaling\n[model]\npoints_per_cell = many\n", "cannot read"),
        ("[experiment]\nname = madelung\n[output]\nformats = xml\n", "formats"),
        ("[experiment]\nname = madelung\nname = ks-cb\n", "malformed"),
        ("[experiment]\nname = madelung\nworkers = -1\n", "workers"),
    ],
)
def test_strict_parsing_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_every_schema_declares_tolerances_positive():
    for name, schema in SCHEMAS.items():
        for k, (kind, default) in schema.get("tolerances", {}).items():
            assert default > 0, (name, k)
