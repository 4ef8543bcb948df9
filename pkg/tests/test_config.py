import copy
import json
from pathlib import Path

import numpy as np
import pytest

from tclgen.baths import BathCorrelation, DiscreteBath
from tclgen.config import ConfigError, build_config, parse_config, parse_matrix, write_canonical

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = {
    "system": {"d": 2, "H_S": [[0.5, 0.0], [0.0, -0.5]], "S": [[0.0, 1.0], [1.0, 0.0]]},
    "bath": {"kind": "ohmic", "eta": 0.1, "omega_c": 5.0},
    "method": {"grid": {"dt": 0.01, "n_steps": 10}},
    "initial_state": {"rho": [[1.0, 0.0], [0.0, 0.0]]},
}


def _raw(**patch):
    raw = copy.deepcopy(MINIMAL)
    for path, value in patch.items():
        *head, last = path.split("__")
        block = raw
        for key in head:
            block = block[key]
        if value is None:
            del block[last]
        else:
            block[last] = value
    return raw


def test_minimal_config_with_defaults():
    cfg = build_config(_raw(), "minimal")
    assert cfg.tcl_order == 2 and cfg.coupling == 1.0
    assert isinstance(cfg.bath, BathCorrelation)
    assert len(cfg.grid) == 11
    assert not cfg.resummation.enabled
    assert cfg.formats == ("csv", "json")
    assert cfg.oracle is None and cfg.correlation is None


def test_zero_step_rejected():
    with pytest.raises(ConfigError, match="grid.dt must be positive"):
        build_config(_raw(method__grid__dt=0.0))


def test_non_hermitian_hamiltonian_named():
    with pytest.raises(ConfigError) as err:
        build_config(_raw(system__H_S=[[0.0, 1.0], [0.0, 0.0]]))
    assert any("system.H_S" in e and "Hermitian" in e for e in err.value.errors)


def test_all_errors_reported_together():
    raw = _raw(method__grid__dt=-1.0, system__S=None, bath__kind="lorentzian")
    with pytest.raises(ConfigError) as err:
        build_config(raw)
    msgs = err.value.errors
    assert any("grid.dt" in m for m in msgs)
    assert any("system.S" in m for m in msgs)
    assert any("bath.kind" in m for m in msgs)


def test_unsupported_order_and_state_errors():
    with pytest.raises(ConfigError, match="tcl_order"):
        build_config(_raw(method__tcl_order=3))
    with pytest.raises(ConfigError, match="initial_state.rho"):
        build_config(_raw(initial_state__rho=[[2.0, 0.0], [0.0, 0.0]]))


def test_resummation_requires_fourth_order():
    with pytest.raises(ConfigError, match="requires tcl_order = 4"):
        build_config(_raw(method__resummation={"enabled": True}))


def test_complex_matrix_entries():
    errors = []
    m = parse_matrix([[1.0, [0.0, -1.0]], [[0.0, 1.0], 1.0]], "x", errors, 2)
    assert not errors
    np.testing.assert_allclose(m, [[1, -1j], [1j, 1]])
    parse_matrix([[1.0, "a"], [0.0, 1.0]], "x", errors, 2)
    assert errors and "x[0][1]" in errors[0]


def test_discrete_bath_config():
    raw = _raw(bath={"kind": "discrete", "modes": [{"frequency": 1.0, "coupling": 0.2, "kind": "qubit"}]})
    cfg = build_config(raw)
    assert isinstance(cfg.bath, DiscreteBath) and cfg.bath.dim == 2
    with pytest.raises(ConfigError, match="bath.modes"):
        build_config(_raw(bath={"kind": "discrete", "modes": []}))


def test_hash_round_trip(tmp_path):
    cfg = parse_config(CONFIGS / "spin_boson_tcl4.toml")
    out = tmp_path / "canonical.json"
    write_canonical(cfg, out)
    again = parse_config(out)
    assert again.config_hash == cfg.config_hash
    assert json.loads(out.read_text())["method"]["tcl_order"] == 4


def test_hash_sensitive_to_content():
    a = build_config(_raw())
    b = build_config(_raw(method__grid__n_steps=11))
    assert a.config_hash != b.config_hash


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("/nonexistent/config.toml")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = parse_config(path)
    assert cfg.name == path.stem
