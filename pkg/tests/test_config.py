import math

import pytest

from electroperm.config import ConfigError, SimConfig, dump_config, load_config, parse_config
from electroperm.mesh import GeometryError


@pytest.mark.parametrize("name,kind,tb", [("additive", "additive_uniform", 30.0), ("multiplicative", "linear_multiplicative", 50.0)])
def test_presets(name, kind, tb):
    c = load_config(name)
    assert c.noise.kind == kind and c.noise.alpha == 0.5
    assert (c.t_burn_in, c.t_final, c.n_trajectories, c.dt) == (tb, 300.0, 50, 0.01)
    assert (c.physics.sigma_i, c.physics.sigma_e, c.physics.S1, c.physics.tau_res) == (0.239, 2.632, 10001.0, 10.0)


def test_round_trip():
    c = load_config("multiplicative")
    back = parse_config(dump_config(c), base_dir=c.base_dir)
    assert back == c


def test_defaults_are_table_values():
    c = parse_config("")
    assert c == SimConfig()
    assert c.physics.k_ep == 40.0 and c.physics.V_th == 2.5 and c.geometry.target_h == 0.02


def test_angles():
    c = parse_config("sim.record_theta = pi, -pi/2, 2pi/3, 0.25")
    assert c.record_theta == pytest.approx((math.pi, -math.pi / 2, 2 * math.pi / 3, 0.25))


def test_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("physics.sigma = 1")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("sim.dt = 0.01\nsim.t_final = abc")
    with pytest.raises(ConfigError):
        parse_config("sim.t_burn_in = 400")
    with pytest.raises(ConfigError):
        parse_config("sim.tau_convention = seconds")
    with pytest.raises(ConfigError):
        load_config("no-such-preset")


def test_geometry_errors_keep_their_type():
    c = parse_config("geometry.radius = 0.49")
    with pytest.raises(GeometryError):
        c.geometry.validate()


def test_hash_ignores_ensemble_size_only():
    c = load_config("additive")
    assert c.config_hash() == c.replace(n_trajectories=3, checkpoint_every=10).config_hash()
    assert c.config_hash() != c.replace(base_seed=1).config_hash()
    assert c.config_hash() != c.replace(dt=0.005).config_hash()
