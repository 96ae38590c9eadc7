import pytest

from aggdiff.config import PRESETS, load_config, parse_config, preset, preset_text
from aggdiff.exceptions import ConfigError
from aggdiff.mesh import build_grid, integrate, write_field
from aggdiff.profiles import gaussian

FOKKER_PLANCK = """
[grid]
cells = 64
bounds = -4, 4

[model]
internal = linear
potential = power
potential.p = 2
potential.strength = 0.5
initial = gaussian
initial.center = 1
initial.width = 0.5

[time]
t_end = 0.2
dt = 0.05
"""


def test_single_model_configuration():
    config = parse_config(FOKKER_PLANCK)
    assert config.single
    assert config.grid.shape == (64,)
    assert config.model.internal.variant == "linear"
    assert config.model.potential.strength == 0.5
    assert config.time.t_end == 0.2
    assert config.time.solver.dt == 0.05
    assert integrate(config.state) == pytest.approx(1.0)
    assert config.output.tag == "run"


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_parses(name):
    config = preset(name)
    assert config.output.tag.startswith(name)
    assert all(integrate(f) > 0 for f in config.initial)


def test_fair_competition_variants_scale_the_critical_chi():
    sub = preset("ks_fair_competition", "subcritical")
    sup = preset("ks_fair_competition", "supercritical")
    assert sub.model.kernel.strength > 0
    assert sup.model.kernel.strength == pytest.approx(8.0 * sub.model.kernel.strength)
    assert sup.output.tag == "ks_fair_competition_supercritical"
    with pytest.raises(ConfigError, match="subcritical"):
        preset_text("ks_fair_competition", "critical")
    with pytest.raises(ConfigError):
        preset_text("heat", "subcritical")


def test_unknown_preset_lists_the_known_ones():
    with pytest.raises(ConfigError) as err:
        preset("nope")
    assert "barenblatt" in str(err.value)
    assert err.value.lineno is None


def test_invalid_kernel_is_reported_on_its_line():
    text = "[grid]\ncells = 32\nbounds = -1, 1\n\n[model]\ninternal = linear\nkernel = power\nkernel.k = -3\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.lineno == 7
    assert str(err.value).startswith("line 7:")


def test_missing_kernel_parameter():
    text = "[grid]\ncells = 32\n[model]\nkernel = gaussian\nkernel.amplitude = 1\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.lineno == 4


@pytest.mark.parametrize(
    "extra, lineno",
    [
        ("[time]\nfoo = 1\n", 7),
        ("[bogus]\n", 6),
        ("[time]\ndt = fast\n", 7),
        ("[time]\nnewton = maybe\n", 7),
        ("[time]\nt_end = -1\n", 7),
    ],
)
def test_unknown_or_invalid_keys(extra, lineno):
    text = "[grid]\ncells = 32\n[model]\ninternal = linear\n\n" + extra
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.lineno == lineno


def test_structural_errors():
    with pytest.raises(ConfigError):
        parse_config("[model]\ninternal = linear\n")
    with pytest.raises(ConfigError):
        parse_config("[grid]\ncells = 32\n")
    with pytest.raises(ConfigError):
        parse_config("cells = 32\n")
    with pytest.raises(ConfigError):
        parse_config("[grid]\ncells = 32\n[model]\n[species.1]\n")
    with pytest.raises(ConfigError):
        parse_config("[grid]\ncells = 32\n[species.2]\n")


def test_species_system():
    text = """
[grid]
cells = 64
bounds = -3, 3

[species.1]
internal = power
internal.m = 2
initial = gaussian
initial.center = -1
initial.width = 0.4
initial.mass = 0.5

[species.2]
initial = gaussian
initial.center = 1
initial.width = 0.4

[coupling]
epsilon = 0.2
w12 = gaussian
w12.amplitude = 1
w12.width = 0.5
w21 = exponential
w21.amplitude = 1
w21.length = 0.5
"""
    config = parse_config(text)
    assert not config.single
    system = config.system
    assert system.size == 2
    assert system.epsilon == 0.2
    assert system.species_masses == pytest.approx((0.5, 1.0))
    assert system.coupling[0][1].variant == "gaussian"
    assert system.coupling[1][0].variant == "exponential"
    assert system.coupling[0][0].is_zero
    assert not system.is_symmetric
    assert len(config.state) == 2
    with pytest.raises(ConfigError):
        config.model


def test_coupling_to_a_missing_species():
    text = "[grid]\ncells = 16\n[species.1]\n[coupling]\nw13 = gaussian\nw13.width = 1\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.lineno == 5


def test_initial_field_from_a_file(tmp_path):
    grid = build_grid(1, 32, (-2.0, 2.0))
    path = tmp_path / "start.adfv"
    write_field(str(path), gaussian(grid, width=0.3, mass=2.0))
    text = f"[grid]\ncells = 32\nbounds = -2, 2\n[model]\ninternal = linear\ninitial = file\ninitial.path = {path}\n"
    config = parse_config(text)
    assert integrate(config.state) == pytest.approx(2.0)
    assert config.system.species_masses == pytest.approx((2.0,))
    other = f"[grid]\ncells = 16\nbounds = -2, 2\n[model]\ninitial = file\ninitial.path = {path}\n"
    with pytest.raises(ConfigError, match="different grid"):
        parse_config(other)


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(FOKKER_PLANCK)
    assert load_config(str(path)).grid.size == 64
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.ini"))


def test_driver_sections():
    text = FOKKER_PLANCK + """
[steady]
theta = 0.25
whole_space = yes

[sweep]
from = 0.5
to = 2
steps = 4

[particles]
n = 100
sizes = 10, 100

[jko]
quantiles = 64
"""
    config = parse_config(text)
    assert config.steady.theta == 0.25
    assert config.steady.whole_space
    assert (config.sweep.start, config.sweep.stop, config.sweep.steps) == (0.5, 2.0, 4)
    assert config.particles.sizes == (10, 100)
    assert config.jko.quantiles == 64
    with pytest.raises(ConfigError):
        parse_config(FOKKER_PLANCK + "[steady]\ntheta = 2\n")
