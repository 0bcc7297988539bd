import numpy as np
import pytest

from parmis import governors, socsim
from parmis.errors import InputError
from parmis.policy import BIG_FREQS_MHZ, LITTLE_FREQS_MHZ


@pytest.fixture(scope="module")
def suite_results():
    suite = socsim.load_suite()
    return {name: socsim.simulate(governors.make(name), suite) for name in governors.GOVERNORS}


def test_performance_is_fastest(suite_results):
    times = {n: r.exec_time for n, r in suite_results.items()}
    assert min(times, key=times.get) == "performance"


def test_powersave_draws_least_power_every_epoch(suite_results):
    save = [r.power for r in suite_results["powersave"].trace]
    for name, res in suite_results.items():
        assert all(a <= b for a, b in zip(save, [r.power for r in res.trace])), name


def test_reset_makes_runs_repeatable():
    gov = governors.make("ondemand")
    app = [socsim.load_workload("fft")]
    a, b = socsim.simulate(gov, app), socsim.simulate(gov, app)
    assert (a.exec_time, a.energy) == (b.exec_time, b.energy)


def state(big=0.0, little=0.0):
    s = np.zeros(12)
    s[7] = big
    s[6] = little
    return s


def test_ondemand_steps_one_level():
    gov = governors.make("ondemand")
    d1 = gov.decide(state(big=0.9))
    d2 = gov.decide(state(big=0.9))
    d3 = gov.decide(state(big=0.5))
    d4 = gov.decide(state(big=0.1))
    assert [d.f_big for d in (d1, d2, d3, d4)] == [300, 400, 400, 300]
    assert d1.f_little == LITTLE_FREQS_MHZ[0]
    assert (d1.a_big, d1.a_little) == (4, 4)


def test_interactive_jumps_on_rising_edge():
    gov = governors.make("interactive")
    assert gov.decide(state(little=0.95)).f_little == LITTLE_FREQS_MHZ[-1]
    # sustained load stays at the top, a drop walks down one step at a time
    assert gov.decide(state(little=0.95)).f_little == LITTLE_FREQS_MHZ[-1]
    assert gov.decide(state(little=0.1)).f_little == LITTLE_FREQS_MHZ[-2]
    assert gov.decide(state(big=0.85)).f_big == BIG_FREQS_MHZ[-1]


def test_fixed_governors():
    assert governors.make("performance").decide(state()) == (4, 4, 2000, 1400)
    assert governors.make("powersave").decide(state(1, 1)) == (0, 1, 200, 200)


def test_unknown_governor():
    with pytest.raises(InputError, match="schedutil"):
        governors.make("schedutil")
