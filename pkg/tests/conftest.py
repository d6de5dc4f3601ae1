import pytest
from hypothesis import settings

from rsbeam.channel import complex_normal, rng_for
from rsbeam.model import ChannelSet, PrecoderSet, SystemDims

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_instance(seed, N=2, Nt=2, M=2, per_group=2, scale=1.0):
    dims = SystemDims(N, Nt, M, M * per_group)
    rng = rng_for(seed, 99)
    ch = ChannelSet(complex_normal(rng, (dims.n_users, N, Nt)))
    pset = PrecoderSet(scale * complex_normal(rng, (N, Nt)), scale * complex_normal(rng, (M, N, Nt)))
    return dims, ch, pset


@pytest.fixture
def dims2222():
    return SystemDims.from_label("2-2-2-2")


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {name} :: {detail}")
