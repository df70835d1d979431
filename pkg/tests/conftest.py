import numpy as np
import pytest

from action_rnn.datapipe import EncodedSequence, RawEvent, RawSession
from action_rnn.model import init_params
from action_rnn.numkernel import make_rng
from action_rnn.synth import SynthConfig, generate


def session(user_id, *events):
    """Build a RawSession from (item, [recs]) pairs or bare item strings."""
    out = []
    for ev in events:
        if isinstance(ev, str):
            out.append(RawEvent(item=ev))
        else:
            item, recs = ev
            out.append(RawEvent(item=item, recs=tuple(recs)))
    return RawSession(user_id=user_id, events=tuple(out))


@pytest.fixture
def tiny_params():
    params = init_params(make_rng(0), V_x=12, d=4, k=5)
    # nonzero biases so that bias gradients are exercised
    params.b_z[:] = np.linspace(-0.2, 0.2, 5)
    params.b_out[:] = np.linspace(-0.1, 0.1, 12)
    return params


@pytest.fixture
def rec_sequence():
    # slates at steps 0 and 2; the step-0 slate is clicked (3 follows it)
    return EncodedSequence(
        items=(1, 3, 5, 7, 2),
        recs=((3, 4), (), (8, 9, 10), (), ()),
    )


@pytest.fixture
def plain_sequence():
    return EncodedSequence(items=(1, 3, 5, 7, 2), recs=((), (), (), (), ()))


@pytest.fixture
def golden_sessions():
    """Corpus around the preprocessing boundaries.

    Counts over the full sessions: p=10, q=9, r=24, s=24, x=2, y=z=w=v=1.
    """
    long_session = [("r" if i % 2 == 0 else "s") for i in range(45)]
    return [
        session("a", *["p"] * 10),
        session("b", *["q"] * 9),
        session("c", *long_session),
        session("d", ("s", ["r", "s", "x", "y", "z", "w", "v"]), "x"),
    ]


@pytest.fixture(scope="session")
def small_corpus():
    config = SynthConfig(
        V=60, n_sessions=300, len_range=(2, 10), n_clusters=6, rec_rate=0.3, seed=1
    )
    sessions, truth = generate(config)
    return sessions, truth
