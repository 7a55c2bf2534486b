import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import TOY_ARPA, hand_elman_weights  # noqa: E402

from lmdecode import RecurrentLm, parse_arpa  # noqa: E402


@pytest.fixture
def toy_arpa():
    return parse_arpa(TOY_ARPA)


@pytest.fixture
def hand_elman():
    return RecurrentLm(hand_elman_weights())
