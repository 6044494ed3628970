import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import trebeca
from trebeca import load_model

TICKET_ENV = {
    "requestDeadline": 2, "checkIssuedPeriod": 2, "retryRequestPeriod": 1,
    "newRequestPeriod": 1, "serviceTime1": 3, "serviceTime2": 7,
}
SENSOR_NAMES = ["netDelay", "adminPeriod", "sensor0Period", "sensor1Period",
                "scientistDeadline", "rescueDeadline"]
SENSOR_ENV = dict(zip(SENSOR_NAMES, (1, 4, 2, 3, 2, 4)))
TICKET_NAMES = ["requestDeadline", "checkIssuedPeriod", "retryRequestPeriod",
                "newRequestPeriod", "serviceTime1", "serviceTime2"]


def bundled_text(name: str) -> str:
    return trebeca.bundled(name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def ticket_model():
    return load_model(bundled_text("ticket_service.rebeca"))


@pytest.fixture(scope="session")
def sensor_model():
    return load_model(bundled_text("sensor_network.rebeca"))


@pytest.fixture(scope="session")
def ping_pong_model():
    return load_model(bundled_text("ping_pong.rebeca"))


@pytest.fixture(scope="session")
def choice_delay_model():
    return load_model(bundled_text("choice_delay.rebeca"))


@pytest.fixture(scope="session")
def deadline_miss_model():
    return load_model(bundled_text("deadline_miss.rebeca"))
