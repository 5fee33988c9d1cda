import contextlib
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from synids.traffic_synth import DEFAULT_PROFILES, AttackSpec, ScenarioSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (title, passed, seconds, note)
CRITERIA = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record one acceptance criterion's outcome for the end-of-run summary."""
    start = time.perf_counter()
    note = {}
    try:
        yield note
    except BaseException:
        CRITERIA[number] = (title, False, time.perf_counter() - start, note.get("text", ""))
        print(f"criterion {number:>2} FAIL  {title}")
        raise
    CRITERIA[number] = (title, True, time.perf_counter() - start, note.get("text", ""))
    print(f"criterion {number:>2} PASS  {title}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, secs, text = CRITERIA[number]
        extra = f"  [{text}]" if text else ""
        terminalreporter.write_line(
            f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title} ({secs:.1f}s){extra}")


def scenario(seed=0, duration=30.0, attack=None, clients=5, rate=24.45, profiles=None):
    """Small mixed scenario; ``attack`` is (start_s, end_s) or None."""
    names = profiles or ["http", "https", "ssh", "bittorrent"]
    spec = ScenarioSpec(duration_s=duration, seed=seed,
                        profiles=[replace(DEFAULT_PROFILES[n]) for n in names])
    if attack is not None:
        spec.attack = AttackSpec(True, attack[0], attack[1], rate, clients)
    return spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square_image():
    img = np.zeros((200, 200), np.uint8)
    img[50:150, 50:150] = 255
    return img
