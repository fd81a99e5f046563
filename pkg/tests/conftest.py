import numpy as np
import pytest

from tsadkit.core import AnomalySpec, Event, EventList, Signal, SyntheticSpec, generate_synthetic


@pytest.fixture
def sine_signal():
    signal, truth = generate_synthetic(SyntheticSpec(
        n=1000, seed=7, noise_sd=0.05,
        anomalies=AnomalySpec(count=3, kind="spike", min_len=5, max_len=20)))
    return signal, truth


@pytest.fixture
def clean_signal():
    signal, _ = generate_synthetic(SyntheticSpec(
        n=600, seed=3, noise_sd=0.01, anomalies=AnomalySpec(count=0)))
    return signal


def make_events(pairs, source="detected"):
    return EventList(tuple(Event(t_s=a, t_e=b, source=source) for a, b in pairs))


def simple_signal(n=100, m=1, t0=0, interval=1, fill=None, seed=0):
    rng = np.random.default_rng(seed)
    ts = t0 + interval * np.arange(n, dtype=np.int64)
    vals = rng.normal(size=(n, m)) if fill is None else np.full((n, m), float(fill))
    return Signal(name="test", timestamps=ts, values=vals)
