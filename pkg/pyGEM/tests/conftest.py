#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import logging
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np
import pytest

from ..gem_graph import GEMLabelSet, GEMHeteroGraph, GEMFeatureMatrix, build_features, build_graph
from ..gem_ingest import GEMEvent, GEMDeviceTypeRegistry, GEMTimeWindow, EventKind
from ..gem_logging import set_severity


@pytest.fixture(autouse=True)
def quiet_logging():
    set_severity(logging.WARN)
    yield
    set_severity(logging.INFO)


@pytest.fixture
def make_events() -> Callable[..., List[GEMEvent]]:
    """
    Creates login events from ``(account, device)`` or ``(account, device, type)`` tuples.
    """
    def factory(pairs: Iterable[Sequence], timestamp: int = 0, device_type: str = "UMID") -> List[GEMEvent]:
        events = []
        for pair in pairs:
            t = pair[2] if len(pair) > 2 else device_type
            ts = pair[3] if len(pair) > 3 else timestamp
            events.append(GEMEvent(pair[0], pair[1], t, EventKind.LOGIN, ts))
        return events
    return factory


@pytest.fixture
def two_types() -> GEMDeviceTypeRegistry:
    return GEMDeviceTypeRegistry(["UMID", "MAC"])


@pytest.fixture
def random_hetero() -> Callable[..., Tuple[GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet]]:
    """
    Builds a random heterogeneous graph with random activity, and random labels covering every account.
    """
    def factory(seed: int, n_accounts: int = 20, n_devices: int = 10, n_types: int = 2, p: int = 6,
                edge_prob: float = 0.25) -> Tuple[GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet]:
        rng = np.random.default_rng(seed)
        registry = GEMDeviceTypeRegistry(["UMID", "MAC", "IMSI", "TID"][:n_types])
        window = GEMTimeWindow.from_slots(0, p)
        events = []
        for a in range(n_accounts):
            devices = [j for j in range(n_devices) if rng.random() < edge_prob]
            if len(devices) == 0:
                devices = [int(rng.integers(n_devices))]
            for j in devices:
                for _ in range(int(rng.integers(1, 4))):
                    events.append(GEMEvent(f"a{a}", f"d{j}", registry.names[j % n_types], EventKind.LOGIN,
                                           int(rng.integers(window.start, window.end))))
        graph = build_graph(events, registry)
        features = build_features(events, graph, window)
        y = np.where(np.arange(graph.n_accounts) % 2 == 0, 1, -1)
        labels = GEMLabelSet.from_arrays(np.arange(graph.n_accounts), rng.permutation(y))
        return graph, features, labels
    return factory


@pytest.fixture
def separable_gang(make_events) -> Tuple[GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet]:
    """
    Ten malicious accounts sharing one device and ten pairs of normal accounts each sharing a device. Every account
    has a single event in the first hour, so only the graph structure separates the classes.
    """
    pairs = [(f"m{i}", "shared") for i in range(10)]
    pairs += [(f"n{i}", f"pair{i // 2}") for i in range(20)]
    events = make_events(pairs)
    graph = build_graph(events, GEMDeviceTypeRegistry(["UMID"]))
    features = build_features(events, graph, GEMTimeWindow.from_slots(0, 24))
    labels = GEMLabelSet.from_mapping({a: (1 if a.startswith("m") else -1) for a, _ in pairs}, graph)
    return graph, features, labels
