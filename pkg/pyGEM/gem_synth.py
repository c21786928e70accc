#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import csv
import dataclasses
import io
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np
import numpy.typing as npt

from .gem_config import config_to_dict, derive_seed, make_rng
from .gem_container import atomic_write_text
from .gem_errors import GEMConfigError
from .gem_graph import write_labels
from .gem_ingest import (GEMEvent, GEMDeviceTypeRegistry, GEMTimeWindow, EventKind, EventFormat, DEFAULT_TYPES,
                         write_events, resolve_format)
from .gem_logging import log


@dataclass
class GEMSynthConfig:
    """
    Parameters of the synthetic fraud campaign generator.
    """
    seed: int = 0
    n_normal: int = 5000
    n_gangs: int = 50
    gang_size: int = 20
    normal_devices_per_type: int = 10000
    """The size of the device pool of each type that normal accounts draw from."""
    attacker_device_budget: int = 2
    """The number of devices of each type a gang shares between its accounts."""
    type_coverage: float = 0.8
    """The probability that an account uses a device of any given type."""
    contamination_rate: float = 0.3
    """The mean number of normal pool devices each malicious account also touches (0 to 2)."""
    burst_window_hours: int = 6
    burst_jitter_hours: int = 12
    """Gang members register up to this many hours after their campaign starts."""
    normal_activity_rate: float = 0.05
    """Mean events per hour of a normal account after registration."""
    malicious_burst_rate: float = 3.0
    """Mean events per hour of a bursting account inside its burst window."""
    normal_burst_fraction: float = 0.1
    """The share of normal accounts which also act in a single burst."""
    p: int = 168
    q: int = 0
    n_types: int = 6
    noise_types: Tuple[str, ...] = ()
    """Device types whose edges are wired at random for every account."""
    holdout_hours: int = 24
    label_noise_fraction: float = 0.0
    start: int = 0
    slot_width: int = 3600
    id_prefix: str = ""

    def validate(self):
        for name in ("n_normal", "n_gangs", "gang_size", "attacker_device_budget", "burst_window_hours",
                     "burst_jitter_hours", "q", "holdout_hours", "start"):
            if getattr(self, name) < 0:
                raise GEMConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("normal_activity_rate", "malicious_burst_rate", "contamination_rate"):
            if getattr(self, name) < 0:
                raise GEMConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("type_coverage", "normal_burst_fraction", "label_noise_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise GEMConfigError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if self.contamination_rate > 2:
            raise GEMConfigError(f"contamination_rate must be at most 2, got {self.contamination_rate}")
        if self.p < 1 or self.n_types < 1 or self.slot_width < 1 or self.normal_devices_per_type < 1:
            raise GEMConfigError("p, n_types, slot_width and normal_devices_per_type must be at least 1")
        if self.burst_window_hours > self.p:
            raise GEMConfigError(f"burst_window_hours ({self.burst_window_hours}) can't exceed p ({self.p})")
        if self.holdout_hours >= self.p:
            raise GEMConfigError(f"holdout_hours ({self.holdout_hours}) must be smaller than p ({self.p})")
        if self.n_gangs > 0 and self.gang_size > 0 and self.attacker_device_budget == 0:
            raise GEMConfigError("Gangs need an attacker_device_budget of at least 1")
        names = synth_registry(self).names
        for t in self.noise_types:
            if t not in names:
                raise GEMConfigError(f"Unknown noise type '{t}', expected one of: {', '.join(names)}")


def synth_registry(config: GEMSynthConfig) -> GEMDeviceTypeRegistry:
    """
    Gets the device type registry of a synthetic dataset: the default types, extended with ``Type6, Type7, ...``
    when more are asked for.
    """
    names = list(DEFAULT_TYPES[:config.n_types])
    names += [f"Type{i}" for i in range(len(names), config.n_types)]
    return GEMDeviceTypeRegistry(names)


@dataclass
class GEMSynthDataset:
    config: GEMSynthConfig
    registry: GEMDeviceTypeRegistry
    window: GEMTimeWindow
    events: List[GEMEvent]
    labels: Dict[str, int]
    """Ground truth of every account."""
    train_labels: Dict[str, int]
    """Labels of the accounts registered before the hold out period, after label noise."""
    test_labels: Dict[str, int]
    """Ground truth of the accounts registered during the hold out period."""
    demographics: Dict[str, npt.NDArray[np.float64]] = field(default_factory=dict)
    gang_devices: Set[Tuple[str, str]] = field(default_factory=set)

    def manifest(self) -> Dict[str, object]:
        return {
            "config": config_to_dict(self.config),
            "registry": list(self.registry.names),
            "window": {"start": self.window.start, "end": self.window.end, "slot_width": self.window.slot_width},
            "counts": {
                "events": len(self.events),
                "accounts": len(self.labels),
                "malicious": sum(1 for y in self.labels.values() if y == 1),
                "train_labels": len(self.train_labels),
                "test_labels": len(self.test_labels),
            },
        }


class _ActivityPlan:
    """
    The registration slot and the active slot range of one account.
    """
    def __init__(self, registration: int, first: int, last: int, rate: float):
        self.registration = registration
        self.first = first
        self.last = last
        self.rate = rate


def _device_pool_id(prefix: str, device_type: str, j: int) -> str:
    return f"{prefix}n-{device_type}-{j}"


def _gang_device_id(prefix: str, gang: int, device_type: str, j: int) -> str:
    return f"{prefix}g{gang}-{device_type}-{j}"


def _account_events(rng: np.random.Generator, account_id: str, devices: List[Tuple[str, str]],
                    plan: _ActivityPlan, window: GEMTimeWindow) -> List[GEMEvent]:
    n_slots = plan.last - plan.first
    counts = rng.poisson(plan.rate, size=n_slots)
    slots = list(np.repeat(np.arange(plan.first, plan.last), counts))
    # Every device is used at least once; the first use of the first device is the signup.
    device_slots = [plan.registration] + list(rng.integers(plan.first, plan.last, size=len(devices) - 1))
    pairs = list(zip(device_slots, range(len(devices))))
    pairs += [(s, int(d)) for s, d in zip(slots, rng.integers(0, len(devices), size=len(slots)))]
    offsets = rng.integers(1 if window.slot_width > 1 else 0, window.slot_width, size=len(pairs))
    events = []
    for i, ((slot, d), offset) in enumerate(zip(pairs, offsets)):
        device_id, device_type = devices[d]
        timestamp = window.start + int(slot) * window.slot_width + int(offset)
        if i == 0:
            timestamp = window.start + int(slot) * window.slot_width
        kind = EventKind.SIGNUP if i == 0 else EventKind.LOGIN
        events.append(GEMEvent(account_id, device_id, device_type, kind, timestamp))
    return events


def generate(config: Optional[GEMSynthConfig] = None) -> GEMSynthDataset:
    """
    Generates a labelled synthetic event log.

    Normal accounts draw their devices uniformly from large per type pools and act evenly from their registration
    onward. Each gang shares a small set of devices and its accounts register close to the gang's campaign start
    then act in a short burst. Malicious accounts also touch a few normal pool devices. The result is a pure
    function of the config.

    :param config: the generator config.
    :return: the dataset.
    """
    config = config if config is not None else GEMSynthConfig()
    config.validate()
    rng = make_rng(config.seed, "synth")
    registry = synth_registry(config)
    window = GEMTimeWindow.from_slots(config.start, config.p, config.slot_width)
    prefix = config.id_prefix
    p = config.p
    noise = set(config.noise_types)
    signal_types = [t for t in registry.names if t not in noise]

    def pool_device(device_type: str) -> Tuple[str, str]:
        return _device_pool_id(prefix, device_type, int(rng.integers(config.normal_devices_per_type))), device_type

    def covered_types() -> List[str]:
        types = [t for t in registry.names if rng.random() < config.type_coverage]
        return types if len(types) > 0 else [registry.names[int(rng.integers(len(registry)))]]

    def burst_plan(registration: int) -> _ActivityPlan:
        last = min(registration + max(config.burst_window_hours, 1), p)
        return _ActivityPlan(registration, registration, last, config.malicious_burst_rate)

    events: List[GEMEvent] = []
    labels: Dict[str, int] = {}
    registration: Dict[str, int] = {}
    gang_devices: Set[Tuple[str, str]] = set()

    for i in range(config.n_normal):
        account_id = f"{prefix}n{i}"
        reg = int(rng.integers(p))
        if rng.random() < config.normal_burst_fraction:
            plan = burst_plan(reg)
        else:
            plan = _ActivityPlan(reg, reg, p, config.normal_activity_rate)
        devices = [pool_device(t) for t in covered_types()]
        events += _account_events(rng, account_id, devices, plan, window)
        labels[account_id] = -1
        registration[account_id] = reg

    for g in range(config.n_gangs):
        campaign = int(rng.integers(p - config.burst_window_hours + 1))
        for i in range(config.gang_size):
            account_id = f"{prefix}g{g}-{i}"
            reg = min(campaign + int(rng.integers(config.burst_jitter_hours + 1)), p - 1)
            devices = []
            for t in covered_types():
                if t in noise:
                    devices.append(pool_device(t))
                else:
                    device = (_gang_device_id(prefix, g, t, int(rng.integers(config.attacker_device_budget))), t)
                    devices.append(device)
            if len(signal_types) > 0:
                # Every gang member shares the gang's anchor device.
                anchor = (_gang_device_id(prefix, g, signal_types[0], 0), signal_types[0])
                devices = [anchor] + [d for d in devices if d != anchor]
            gang_devices.update(d for d in devices if d[1] not in noise)
            n_contaminated = int(rng.binomial(2, config.contamination_rate / 2))
            for _ in range(n_contaminated):
                devices.append(pool_device(registry.names[int(rng.integers(len(registry)))]))
            devices = list(dict.fromkeys(devices))
            events += _account_events(rng, account_id, devices, burst_plan(reg), window)
            labels[account_id] = 1
            registration[account_id] = reg

    events.sort(key=lambda e: (e.timestamp, e.account_id, e.device_type, e.device_id))

    holdout_start = p - config.holdout_hours
    test_labels = {a: y for a, y in labels.items() if registration[a] >= holdout_start}
    train_labels = {a: y for a, y in labels.items() if registration[a] < holdout_start}
    if config.label_noise_fraction > 0 and len(train_labels) > 0:
        ids = sorted(train_labels)
        n_flip = int(round(config.label_noise_fraction * len(ids)))
        for j in rng.permutation(len(ids))[:n_flip]:
            train_labels[ids[j]] = -train_labels[ids[j]]

    demographics: Dict[str, npt.NDArray[np.float64]] = {}
    if config.q > 0:
        for account_id in sorted(labels):
            demographics[account_id] = rng.standard_normal(config.q)

    log(f"Generated {len(labels)} accounts ({config.n_gangs * config.gang_size} malicious) with {len(events)} "
        f"events.", severity=logging.INFO)
    return GEMSynthDataset(config, registry, window, events, labels, train_labels, test_labels, demographics,
                           gang_devices)


def split_weeks(dataset: Union[GEMSynthDataset, GEMSynthConfig], n_weeks: int) -> List[GEMSynthDataset]:
    """
    Generates consecutive weekly datasets sharing the dataset's config. Each week gets its own sub-seed, its own
    id namespace (``w0-``, ``w1-``, ...) and a window following the previous week's.

    :param dataset: the dataset (or config) whose config is reused.
    :param n_weeks: the number of weeks.
    :return: one dataset per week.
    """
    if n_weeks < 1:
        raise GEMConfigError(f"n_weeks must be at least 1, got {n_weeks}")
    base = dataset.config if isinstance(dataset, GEMSynthDataset) else dataset
    weeks = []
    for w in range(n_weeks):
        config = dataclasses.replace(base, seed=derive_seed(base.seed, f"week-{w}"),
                                     start=base.start + w * base.p * base.slot_width,
                                     id_prefix=f"{base.id_prefix}w{w}-")
        weeks.append(generate(config))
    return weeks


def device_aggregation_ratio(dataset: GEMSynthDataset) -> float:
    """
    Computes the mean number of distinct accounts per gang device divided by the mean number of distinct accounts
    per normal pool device.
    """
    accounts: Dict[Tuple[str, str], Set[str]] = defaultdict(set)
    for e in dataset.events:
        accounts[e.device_key].add(e.account_id)
    gang = [len(a) for d, a in accounts.items() if d in dataset.gang_devices]
    normal = [len(a) for d, a in accounts.items() if d not in dataset.gang_devices]
    if len(gang) == 0 or len(normal) == 0:
        return float("nan")
    return float(np.mean(gang) / np.mean(normal))


def write_demographics(path: str, demographics: Dict[str, npt.NDArray[np.float64]]) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    q = len(next(iter(demographics.values()))) if demographics else 0
    writer.writerow(["account_id"] + [f"d{i}" for i in range(q)])
    for account_id in sorted(demographics):
        writer.writerow([account_id] + [repr(float(v)) for v in demographics[account_id]])
    atomic_write_text(path, buf.getvalue())


def write_dataset(dataset: GEMSynthDataset, out_dir: str,
                  fmt: Union[str, EventFormat] = EventFormat.CSV) -> Dict[str, str]:
    """
    Writes a dataset to a directory: ``events.csv`` (or ``events.jsonl``), ``labels.csv`` (training labels),
    ``test_labels.csv``, ``demographics.csv`` when ``q > 0`` and ``manifest.json``.

    :return: a mapping of file role to path.
    """
    fmt = resolve_format(fmt)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "events": os.path.join(out_dir, f"events.{fmt.value}"),
        "labels": os.path.join(out_dir, "labels.csv"),
        "test_labels": os.path.join(out_dir, "test_labels.csv"),
    }
    write_events(paths["events"], dataset.events, fmt)
    write_labels(paths["labels"], dataset.train_labels)
    write_labels(paths["test_labels"], dataset.test_labels)
    if dataset.config.q > 0:
        paths["demographics"] = os.path.join(out_dir, "demographics.csv")
        write_demographics(paths["demographics"], dataset.demographics)
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    manifest = dataset.manifest()
    manifest["files"] = {role: os.path.basename(path) for role, path in paths.items()}
    atomic_write_text(paths["manifest"], json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log(f"Wrote dataset to '{out_dir}'.", severity=logging.INFO)
    return paths
