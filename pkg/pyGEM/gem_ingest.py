#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import csv
import io
import json
import logging
import os.path
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .gem_container import atomic_write_bytes
from .gem_errors import GEMParseError, GEMSchemaError, GEMConfigError
from .gem_logging import log


DEFAULT_TYPES = ("UMID", "PhoneNumber", "MAC", "APDID", "IMSI", "TID")
EVENT_FIELDS = ("account_id", "device_id", "device_type", "kind", "timestamp")


class EventKind(Enum):
    """
    The kind of account-device interaction recorded by an event.
    """
    SIGNUP = "signup"
    LOGIN = "login"


class EventFormat(Enum):
    CSV = "csv"
    JSONL = "jsonl"


@dataclass(frozen=True)
class GEMEvent:
    """
    One account-device interaction record.
    """
    account_id: str
    """An opaque account token."""
    device_id: str
    """An opaque device token; device identity is scoped by ``device_type``."""
    device_type: str
    """The name of a type in the ``GEMDeviceTypeRegistry``."""
    kind: EventKind
    timestamp: int
    """Seconds since the epoch."""

    def __post_init__(self):
        if len(self.account_id) == 0 or len(self.device_id) == 0:
            raise GEMSchemaError("Events must have a non-empty account_id and device_id.")
        if self.timestamp < 0:
            raise GEMSchemaError(f"Event timestamp must be >= 0, got {self.timestamp}.")

    @property
    def device_key(self) -> Tuple[str, str]:
        return self.device_id, self.device_type


class GEMDeviceTypeRegistry:
    """
    The ordered list of device types known to a run. The order of the types defines the index ``d`` of the per-type
    adjacency matrices, the per-type propagation weights and the attention logits.
    """
    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if len(names) == 0:
            raise GEMConfigError("A device type registry needs at least one device type.")
        if len(set(names)) != len(names):
            raise GEMConfigError(f"Device type names must be unique, got: {', '.join(names)}")
        for name in names:
            if len(name) == 0 or "," in name:
                raise GEMConfigError(f"Invalid device type name '{name}'.")
        self._names = names
        self._lookup = {name: i for i, name in enumerate(names)}

    @classmethod
    def default(cls) -> "GEMDeviceTypeRegistry":
        """
        Creates the registry of the six default device types:
        ``UMID, PhoneNumber, MAC, APDID, IMSI, TID``.
        """
        return cls(DEFAULT_TYPES)

    @property
    def names(self) -> Tuple[str, ...]:
        return self._names

    def index(self, name: str) -> int:
        """
        Gets the index of a device type.

        :param name: the name of the device type.
        :return: the index ``d`` of the device type.
        """
        if name not in self._lookup:
            raise GEMSchemaError(f"Unregistered device type '{name}'; known types: {', '.join(self._names)}")
        return self._lookup[name]

    def __contains__(self, name: object) -> bool:
        return name in self._lookup

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GEMDeviceTypeRegistry) and self._names == other._names

    def __hash__(self):
        return hash(self._names)

    def __repr__(self):
        return f"GEMDeviceTypeRegistry({list(self._names)!r})"


@dataclass(frozen=True)
class GEMTimeWindow:
    """
    A half open time window ``[start, end)`` divided into equally sized slots.
    """
    start: int
    end: int
    slot_width: int = 3600

    def __post_init__(self):
        if self.start < 0:
            raise GEMConfigError(f"Time window start must be >= 0, got {self.start}.")
        if self.slot_width <= 0:
            raise GEMConfigError(f"Slot width must be positive, got {self.slot_width}.")
        if self.start >= self.end:
            raise GEMConfigError(f"Time window start ({self.start}) must be before its end ({self.end}).")
        if (self.end - self.start) % self.slot_width != 0:
            raise GEMConfigError(f"Time window length ({self.end - self.start}s) must be divisible by the slot width "
                                 f"({self.slot_width}s).")

    @classmethod
    def from_slots(cls, start: int, n_slots: int, slot_width: int = 3600) -> "GEMTimeWindow":
        return cls(start, start + n_slots * slot_width, slot_width)

    @classmethod
    def week(cls, start: int) -> "GEMTimeWindow":
        """
        Creates the default seven day window with hourly slots (168 slots).
        """
        return cls.from_slots(start, 7 * 24)

    @property
    def n_slots(self) -> int:
        return (self.end - self.start) // self.slot_width

    def contains(self, timestamp: int) -> bool:
        return self.start <= timestamp < self.end

    def slot_of(self, timestamp: int) -> int:
        """
        Gets the index of the slot containing the given timestamp.
        """
        if not self.contains(timestamp):
            raise ValueError(f"Timestamp {timestamp} lies outside of [{self.start}, {self.end})")
        return (timestamp - self.start) // self.slot_width


def resolve_format(fmt: Union[str, EventFormat]) -> EventFormat:
    if isinstance(fmt, EventFormat):
        return fmt
    try:
        return EventFormat(fmt.lower())
    except ValueError:
        raise GEMConfigError(f"Unknown event format '{fmt}', expected one of: csv, jsonl")


def _make_event(values: Dict[str, object], registry: GEMDeviceTypeRegistry, line: int, source: str) -> GEMEvent:
    account_id, device_id = values["account_id"], values["device_id"]
    device_type, kind, timestamp = values["device_type"], values["kind"], values["timestamp"]
    for name, val in (("account_id", account_id), ("device_id", device_id), ("device_type", device_type),
                      ("kind", kind)):
        if not isinstance(val, str) or len(val) == 0:
            raise GEMParseError(f"Field '{name}' must be a non-empty string.", line=line, source=source)
    if device_type not in registry:
        raise GEMSchemaError(f"[{source}:{line}] Unregistered device type '{device_type}'; known types: "
                             f"{', '.join(registry.names)}")
    try:
        event_kind = EventKind(kind)
    except ValueError:
        raise GEMParseError(f"Unknown event kind '{kind}', expected 'signup' or 'login'.", line=line, source=source)
    if isinstance(timestamp, str):
        try:
            timestamp = int(timestamp.strip())
        except ValueError:
            raise GEMParseError(f"Timestamp '{timestamp}' is not an integer.", line=line, source=source)
    elif isinstance(timestamp, bool) or not isinstance(timestamp, int):
        raise GEMParseError(f"Timestamp '{timestamp}' is not an integer.", line=line, source=source)
    if timestamp < 0:
        raise GEMParseError(f"Timestamp must be >= 0, got {timestamp}.", line=line, source=source)
    return GEMEvent(account_id, device_id, device_type, event_kind, timestamp)  # type: ignore[arg-type]


def parse_events(source: Union[bytes, BinaryIO], fmt: Union[str, EventFormat] = EventFormat.CSV,
                 registry: Optional[GEMDeviceTypeRegistry] = None, source_name: str = "<stream>") -> List[GEMEvent]:
    """
    Parses an event log.

    The CSV format has the header ``account_id,device_id,device_type,kind,timestamp``; the JSONL format has one
    object per line with the same five keys. Both are UTF-8 encoded.

    :param source: the raw bytes or a binary stream to parse.
    :param fmt: the format of the stream: ``"csv"`` or ``"jsonl"``.
    :param registry: the registry of valid device types, defaults to the six default types.
    :param source_name: a name for the stream used in error messages.
    :return: the events, in input order.
    """
    fmt = resolve_format(fmt)
    if registry is None:
        registry = GEMDeviceTypeRegistry.default()
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = bytes(data).decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise GEMParseError(f"Stream is not valid UTF-8: {e}", source=source_name)

    events: List[GEMEvent] = []
    if fmt == EventFormat.CSV:
        reader = csv.reader(io.StringIO(text, newline=""))
        header: Optional[List[str]] = None
        for row in reader:
            line = reader.line_num
            if len(row) == 0:
                continue
            if header is None:
                header = [h.strip() for h in row]
                if sorted(header) != sorted(EVENT_FIELDS):
                    raise GEMParseError(f"Expected the header '{','.join(EVENT_FIELDS)}', got '{','.join(row)}'",
                                        line=line, source=source_name)
                continue
            if len(row) != len(header):
                raise GEMParseError(f"Expected {len(header)} fields, got {len(row)}.", line=line, source=source_name)
            events.append(_make_event(dict(zip(header, row)), registry, line, source_name))
    else:
        for line, raw_line in enumerate(text.splitlines(), start=1):
            if len(raw_line.strip()) == 0:
                continue
            try:
                obj = json.loads(raw_line)
            except json.JSONDecodeError as e:
                raise GEMParseError(f"Invalid JSON: {e.msg}", line=line, source=source_name)
            if not isinstance(obj, dict) or set(obj.keys()) != set(EVENT_FIELDS):
                raise GEMParseError(f"Expected an object with the keys: {', '.join(EVENT_FIELDS)}",
                                    line=line, source=source_name)
            events.append(_make_event(obj, registry, line, source_name))
    log(f"Parsed {len(events)} events from {source_name}.")
    return events


def serialize_events(events: Iterable[GEMEvent], fmt: Union[str, EventFormat] = EventFormat.CSV) -> bytes:
    """
    Serialises events into the format read by ``parse_events``.
    """
    fmt = resolve_format(fmt)
    buf = io.StringIO(newline="")
    if fmt == EventFormat.CSV:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EVENT_FIELDS)
        for e in events:
            writer.writerow((e.account_id, e.device_id, e.device_type, e.kind.value, e.timestamp))
    else:
        for e in events:
            buf.write(json.dumps({"account_id": e.account_id, "device_id": e.device_id,
                                  "device_type": e.device_type, "kind": e.kind.value,
                                  "timestamp": e.timestamp}, ensure_ascii=False))
            buf.write("\n")
    return buf.getvalue().encode("utf-8")


def format_from_path(path: str) -> EventFormat:
    ext = os.path.splitext(path)[1].lower()
    return EventFormat.JSONL if ext in {".jsonl", ".json", ".ndjson"} else EventFormat.CSV


def read_events(path: str, fmt: Optional[Union[str, EventFormat]] = None,
                registry: Optional[GEMDeviceTypeRegistry] = None) -> List[GEMEvent]:
    """
    Reads an event log from a file. The format is inferred from the file extension when not given.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Couldn't find the event log: '{path}'")
    with open(path, "rb") as f:
        return parse_events(f, format_from_path(path) if fmt is None else fmt, registry, source_name=path)


def write_events(path: str, events: Iterable[GEMEvent], fmt: Optional[Union[str, EventFormat]] = None) -> None:
    atomic_write_bytes(path, serialize_events(events, format_from_path(path) if fmt is None else fmt))


def window_filter(events: Iterable[GEMEvent], window: GEMTimeWindow) -> List[GEMEvent]:
    """
    Keeps exactly the events with ``window.start <= timestamp < window.end``, preserving their order.
    """
    return [e for e in events if window.start <= e.timestamp < window.end]


def _prune_once(events: List[GEMEvent]) -> List[GEMEvent]:
    accounts_per_device: Dict[Tuple[str, str], Set[str]] = defaultdict(set)
    for e in events:
        accounts_per_device[e.device_key].add(e.account_id)
    keep: Set[str] = set()
    for accounts in accounts_per_device.values():
        if len(accounts) > 1:
            keep.update(accounts)
    return [e for e in events if e.account_id in keep]


def prune_isolated(events: Iterable[GEMEvent], fixpoint: bool = False) -> List[GEMEvent]:
    """
    Removes every account whose devices are used by no other account. Accounts keeping at least one shared device
    are retained entirely, with all of their events.

    The removal is a single pass. A removed account shares none of its devices, so every retained account still
    shares a device with another retained account and a second pass removes nothing.

    :param events: the events to prune.
    :param fixpoint: when set, repeats the pass until no further account is removed (checking the above).
    :return: the retained events, in input order.
    """
    remaining = list(events)
    n_accounts = len({e.account_id for e in remaining})
    passes = 0
    while True:
        pruned = _prune_once(remaining)
        passes += 1
        changed = len(pruned) != len(remaining)
        remaining = pruned
        if not fixpoint or not changed:
            break
    n_kept = len({e.account_id for e in remaining})
    log(f"Pruned {n_accounts - n_kept} of {n_accounts} accounts with unshared devices ({passes} pass(es)).",
        severity=logging.INFO)
    return remaining
