#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import csv
import io
import logging
import os.path
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.sparse import csr_matrix, coo_matrix

from .gem_container import read_container, write_container, atomic_write_text
from .gem_errors import GEMDimensionError, GEMParseError, GEMUsageError, GEMConsistencyError
from .gem_ingest import GEMEvent, GEMDeviceTypeRegistry, GEMTimeWindow
from .gem_logging import log

GRAPH_MAGIC = b"GEMG"


class GEMVertexIndex:
    """
    Maps accounts and typed devices to contiguous vertex indices. Accounts occupy ``[0, n_accounts)`` and devices
    occupy ``[n_accounts, n_vertices)``. A device is identified by its ``(device_id, device_type)`` pair, so the same
    identifier under two types maps to two vertices.
    """

    def __init__(self, account_ids: Sequence[str], device_keys: Sequence[Tuple[str, str]]):
        self._account_ids = tuple(account_ids)
        self._device_keys = tuple((str(d), str(t)) for d, t in device_keys)
        self._account_lookup = {a: i for i, a in enumerate(self._account_ids)}
        self._device_lookup = {k: i + len(self._account_ids) for i, k in enumerate(self._device_keys)}
        if len(self._account_lookup) != len(self._account_ids) or len(self._device_lookup) != len(self._device_keys):
            raise GEMConsistencyError("Vertex index entries must be unique.")

    @property
    def account_ids(self) -> Tuple[str, ...]:
        return self._account_ids

    @property
    def device_keys(self) -> Tuple[Tuple[str, str], ...]:
        return self._device_keys

    @property
    def n_accounts(self) -> int:
        return len(self._account_ids)

    @property
    def n_devices(self) -> int:
        return len(self._device_keys)

    @property
    def n_vertices(self) -> int:
        return self.n_accounts + self.n_devices

    def has_account(self, account_id: str) -> bool:
        return account_id in self._account_lookup

    def account_index(self, account_id: str) -> int:
        return self._account_lookup[account_id]

    def device_index(self, device_id: str, device_type: str) -> int:
        return self._device_lookup[(device_id, device_type)]

    def is_account(self, vertex: int) -> bool:
        return 0 <= vertex < self.n_accounts

    def vertex_name(self, vertex: int) -> str:
        if self.is_account(vertex):
            return self._account_ids[vertex]
        device_id, device_type = self._device_keys[vertex - self.n_accounts]
        return f"{device_type}:{device_id}"


class GEMHeteroGraph:
    """
    The bipartite account-device graph, stored as one sparse symmetric 0/1 adjacency matrix per device type over all
    ``N`` vertices. Each matrix only holds the account-device edges of its device type.

    Matrices are compressed sparse row with sorted column indices; both directions of every edge are stored.
    """

    def __init__(self, vertex_index: GEMVertexIndex, registry: GEMDeviceTypeRegistry,
                 adjacency: Sequence[csr_matrix]):
        if len(adjacency) != len(registry):
            raise GEMConsistencyError(f"Expected {len(registry)} adjacency matrices, got {len(adjacency)}.")
        n = vertex_index.n_vertices
        for a in adjacency:
            if a.shape != (n, n):
                raise GEMDimensionError(f"Adjacency matrix has shape {a.shape}, expected {(n, n)}.")
        self._vertex_index = vertex_index
        self._registry = registry
        self._adjacency = tuple(adjacency)
        self._full: Optional[csr_matrix] = None
        self._device_types = np.full(vertex_index.n_devices, -1, dtype=np.int64)
        for i, (_, device_type) in enumerate(vertex_index.device_keys):
            self._device_types[i] = registry.index(device_type)

    @property
    def vertex_index(self) -> GEMVertexIndex:
        return self._vertex_index

    @property
    def registry(self) -> GEMDeviceTypeRegistry:
        return self._registry

    @property
    def adjacency(self) -> Tuple[csr_matrix, ...]:
        """
        The per device type adjacency matrices, in registry order.
        """
        return self._adjacency

    @property
    def device_types(self) -> npt.NDArray[np.int64]:
        """
        The device type index of each device vertex (indexed from 0 for the first device vertex).
        """
        return self._device_types

    @property
    def n_accounts(self) -> int:
        return self._vertex_index.n_accounts

    @property
    def n_vertices(self) -> int:
        return self._vertex_index.n_vertices

    @property
    def n_types(self) -> int:
        return len(self._registry)

    @property
    def full_adjacency(self) -> csr_matrix:
        """
        The union of all per type adjacency matrices.
        """
        if self._full is None:
            full = csr_matrix((self.n_vertices, self.n_vertices), dtype=np.float64)
            for a in self._adjacency:
                full = full + a
            full.sort_indices()
            self._full = full
        return self._full

    def edge_count(self, device_type: Optional[int] = None) -> int:
        """
        Gets the number of undirected edges of one device type, or of the whole graph.
        """
        if device_type is None:
            return sum(a.nnz for a in self._adjacency) // 2
        return self._adjacency[device_type].nnz // 2

    def edges(self, device_type: int) -> npt.NDArray[np.int64]:
        """
        Gets the (account, device) vertex pairs of the edges of one device type as an ``(E, 2)`` array.
        """
        upper = self._adjacency[device_type][:self.n_accounts].tocoo()
        return np.stack([upper.row.astype(np.int64), upper.col.astype(np.int64)], axis=1)

    def incidence(self) -> csr_matrix:
        """
        Gets the ``n_accounts x n_devices`` account-device incidence matrix over all device types.
        """
        return self.full_adjacency[:self.n_accounts, self.n_accounts:].tocsr()


@dataclass(frozen=True)
class GEMFeatureMatrix:
    """
    The ``N x P`` feature matrix. Each row is laid out as ``[activity histogram: p | demographics: q | one-hot: |D|]``.
    """
    values: npt.NDArray[np.float64]
    p: int
    """The number of activity slots."""
    q: int
    """The number of demographic features."""
    n_types: int
    """The number of device types, the length of the one-hot block."""

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.p + self.q + self.n_types:
            raise GEMDimensionError(f"Feature matrix has shape {self.values.shape}, expected P = p + q + |D| = "
                                    f"{self.p + self.q + self.n_types} columns.")
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    @property
    def activity(self) -> npt.NDArray[np.float64]:
        return self.values[:, :self.p]

    @property
    def demographics(self) -> npt.NDArray[np.float64]:
        return self.values[:, self.p:self.p + self.q]

    @property
    def one_hot(self) -> npt.NDArray[np.float64]:
        return self.values[:, self.p + self.q:]


@dataclass(frozen=True)
class GEMLabelSet:
    """
    Partially observed account labels: ``+1`` malicious, ``-1`` normal.
    """
    indices: npt.NDArray[np.int64]
    values: npt.NDArray[np.int64]

    def __post_init__(self):
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise GEMDimensionError("Label indices and values must be 1D arrays of the same length.")
        if not np.all(np.isin(self.values, (-1, 1))):
            raise GEMUsageError("Labels must be -1 or +1.")
        if len(np.unique(self.indices)) != len(self.indices):
            raise GEMUsageError("Each account may only be labelled once.")

    @classmethod
    def from_arrays(cls, indices: Iterable[int], values: Iterable[int]) -> "GEMLabelSet":
        return cls(np.asarray(list(indices), dtype=np.int64), np.asarray(list(values), dtype=np.int64))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int], graph: GEMHeteroGraph) -> "GEMLabelSet":
        """
        Resolves account ids to vertex indices. Accounts which aren't in the graph (eg: removed by pruning) are
        dropped.

        :param mapping: a mapping of ``account_id -> label``.
        :param graph: the graph to resolve account ids against.
        """
        vi = graph.vertex_index
        pairs = sorted((vi.account_index(a), int(y)) for a, y in mapping.items() if vi.has_account(a))
        dropped = len(mapping) - len(pairs)
        if dropped > 0:
            log(f"Dropped {dropped} of {len(mapping)} labels for accounts which are not in the graph.",
                severity=logging.WARN)
        return cls.from_arrays([i for i, _ in pairs], [y for _, y in pairs])

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.values == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.values == -1))

    def subset(self, mask: npt.NDArray[np.bool_]) -> "GEMLabelSet":
        return GEMLabelSet(self.indices[mask], self.values[mask])

    def to_mapping(self, graph: GEMHeteroGraph) -> Dict[str, int]:
        ids = graph.vertex_index.account_ids
        return {ids[i]: int(y) for i, y in zip(self.indices, self.values)}

    def validate_for(self, graph: GEMHeteroGraph):
        if len(self.indices) > 0 and (self.indices.min() < 0 or self.indices.max() >= graph.n_accounts):
            raise GEMUsageError("Labels must refer to account vertices.")


def build_graph(events: Iterable[GEMEvent], registry: GEMDeviceTypeRegistry) -> GEMHeteroGraph:
    """
    Builds the heterogeneous account-device graph. Each distinct (account, device) pair becomes one undirected edge,
    regardless of how many events connect them, stored in the adjacency matrix of the device's type.

    :param events: preprocessed (windowed and pruned) events.
    :param registry: the device type registry defining the order of the adjacency matrices.
    :return: the graph.
    """
    account_ids: Dict[str, int] = {}
    device_keys: Dict[Tuple[str, str], int] = {}
    pairs: Dict[Tuple[int, int], None] = {}
    for e in events:
        registry.index(e.device_type)
        a = account_ids.setdefault(e.account_id, len(account_ids))
        d = device_keys.setdefault(e.device_key, len(device_keys))
        pairs[(a, d)] = None

    n_accounts = len(account_ids)
    n = n_accounts + len(device_keys)
    vertex_index = GEMVertexIndex(list(account_ids), list(device_keys))
    device_type_of = np.array([registry.index(t) for _, t in device_keys], dtype=np.int64)

    edges = np.array(list(pairs), dtype=np.int64).reshape(-1, 2)
    adjacency = []
    for d in range(len(registry)):
        sel = edges[device_type_of[edges[:, 1]] == d] if len(edges) > 0 else edges
        rows = np.concatenate([sel[:, 0], sel[:, 1] + n_accounts])
        cols = np.concatenate([sel[:, 1] + n_accounts, sel[:, 0]])
        a = coo_matrix((np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(n, n)).tocsr()
        a.sort_indices()
        adjacency.append(a)

    graph = GEMHeteroGraph(vertex_index, registry, adjacency)
    log(f"Built a graph with {n_accounts} accounts, {len(device_keys)} devices and {graph.edge_count()} edges.",
        severity=logging.INFO)
    return graph


def build_features(events: Iterable[GEMEvent], graph: GEMHeteroGraph, window: GEMTimeWindow,
                   demographics: Optional[Mapping[str, Sequence[float]]] = None,
                   q: Optional[int] = None) -> GEMFeatureMatrix:
    """
    Builds the feature matrix ``X``.

    Account rows hold the count of the account's events in each slot of the window (over all of its devices),
    followed by its demographic features (zero-filled when absent). Device rows are zero except for a single 1 in the
    one-hot coordinate of their device type.

    :param events: the events the graph was built from; all timestamps must lie inside the window.
    :param graph: the graph defining the row order.
    :param window: the time window defining the activity slots.
    :param demographics: optionally, a mapping of ``account_id -> vector`` of length ``q``.
    :param q: the number of demographic features; inferred from ``demographics`` when not given.
    :return: the feature matrix.
    """
    p = window.n_slots
    if q is None:
        q = len(next(iter(demographics.values()))) if demographics else 0
    n_types = graph.n_types
    vi = graph.vertex_index
    values = np.zeros((graph.n_vertices, p + q + n_types), dtype=np.float64)

    rows: List[int] = []
    slots: List[int] = []
    for e in events:
        if not window.contains(e.timestamp):
            raise GEMUsageError(f"Event at {e.timestamp} lies outside of the window [{window.start}, {window.end}); "
                                f"filter the events first.")
        if vi.has_account(e.account_id):
            rows.append(vi.account_index(e.account_id))
            slots.append((e.timestamp - window.start) // window.slot_width)
    if len(rows) > 0:
        np.add.at(values, (np.asarray(rows), np.asarray(slots)), 1.0)

    if demographics:
        for account_id, vec in demographics.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (q,):
                raise GEMDimensionError(f"Demographics of account '{account_id}' have length {vec.size}, "
                                        f"expected {q}.")
            if vi.has_account(account_id):
                values[vi.account_index(account_id), p:p + q] = vec

    device_rows = np.arange(vi.n_accounts, vi.n_vertices)
    values[device_rows, p + q + graph.device_types] = 1.0
    return GEMFeatureMatrix(values, p, q, n_types)


def degree(graph: GEMHeteroGraph, vertex: int, device_type: Optional[int] = None) -> int:
    """
    Gets the number of edges incident to a vertex.

    :param graph: the graph.
    :param vertex: the vertex index.
    :param device_type: optionally, only count edges of this device type.
    :return: the degree of the vertex.
    """
    if not 0 <= vertex < graph.n_vertices:
        raise IndexError(f"Vertex {vertex} is out of range [0, {graph.n_vertices}).")
    a = graph.full_adjacency if device_type is None else graph.adjacency[device_type]
    return int(a.indptr[vertex + 1] - a.indptr[vertex])


def permute_vertices(graph: GEMHeteroGraph, features: GEMFeatureMatrix,
                     account_perm: Sequence[int], device_perm: Sequence[int]
                     ) -> Tuple[GEMHeteroGraph, GEMFeatureMatrix]:
    """
    Relabels the vertices of a graph; the account at index ``i`` moves to ``account_perm[i]`` and the device at
    device position ``j`` moves to ``device_perm[j]``. Accounts stay before devices.
    """
    n_a = graph.n_accounts
    account_perm = np.asarray(account_perm, dtype=np.int64)
    device_perm = np.asarray(device_perm, dtype=np.int64)
    new_pos = np.concatenate([account_perm, device_perm + n_a])
    if sorted(new_pos.tolist()) != list(range(graph.n_vertices)):
        raise GEMUsageError("The account and device permutations must be permutations of their index ranges.")
    inverse = np.empty_like(new_pos)
    inverse[new_pos] = np.arange(len(new_pos))

    vi = graph.vertex_index
    accounts = [vi.account_ids[i] for i in inverse[:n_a]]
    devices = [vi.device_keys[i - n_a] for i in inverse[n_a:]]
    adjacency = []
    for a in graph.adjacency:
        p = a[inverse][:, inverse].tocsr()
        p.sort_indices()
        adjacency.append(p)
    permuted = GEMHeteroGraph(GEMVertexIndex(accounts, devices), graph.registry, adjacency)
    return permuted, GEMFeatureMatrix(np.array(features.values[inverse]), features.p, features.q, features.n_types)


def graph_summary(graph: GEMHeteroGraph, features: Optional[GEMFeatureMatrix] = None,
                  labels: Optional[GEMLabelSet] = None) -> Dict[str, object]:
    """
    Gets summary statistics of a graph: vertex, edge, per type edge, label and feature counts.
    """
    summary: Dict[str, object] = {
        "vertices": graph.n_vertices,
        "accounts": graph.n_accounts,
        "devices": graph.vertex_index.n_devices,
        "edges": graph.edge_count(),
        "edges_per_type": {name: graph.edge_count(d) for d, name in enumerate(graph.registry.names)},
    }
    if labels is not None:
        summary["labels"] = len(labels)
        summary["labels_positive"] = labels.n_positive
    if features is not None:
        summary["features"] = features.P
    return summary


def activity_entropy(features: GEMFeatureMatrix, rows: Optional[Sequence[int]] = None) -> npt.NDArray[np.float64]:
    """
    Computes the Shannon entropy (in nats) of each row's normalised activity histogram. Rows without any activity
    have an entropy of 0.
    """
    act = features.activity if rows is None else features.activity[np.asarray(rows, dtype=np.int64)]
    totals = act.sum(axis=1, keepdims=True)
    prob = np.divide(act, totals, out=np.zeros_like(act), where=totals > 0)
    logs = np.log(prob, out=np.zeros_like(prob), where=prob > 0)
    return -np.sum(prob * logs, axis=1)


def read_labels(path: str) -> Dict[str, int]:
    """
    Reads an ``account_id,label`` CSV file with labels in ``{-1, 1}``.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Couldn't find the label file: '{path}'")
    labels: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return labels
        if [h.strip() for h in header] != ["account_id", "label"]:
            raise GEMParseError("Expected the header 'account_id,label'", line=1, source=path)
        for row in reader:
            if len(row) == 0:
                continue
            if len(row) != 2:
                raise GEMParseError(f"Expected 2 fields, got {len(row)}.", line=reader.line_num, source=path)
            try:
                label = int(row[1])
            except ValueError:
                raise GEMParseError(f"Label '{row[1]}' is not an integer.", line=reader.line_num, source=path)
            if label not in (-1, 1):
                raise GEMParseError(f"Label must be -1 or 1, got {label}.", line=reader.line_num, source=path)
            labels[row[0]] = label
    return labels


def write_labels(path: str, labels: Mapping[str, int]) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("account_id", "label"))
    for account_id in sorted(labels):
        writer.writerow((account_id, int(labels[account_id])))
    atomic_write_text(path, buf.getvalue())


def save_graph(path: str, graph: GEMHeteroGraph, features: GEMFeatureMatrix,
               labels: Optional[GEMLabelSet] = None, extra: Optional[Dict[str, object]] = None) -> None:
    """
    Saves a graph, its feature matrix and optionally its labels to a graph container file.
    """
    if features.n_rows != graph.n_vertices:
        raise GEMDimensionError(f"Feature matrix has {features.n_rows} rows, the graph has {graph.n_vertices} "
                                f"vertices.")
    vi = graph.vertex_index
    meta: Dict[str, object] = {
        "kind": "graph",
        "registry": list(graph.registry.names),
        "account_ids": list(vi.account_ids),
        "device_ids": [d for d, _ in vi.device_keys],
        "device_types": [t for _, t in vi.device_keys],
        "p": features.p,
        "q": features.q,
        "extra": extra or {},
    }
    arrays: Dict[str, npt.NDArray] = {"features": features.values}
    for d in range(graph.n_types):
        arrays[f"edges_{d}"] = graph.edges(d)
    if labels is not None:
        arrays["label_indices"] = labels.indices
        arrays["label_values"] = labels.values
    write_container(path, GRAPH_MAGIC, meta, arrays)
    log(f"Saved graph to '{path}'.", severity=logging.INFO)


def load_graph(path: str) -> Tuple[GEMHeteroGraph, GEMFeatureMatrix, Optional[GEMLabelSet], Dict[str, object]]:
    """
    Loads a graph container file.

    :param path: the path of the graph file.
    :return: (graph, features, labels or ``None``, extra metadata)
    """
    meta, arrays = read_container(path, GRAPH_MAGIC)
    registry = GEMDeviceTypeRegistry(meta["registry"])
    vi = GEMVertexIndex(meta["account_ids"], list(zip(meta["device_ids"], meta["device_types"])))
    n, n_a = vi.n_vertices, vi.n_accounts
    adjacency = []
    for d in range(len(registry)):
        e = arrays[f"edges_{d}"].reshape(-1, 2)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        a = coo_matrix((np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(n, n)).tocsr()
        a.sort_indices()
        adjacency.append(a)
    graph = GEMHeteroGraph(vi, registry, adjacency)
    features = GEMFeatureMatrix(np.array(arrays["features"], dtype=np.float64).reshape(n, -1),
                                int(meta["p"]), int(meta["q"]), len(registry))
    labels = None
    if "label_indices" in arrays:
        labels = GEMLabelSet(arrays["label_indices"].astype(np.int64), arrays["label_values"].astype(np.int64))
    if n_a == 0 and n > 0:
        raise GEMConsistencyError(f"'{path}' has devices but no accounts.")
    return graph, features, labels, dict(meta.get("extra", {}))


def read_demographics(path: str) -> Dict[str, npt.NDArray[np.float64]]:
    """
    Reads an ``account_id,d0,d1,...`` CSV of demographic feature vectors.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Couldn't find the demographics file: '{path}'")
    out: Dict[str, npt.NDArray[np.float64]] = {}
    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return out
        if len(header) == 0 or header[0].strip() != "account_id":
            raise GEMParseError("Expected the first column to be 'account_id'", line=1, source=path)
        for row in reader:
            if len(row) == 0:
                continue
            if len(row) != len(header):
                raise GEMParseError(f"Expected {len(header)} fields, got {len(row)}.", line=reader.line_num,
                                    source=path)
            try:
                out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as e:
                raise GEMParseError(f"Invalid demographic value: {e}", line=reader.line_num, source=path)
    return out
