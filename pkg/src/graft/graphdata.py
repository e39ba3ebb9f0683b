"""Graph data model, JSONL dataset files and synthetic structural tasks.

Dataset file layout (one JSON object per line)::

    {"d_in": 8, "d_e": 4, "T": 1, "name": "degree-parity"}          # header
    {"nodes": [[...], ...], "edges": [[0, 1, [...]], ...], "labels": [1], "split": "train"}

Each undirected edge is stored once with ``i < j`` and expanded to both
directions on access.  Missing labels are ``null``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graft.errors import ValidationError
from graft.kernels import Segments

SPLITS = ("train", "valid", "test")
TASKS = ("triangle-detect", "degree-parity", "motif-count-threshold")

N_NODE_TYPES = 5
N_BOND_TYPES = 3
SYNTH_D_IN = 1 + N_NODE_TYPES + 2
SYNTH_D_E = N_BOND_TYPES + 1


@dataclass(eq=False)
class LabeledGraph:
    node_features: np.ndarray
    edges: np.ndarray  # (m, 2) int, i < j
    edge_features: np.ndarray  # (m, d_e)
    labels: np.ndarray  # (T,) float, NaN = missing
    split: str = "train"
    _directed: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim != 2 or self.node_features.shape[0] < 1:
            raise ValidationError("node_features must be an n x d_in matrix with n >= 1")
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        m = self.edges.shape[0]
        self.edge_features = np.asarray(self.edge_features, dtype=np.float64)
        if self.edge_features.size == 0 and self.edge_features.ndim != 2:
            # a bare [] carries no width; keep (m, 0) so Dataset can fill in d_e
            self.edge_features = self.edge_features.reshape(m, 0)
        if self.edge_features.ndim != 2 or self.edge_features.shape[0] != m:
            raise ValidationError("edge_features must have one row per edge")
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        _check_graph(self)

    @property
    def n(self) -> int:
        return self.node_features.shape[0]

    @property
    def d_in(self) -> int:
        return self.node_features.shape[1]

    @property
    def d_e(self) -> int:
        return self.edge_features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def directed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, features): stored edges i->j first, then their reverses j->i."""
        if self._directed is None:
            i, j = self.edges[:, 0], self.edges[:, 1]
            self._directed = (
                np.concatenate([i, j]),
                np.concatenate([j, i]),
                np.concatenate([self.edge_features, self.edge_features]),
            )
        return self._directed

    def relabel(self, perm: np.ndarray) -> "LabeledGraph":
        """Copy with node ``v`` renamed to ``perm[v]`` (edge list re-sorted)."""
        perm = np.asarray(perm, dtype=np.int64)
        x = np.empty_like(self.node_features)
        x[perm] = self.node_features
        e = perm[self.edges]
        e = np.sort(e, axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        return LabeledGraph(x, e[order], self.edge_features[order], self.labels.copy(), self.split)

    def to_json(self) -> dict:
        return {
            "nodes": self.node_features.tolist(),
            "edges": [
                [int(i), int(j), f.tolist()] for (i, j), f in zip(self.edges, self.edge_features)
            ],
            "labels": [None if math.isnan(v) else int(v) for v in self.labels],
            "split": self.split,
        }


def _check_graph(g: LabeledGraph) -> None:
    n = g.n
    if g.num_edges:
        if g.edges.min() < 0 or g.edges.max() >= n:
            raise ValidationError("edge index out of range")
        if np.any(g.edges[:, 0] == g.edges[:, 1]):
            raise ValidationError("self-loop edges are not stored; the backbone adds the self term")
        if np.any(g.edges[:, 0] > g.edges[:, 1]):
            raise ValidationError("edge endpoints must satisfy i < j (store each undirected edge once)")
        if len({(int(a), int(b)) for a, b in g.edges}) != g.num_edges:
            raise ValidationError("duplicate edge")
    if not np.all(np.isfinite(g.node_features)) or not np.all(np.isfinite(g.edge_features)):
        raise ValidationError("non-finite feature value")
    present = g.labels[~np.isnan(g.labels)]
    if not np.all((present == 0) | (present == 1)):
        raise ValidationError("labels must be 0, 1 or null")
    if g.split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {g.split!r}")


@dataclass(eq=False)
class Dataset:
    graphs: list[LabeledGraph]
    d_in: int
    d_e: int
    T: int
    name: str = "dataset"

    def __post_init__(self) -> None:
        for idx, g in enumerate(self.graphs):
            if g.d_in != self.d_in:
                raise ValidationError(f"graph {idx}: node feature dim {g.d_in} != d_in {self.d_in}")
            if g.num_edges and g.d_e != self.d_e:
                raise ValidationError(f"graph {idx}: edge feature dim {g.d_e} != d_e {self.d_e}")
            if not g.num_edges:
                g.edge_features = np.zeros((0, self.d_e))
            if g.labels.shape[0] != self.T:
                raise ValidationError(f"graph {idx}: {g.labels.shape[0]} labels, expected T={self.T}")
        missing = [s for s in SPLITS if not any(g.split == s for g in self.graphs)]
        if missing:
            raise ValidationError(f"no graphs in split(s) {missing}")

    def split(self, name: str) -> list[LabeledGraph]:
        return [g for g in self.graphs if g.split == name]

    def __len__(self) -> int:
        return len(self.graphs)

    def header(self) -> dict:
        return {"d_in": self.d_in, "d_e": self.d_e, "T": self.T, "name": self.name}

    def dumps(self) -> str:
        lines = [_dump(self.header())] + [_dump(g.to_json()) for g in self.graphs]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _parse_graph(obj, header: dict, lineno: int) -> LabeledGraph:
    def fail(msg: str):
        raise ValidationError(f"line {lineno}: {msg}")

    if not isinstance(obj, dict):
        fail("expected a JSON object")
    for key in ("nodes", "edges", "labels", "split"):
        if key not in obj:
            fail(f"missing key {key!r}")
    d_in, d_e, T = header["d_in"], header["d_e"], header["T"]
    nodes = obj["nodes"]
    if not isinstance(nodes, list) or not nodes:
        fail("'nodes' must be a non-empty array")
    for row in nodes:
        if not isinstance(row, list) or len(row) != d_in:
            fail(f"dimension mismatch: node feature rows must have d_in={d_in} entries")
    edges, efeat = [], []
    for e in obj["edges"]:
        if not (isinstance(e, list) and len(e) == 3 and isinstance(e[2], list)):
            fail("each edge must be [i, j, [features]]")
        i, j, f = e
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (i, j)):
            fail("edge endpoints must be integers")
        if not (0 <= i < len(nodes) and 0 <= j < len(nodes)):
            fail(f"edge index out of range: [{i}, {j}] in a {len(nodes)}-node graph")
        if len(f) != d_e:
            fail(f"dimension mismatch: edge features must have d_e={d_e} entries")
        edges.append((i, j))
        efeat.append(f)
    labels = obj["labels"]
    if not isinstance(labels, list) or len(labels) != T:
        fail(f"dimension mismatch: expected T={T} labels")
    if any(v not in (0, 1, None) or isinstance(v, bool) for v in labels):
        fail("labels must be 0, 1 or null")
    try:
        x = np.array(nodes, dtype=np.float64)
        ef = np.array(efeat, dtype=np.float64).reshape(len(edges), d_e)
    except (TypeError, ValueError):
        fail("features must be numbers")
    try:
        return LabeledGraph(
            x,
            np.array(edges, dtype=np.int64).reshape(-1, 2),
            ef,
            np.array([np.nan if v is None else v for v in labels], dtype=np.float64),
            obj["split"],
        )
    except ValidationError as exc:
        fail(str(exc))


def loads_dataset(text: str, source: str = "<string>") -> Dataset:
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), 1) if ln.strip()]
    if not lines:
        raise ValidationError(f"{source}: empty dataset file")
    parsed = []
    for lineno, line in lines:
        try:
            parsed.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    (hline, header), rest = parsed[0], parsed[1:]
    if not isinstance(header, dict) or not {"d_in", "d_e", "T", "name"} <= header.keys():
        raise ValidationError(f"line {hline}: header must have keys d_in, d_e, T, name")
    for key in ("d_in", "d_e", "T"):
        if not isinstance(header[key], int) or header[key] < (0 if key == "d_e" else 1):
            raise ValidationError(f"line {hline}: invalid {key}={header[key]!r}")
    graphs = [_parse_graph(obj, header, lineno) for lineno, obj in rest]
    return Dataset(graphs, header["d_in"], header["d_e"], header["T"], str(header["name"]))


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    return loads_dataset(path.read_text(), str(path))


def save_dataset(ds: Dataset, path) -> None:
    from graft.ioutil import atomic_write_text

    atomic_write_text(path, ds.dumps())


class GraphBatch:
    """Disjoint union of graphs, laid out for the message-passing kernels."""

    def __init__(self, graphs: list[LabeledGraph]):
        if not graphs:
            raise ValidationError("empty batch")
        self.graphs = graphs
        self.num_graphs = len(graphs)
        sizes = np.array([g.n for g in graphs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.num_nodes = int(sizes.sum())
        self.x = np.concatenate([g.node_features for g in graphs])
        src, dst, feat = zip(*(g.directed() for g in graphs))
        self.src = np.concatenate([s + o for s, o in zip(src, offsets)]).astype(np.int64)
        self.dst = np.concatenate([d + o for d, o in zip(dst, offsets)]).astype(np.int64)
        self.edge_attr = np.concatenate(feat)
        self.node_graph = Segments(np.repeat(np.arange(self.num_graphs), sizes), self.num_graphs)
        self.in_edges = Segments(self.dst, self.num_nodes)
        self.labels = np.stack([g.labels for g in graphs])

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]


# --- synthetic structural tasks -------------------------------------------------

def adjacency(n: int, edges) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int64)
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    return a


def count_triangles(a: np.ndarray) -> int:
    return int(np.trace(a @ a @ a)) // 6


def count_four_cycles(a: np.ndarray) -> int:
    deg = a.sum(axis=1)
    m = int(deg.sum()) // 2
    a2 = a @ a
    closed_walks = int(np.trace(a2 @ a2))
    return (closed_walks - 2 * m - 4 * int((deg * (deg - 1) // 2).sum())) // 8


def task_labels(task: str, n: int, edges) -> list[int]:
    """Exact combinatorial labels of a structure for ``task``."""
    a = adjacency(n, edges)
    if task == "triangle-detect":
        return [int(count_triangles(a) > 0)]
    if task == "degree-parity":
        return [int(a.sum(axis=1).max()) % 2]
    if task == "motif-count-threshold":
        return [int(count_triangles(a) >= 2), int(count_four_cycles(a) >= 2)]
    raise ValidationError(f"unknown task id {task!r}; expected one of {TASKS}")


def task_dims(task: str) -> int:
    return len(task_labels(task, 1, []))


def _random_structure(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Uniform random recursive tree plus between 0 and n uniformly placed chords."""
    edges = set()
    order = rng.permutation(n)
    for idx in range(1, n):
        u, v = int(order[idx]), int(order[rng.integers(0, idx)])
        edges.add((min(u, v), max(u, v)))
    n_extra = min(int(rng.integers(0, n + 1)), (n - 1) * (n - 2) // 2)
    while n_extra:
        u, v = sorted(int(t) for t in rng.choice(n, size=2, replace=False))
        if (u, v) not in edges:
            edges.add((u, v))
            n_extra -= 1
    return sorted(edges)


def generate_synthetic(
    task: str,
    count: int,
    seed: int,
    n_min: int = 8,
    n_max: int = 16,
    missing_rate: float | None = None,
) -> Dataset:
    """Deterministic synthetic dataset with exact structural labels.

    Node features: a constant 1, a one-hot node type and two uniform
    attributes in [-1, 1].  Edge features: a one-hot bond type and a
    constant 1.  Types and attributes are random and carry no label signal.
    Splits are the first 80% / next 10% / last 10% of graphs by index.
    """
    if task not in TASKS:
        raise ValidationError(f"unknown task id {task!r}; expected one of {TASKS}")
    if count < 10:
        raise ValidationError("count must be >= 10")
    if not 3 <= n_min <= n_max:
        raise ValidationError("need 3 <= n_min <= n_max")
    if missing_rate is None:
        missing_rate = 0.1 if task == "motif-count-threshold" else 0.0
    rng = np.random.default_rng(seed)
    n_train, n_valid = int(0.8 * count), int(0.1 * count)
    graphs = []
    for idx in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        edges = _random_structure(rng, n)
        x = np.zeros((n, SYNTH_D_IN))
        x[:, 0] = 1.0
        x[np.arange(n), 1 + rng.integers(0, N_NODE_TYPES, n)] = 1.0
        x[:, 1 + N_NODE_TYPES:] = rng.uniform(-1.0, 1.0, size=(n, 2))
        ef = np.zeros((len(edges), SYNTH_D_E))
        ef[np.arange(len(edges)), rng.integers(0, N_BOND_TYPES, len(edges))] = 1.0
        ef[:, -1] = 1.0
        labels = np.array(task_labels(task, n, edges), dtype=np.float64)
        if missing_rate > 0:
            labels[rng.random(labels.shape[0]) < missing_rate] = np.nan
        split = "train" if idx < n_train else "valid" if idx < n_train + n_valid else "test"
        graphs.append(LabeledGraph(x, np.array(edges, dtype=np.int64).reshape(-1, 2), ef, labels, split))
    return Dataset(graphs, SYNTH_D_IN, SYNTH_D_E, len(graphs[0].labels), task)
