"""Built-in Karate dataset and the tab-separated graph bundle format.

A bundle is a directory of five UTF-8, tab-separated, header-less files:

``edges.tsv``     ``i  j`` per undirected edge
``features.tsv``  ``node  feature  value`` per nonzero feature entry
``labels.tsv``    ``node  class`` per labeled node
``splits.tsv``    ``node  train|val|test``
``meta.tsv``      ``key  value`` rows: ``nodes``, ``features``, ``classes``,
                  optionally ``normalized`` (1 if features are already
                  row-normalized) and ``name``
"""

from __future__ import annotations

import os
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import _karate
from .graph import GraphError, build_graph
from .training import UNLABELED, Dataset

FILES = ("edges.tsv", "features.tsv", "labels.tsv", "splits.tsv", "meta.tsv")
SPLITS = ("train", "val", "test")

# fraction of labeled training nodes in the standard public splits
KNOWN_LABEL_RATES = {"cora": 0.052, "citeseer": 0.036, "pubmed": 0.003}
LABEL_RATE_SLACK = 0.10


class BundleError(ValueError):
    pass


def load_karate() -> Dataset:
    """Karate club: one-hot features, 4 community labels, 2 training nodes per class."""
    n = _karate.N
    train = np.zeros(n, dtype=bool)
    train[_karate.train_nodes()] = True
    return Dataset(
        graph=build_graph(n, _karate.EDGES),
        features=np.eye(n),
        labels=_karate.LABELS.copy(),
        train_mask=train,
        val_mask=np.zeros(n, dtype=bool),
        test_mask=~train,
        name="karate",
    )


def row_normalize(X: np.ndarray) -> np.ndarray:
    """Scale each row to sum 1; rows summing to 0 are left unchanged."""
    s = X.sum(axis=1, keepdims=True)
    return np.divide(X, s, out=X.copy(), where=s != 0)


def _rows(path: Path, width: int):
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise BundleError(f"{path}: missing bundle file") from None
    except OSError as exc:
        raise BundleError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != width:
            raise BundleError(f"{path}:{lineno}: expected {width} tab-separated fields, got {len(parts)}")
        yield lineno, parts


def _int(path, lineno, s, what):
    try:
        return int(s)
    except ValueError:
        raise BundleError(f"{path}:{lineno}: {what} {s!r} is not an integer") from None


def _node(path, lineno, s, n):
    i = _int(path, lineno, s, "node id")
    if not 0 <= i < n:
        raise BundleError(f"{path}:{lineno}: node id {i} outside [0, {n})")
    return i


def _read_meta(path: Path) -> dict:
    meta = {}
    for lineno, (key, value) in _rows(path, 2):
        if key in meta:
            raise BundleError(f"{path}:{lineno}: duplicate key {key!r}")
        if key in ("nodes", "features", "classes", "normalized"):
            meta[key] = _int(path, lineno, value, key)
        elif key == "name":
            meta[key] = value
        else:
            raise BundleError(f"{path}:{lineno}: unknown key {key!r}")
    for key in ("nodes", "features", "classes"):
        if key not in meta:
            raise BundleError(f"{path}: missing key {key!r}")
        if meta[key] < 1:
            raise BundleError(f"{path}: {key} must be >= 1")
    return meta


def load_bundle(path) -> Dataset:
    """Read a bundle directory; features are row-normalized unless marked as such."""
    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"{root}: not a bundle directory")
    for name in FILES:
        if not (root / name).is_file():
            raise BundleError(f"{root / name}: missing bundle file")
    meta = _read_meta(root / "meta.tsv")
    n, d, m = meta["nodes"], meta["features"], meta["classes"]

    p = root / "edges.tsv"
    edges = [(_node(p, ln, a, n), _node(p, ln, b, n)) for ln, (a, b) in _rows(p, 2)]
    try:
        graph = build_graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
    except GraphError as exc:
        raise BundleError(f"{p}: {exc}") from exc

    p = root / "features.tsv"
    X = np.zeros((n, d))
    seen = set()
    for ln, (a, b, v) in _rows(p, 3):
        i = _node(p, ln, a, n)
        j = _int(p, ln, b, "feature index")
        if not 0 <= j < d:
            raise BundleError(f"{p}:{ln}: feature index {j} outside [0, {d})")
        if (i, j) in seen:
            raise BundleError(f"{p}:{ln}: duplicate entry for node {i}, feature {j}")
        seen.add((i, j))
        try:
            X[i, j] = float(v)
        except ValueError:
            raise BundleError(f"{p}:{ln}: value {v!r} is not a number") from None
        if not np.isfinite(X[i, j]):
            raise BundleError(f"{p}:{ln}: non-finite feature value")
    if not meta.get("normalized", 0):
        X = row_normalize(X)

    p = root / "labels.tsv"
    labels = np.full(n, UNLABELED, dtype=np.int64)
    for ln, (a, b) in _rows(p, 2):
        i = _node(p, ln, a, n)
        c = _int(p, ln, b, "class id")
        if not 0 <= c < m:
            raise BundleError(f"{p}:{ln}: class id {c} outside [0, {m})")
        if labels[i] != UNLABELED:
            raise BundleError(f"{p}:{ln}: node {i} labeled twice")
        labels[i] = c
    missing = sorted(set(range(m)) - set(labels[labels >= 0].tolist()))
    if missing:
        raise BundleError(f"{p}: class ids not dense, no node has class {missing[0]}")

    p = root / "splits.tsv"
    masks = {s: np.zeros(n, dtype=bool) for s in SPLITS}
    assigned = np.zeros(n, dtype=bool)
    for ln, (a, s) in _rows(p, 2):
        i = _node(p, ln, a, n)
        if s not in masks:
            raise BundleError(f"{p}:{ln}: split {s!r} is not one of {', '.join(SPLITS)}")
        if assigned[i]:
            raise BundleError(f"{p}:{ln}: node {i} assigned to more than one split")
        if labels[i] == UNLABELED:
            raise BundleError(f"{p}:{ln}: node {i} is in a split but has no label")
        assigned[i] = True
        masks[s][i] = True
    if not masks["train"].any():
        raise BundleError(f"{p}: no training nodes")

    name = meta.get("name", "")
    expected = KNOWN_LABEL_RATES.get(name.lower())
    if expected is not None:
        rate = masks["train"].sum() / n
        if abs(rate - expected) > LABEL_RATE_SLACK * expected:
            warnings.warn(f"{root}: label rate {rate:.4f} differs from the usual {expected} for {name}")

    return Dataset(graph, X, labels, masks["train"], masks["val"], masks["test"], name=name)


def _bundle_texts(ds: Dataset) -> dict[str, str]:
    def lines(rows):
        return "".join("\t".join(map(str, r)) + "\n" for r in rows)

    ii, jj = np.nonzero(ds.features)
    split = [
        (i, s) for i in range(ds.n) for s, mask in zip(SPLITS, (ds.train_mask, ds.val_mask, ds.test_mask)) if mask[i]
    ]
    meta = [("nodes", ds.n), ("features", ds.num_features), ("classes", ds.num_classes), ("normalized", 1)]
    if ds.name:
        meta.append(("name", ds.name))
    return {
        "edges.tsv": lines(ds.graph.edges.tolist()),
        "features.tsv": lines((i, j, repr(float(ds.features[i, j]))) for i, j in zip(ii.tolist(), jj.tolist())),
        "labels.tsv": lines((i, int(c)) for i, c in enumerate(ds.labels) if c != UNLABELED),
        "splits.tsv": lines(split),
        "meta.tsv": lines(meta),
    }


def write_bundle(ds: Dataset, path) -> Path:
    """Write ``ds`` as a bundle; every file is replaced atomically."""
    root = Path(path)
    texts = _bundle_texts(ds)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for name, text in texts.items():
            atomic_write_text(root / name, text)
    except OSError as exc:
        raise OSError(f"{root}: cannot write bundle: {exc}") from exc
    return root


def atomic_write_text(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
