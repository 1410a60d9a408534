"""Artifact persistence: CSV/JSON readers and writers with reproducible bytes.

Every float is rendered with ``%.17g`` (lossless for doubles), every text file
is UTF-8 with LF endings, and JSON keys are sorted — so a rerun with the same
seed and config produces byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .gibbs import ChainRecord, GroupedData

__all__ = [
    "fmt_float",
    "write_json",
    "read_json",
    "write_grouped_csv",
    "read_grouped_csv",
    "write_adjacency_csv",
    "read_adjacency_csv",
    "write_chain",
    "read_chain",
    "write_transforms",
    "read_transforms",
    "write_truth_csv",
    "read_truth_csv",
    "jitter_values",
]

META_NAME = "meta.json"
DRAWS_NAME = "draws.csv"
LOGJOINT_NAME = "logjoint.csv"
TRANSFORMS_NAME = "transforms.csv"


def fmt_float(x: float) -> str:
    """Shortest-but-lossless decimal rendering used in every CSV cell."""
    return f"{float(x):.17g}"


def _open_w(path: str | os.PathLike):
    # newline="" + LF terminators keep bytes platform-independent.
    return open(path, "w", encoding="utf-8", newline="")


def write_json(path: str | os.PathLike, payload: dict) -> None:
    """Sorted-key JSON with LF endings; numpy scalars/arrays converted first."""

    def default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer, np.bool_)):
            return obj.item()
        raise TypeError(f"not JSON-serializable: {type(obj).__name__}")

    text = json.dumps(payload, sort_keys=True, indent=2, default=default)
    with _open_w(path) as fh:
        fh.write(text + "\n")


def read_json(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Grouped observations


def write_grouped_csv(
    path: str | os.PathLike, data: GroupedData, labels: list[str] | None = None
) -> None:
    """``group,value`` rows, one per observation, groups in index order."""
    if labels is not None and len(labels) != data.n_groups:
        raise ValueError("one label per group required")
    with _open_w(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "value"])
        for j, ys in enumerate(data.groups):
            name = labels[j] if labels is not None else str(j)
            for y in ys:
                writer.writerow([name, fmt_float(y)])


def read_grouped_csv(path: str | os.PathLike) -> tuple[GroupedData, list[str]]:
    """Parse ``group,value`` rows; group indices follow first appearance.

    Returns the data plus the label list, so non-integer group names survive a
    round trip.
    """
    order: dict[str, int] = {}
    values: list[list[float]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["group", "value"]:
            raise ValueError(f"{path}: expected header 'group,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: need group and value columns")
            key = row[0].strip()
            try:
                y = float(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad value {row[1]!r}") from None
            idx = order.setdefault(key, len(order))
            if idx == len(values):
                values.append([])
            values[idx].append(y)
    if not values:
        raise ValueError(f"{path}: no observations")
    data = GroupedData(groups=tuple(np.array(v) for v in values))
    return data, list(order)


def jitter_values(data: GroupedData, sd: float, rng: np.random.Generator) -> GroupedData:
    """Additive Gaussian noise for discrete observations (default scale 0.25)."""
    if not sd > 0.0:
        raise ValueError("jitter sd must be positive")
    return GroupedData(
        groups=tuple(np.asarray(g) + sd * rng.standard_normal(len(g)) for g in data.groups)
    )


# ---------------------------------------------------------------------------
# Adjacency


def write_adjacency_csv(path: str | os.PathLike, adjacency: np.ndarray) -> None:
    """Upper-triangle edge list ``i,j`` of a symmetric 0/1 matrix."""
    w = np.asarray(adjacency)
    with _open_w(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j"])
        for i, j in zip(*np.nonzero(np.triu(w, k=1))):
            writer.writerow([int(i), int(j)])


def read_adjacency_csv(path: str | os.PathLike, n_sites: int | None = None) -> np.ndarray:
    """Edge list to symmetric 0/1 matrix; either edge direction may be listed.

    Self-loops are rejected; size defaults to the largest index plus one.
    """
    edges: list[tuple[int, int]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["i", "j"]:
            raise ValueError(f"{path}: expected header 'i,j'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: bad edge row {row!r}") from None
            if i == j:
                raise ValueError(f"{path}:{lineno}: self-loop at site {i}")
            if i < 0 or j < 0:
                raise ValueError(f"{path}:{lineno}: negative site index")
            edges.append((i, j))
    if not edges:
        raise ValueError(f"{path}: no edges")
    top = max(max(e) for e in edges)
    n = top + 1 if n_sites is None else n_sites
    if top >= n:
        raise ValueError(f"{path}: edge index {top} exceeds n_sites={n}")
    w = np.zeros((n, n))
    for i, j in edges:
        w[i, j] = w[j, i] = 1.0
    return w


# ---------------------------------------------------------------------------
# Chain directory


def _write_matrix_csv(path: str | os.PathLike, header: list[str], rows) -> None:
    with _open_w(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_chain(out_dir: str | os.PathLike, record: ChainRecord, meta: dict) -> None:
    """Persist a chain as meta.json + draws.csv + logjoint.csv.

    One draws.csv row per kept draw: atom means/variances, jumps, row-major
    scores, then row-major loadings.  Dimensions go into meta.json under
    ``chain`` so the reader can rebuild the arrays.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d, k = record.n_draws, record.n_atoms
    h, g = record.n_factors, record.n_groups
    meta = dict(meta)
    meta["chain"] = {
        "n_draws": d,
        "n_atoms": k,
        "n_factors": h,
        "n_groups": g,
        "stats": {k2: (fmt_float(v) if isinstance(v, float) else v)
                  for k2, v in record.stats.items()},
    }
    write_json(out / META_NAME, meta)

    header = (
        ["draw"]
        + [f"atom_mean_{i}" for i in range(k)]
        + [f"atom_var_{i}" for i in range(k)]
        + [f"jump_{i}" for i in range(k)]
        + [f"score_{h_}_{i}" for h_ in range(h) for i in range(k)]
        + [f"loading_{j}_{h_}" for j in range(g) for h_ in range(h)]
    )

    def rows():
        for i in range(d):
            flat = np.concatenate(
                [
                    record.atom_means[i],
                    record.atom_vars[i],
                    record.jumps[i],
                    record.scores[i].ravel(),
                    record.loadings[i].ravel(),
                ]
            )
            yield [str(i)] + [fmt_float(x) for x in flat]

    _write_matrix_csv(out / DRAWS_NAME, header, rows())
    _write_matrix_csv(
        out / LOGJOINT_NAME,
        ["draw", "log_joint"],
        ([str(i), fmt_float(record.log_joint[i])] for i in range(d)),
    )


def read_chain(chain_dir: str | os.PathLike) -> tuple[ChainRecord, dict]:
    chain_dir = Path(chain_dir)
    meta = read_json(chain_dir / META_NAME)
    try:
        dims = meta["chain"]
        d, k = int(dims["n_draws"]), int(dims["n_atoms"])
        h, g = int(dims["n_factors"]), int(dims["n_groups"])
    except KeyError as exc:
        raise ValueError(f"{chain_dir}: meta.json lacks chain dimensions ({exc})") from None

    table = np.loadtxt(
        chain_dir / DRAWS_NAME, delimiter=",", skiprows=1, ndmin=2, dtype=float
    )
    expected = 1 + 3 * k + h * k + g * h
    if table.shape != (d, expected):
        raise ValueError(
            f"{chain_dir}/draws.csv: shape {table.shape}, expected ({d}, {expected})"
        )
    body = table[:, 1:]
    at = 0

    def take(n: int) -> np.ndarray:
        nonlocal at
        block = body[:, at : at + n]
        at += n
        return block

    atom_means = take(k)
    atom_vars = take(k)
    jumps = take(k)
    scores = take(h * k).reshape(d, h, k)
    loadings = take(g * h).reshape(d, g, h)
    lj = np.loadtxt(chain_dir / LOGJOINT_NAME, delimiter=",", skiprows=1, ndmin=2)
    if lj.shape != (d, 2):
        raise ValueError(f"{chain_dir}/logjoint.csv: expected {d} rows")
    stats = dict(meta["chain"].get("stats", {}))
    record = ChainRecord(
        atom_means=atom_means,
        atom_vars=atom_vars,
        jumps=jumps,
        scores=scores,
        loadings=loadings,
        log_joint=lj[:, 1],
        stats=stats,
    )
    return record, meta


# ---------------------------------------------------------------------------
# Transform (and alignment) table


def write_transforms(
    path: str | os.PathLike, results, perms=None, template_draw: int | None = None
) -> None:
    """One row per draw: flat transform, losses, violation, flags; optional permutation.

    Alignment rewrites the same file with ``perm_*`` columns appended, so the
    table stays the single source of truth for the post-processing state.
    """
    results = list(results)
    if not results:
        raise ValueError("no transform rows to write")
    h = results[0].matrix.shape[0]
    header = (
        ["draw"]
        + [f"q_{a}_{b}" for a in range(h) for b in range(h)]
        + ["loss", "loss_identity", "max_violation", "max_det_err",
           "success", "converged", "outer_iters", "inner_iters"]
    )
    if perms is not None:
        if len(perms) != len(results):
            raise ValueError("one permutation per transform required")
        header += [f"perm_{a}" for a in range(h)]
        header += ["template_draw"]
    with _open_w(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, res in enumerate(results):
            if res.matrix.shape != (h, h):
                raise ValueError(f"transform {i} has shape {res.matrix.shape}, expected ({h}, {h})")
            row = (
                [str(i)]
                + [fmt_float(x) for x in res.matrix.ravel()]
                + [fmt_float(res.loss), fmt_float(res.loss_identity),
                   fmt_float(res.max_violation), fmt_float(res.max_det_err),
                   str(int(res.success)), str(int(res.converged)),
                   str(res.outer_iters), str(res.inner_iters)]
            )
            if perms is not None:
                row += [str(int(p)) for p in perms[i].perm]
                row += [str(int(template_draw))]
            writer.writerow(row)


class TransformRow:
    """Read-back view of one transforms.csv row."""

    __slots__ = ("matrix", "loss", "loss_identity", "max_violation",
                 "max_det_err", "success", "converged", "outer_iters", "inner_iters")

    def __init__(self, matrix, loss, loss_identity, max_violation, max_det_err,
                 success, converged, outer_iters, inner_iters):
        self.matrix = matrix
        self.loss = loss
        self.loss_identity = loss_identity
        self.max_violation = max_violation
        self.max_det_err = max_det_err
        self.success = success
        self.converged = converged
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters


def read_transforms(path: str | os.PathLike):
    """Returns (rows, perms, template_draw); perms is None before alignment."""
    from .align import PermutationMatrix

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "draw":
            raise ValueError(f"{path}: not a transforms table")
        q_cols = [c for c in header if c.startswith("q_")]
        h = int(round(len(q_cols) ** 0.5))
        if h * h != len(q_cols):
            raise ValueError(f"{path}: {len(q_cols)} transform columns is not a square")
        has_perm = any(c.startswith("perm_") for c in header)
        idx = {name: i for i, name in enumerate(header)}
        rows: list[TransformRow] = []
        perms: list[PermutationMatrix] = []
        template_draw: int | None = None
        for row in reader:
            if not row:
                continue
            q = np.array([float(row[idx[f"q_{a}_{b}"]]) for a in range(h) for b in range(h)])
            rows.append(
                TransformRow(
                    matrix=q.reshape(h, h),
                    loss=float(row[idx["loss"]]),
                    loss_identity=float(row[idx["loss_identity"]]),
                    max_violation=float(row[idx["max_violation"]]),
                    max_det_err=float(row[idx["max_det_err"]]),
                    success=bool(int(row[idx["success"]])),
                    converged=bool(int(row[idx["converged"]])),
                    outer_iters=int(row[idx["outer_iters"]]),
                    inner_iters=int(row[idx["inner_iters"]]),
                )
            )
            if has_perm:
                perms.append(
                    PermutationMatrix(
                        perm=np.array([int(row[idx[f"perm_{a}"]]) for a in range(h)])
                    )
                )
                template_draw = int(row[idx["template_draw"]])
    if not rows:
        raise ValueError(f"{path}: empty transforms table")
    return rows, (perms if has_perm else None), template_draw


# ---------------------------------------------------------------------------
# Truth tables (synthetic scenarios)


def write_truth_csv(path: str | os.PathLike, measures) -> None:
    """Per-group mixture parameters: weights, means, variances."""
    measures = list(measures)
    k = measures[0].n_atoms
    header = (["group"] + [f"weight_{i}" for i in range(k)]
              + [f"mean_{i}" for i in range(k)] + [f"var_{i}" for i in range(k)])

    def rows():
        for j, m in enumerate(measures):
            yield [str(j)] + [fmt_float(x) for x in
                              np.concatenate([m.weights, m.means, m.variances])]

    _write_matrix_csv(path, header, rows())


def read_truth_csv(path: str | os.PathLike):
    from .align import NormalizedMeasure

    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    k = (table.shape[1] - 1) // 3
    if table.shape[1] != 1 + 3 * k:
        raise ValueError(f"{path}: malformed truth table")
    out = []
    for row in table:
        body = row[1:]
        out.append(
            NormalizedMeasure(
                weights=body[:k], means=body[k : 2 * k], variances=body[2 * k :]
            )
        )
    return out
