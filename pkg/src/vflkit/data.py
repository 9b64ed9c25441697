"""Party data: CSV ingestion and the synthetic vertical-partition generator.

Each party's table is a CSV with a header row: one string id column,
float feature columns, and (master only) a 0/1 label column. The
generator fabricates a vertically split dataset with a known linear
teacher so demo runs have learnable structure, and drops a random ~10%
of ids per party so the matching phase has real work to do.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .models import sigmoid
from .seeds import substream
from .tensor import Tensor

DROP_RATE = 0.1


@dataclass(frozen=True)
class PartyDataset:
    """One party's local table, already split into ids/features/labels."""

    ids: tuple[str, ...]
    features: Tensor
    labels: Tensor | None
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.features.rows != len(self.ids):
            raise DataError(
                f"{self.features.rows} feature rows for {len(self.ids)} ids"
            )
        if self.labels is not None and self.labels.rows != len(self.ids):
            raise DataError(
                f"{self.labels.rows} labels for {len(self.ids)} ids"
            )


def load_party_csv(path: str | Path, id_column: str = "id",
                   label_column: str | None = None) -> PartyDataset:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        if id_column not in header:
            raise DataError(f"{path}: id column {id_column!r} not in header {header}")
        if label_column is not None and label_column not in header:
            raise DataError(
                f"{path}: label column {label_column!r} not in header {header}"
            )
        id_pos = header.index(id_column)
        label_pos = header.index(label_column) if label_column is not None else None
        feature_pos = [
            i for i in range(len(header)) if i != id_pos and i != label_pos
        ]
        feature_names = tuple(header[i] for i in feature_pos)

        ids: list[str] = []
        seen: set[str] = set()
        flat: list[float] = []
        labels: list[float] = []
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{rowno}: {len(row)} cells, header has {len(header)}"
                )
            rid = row[id_pos]
            if rid in seen:
                raise DataError(f"{path}:{rowno}: duplicate id {rid!r}")
            seen.add(rid)
            ids.append(rid)
            for i in feature_pos:
                try:
                    flat.append(float(row[i]))
                except ValueError:
                    raise DataError(
                        f"{path}:{rowno}: column {header[i]!r}: "
                        f"{row[i]!r} is not a number"
                    ) from None
            if label_pos is not None:
                try:
                    labels.append(float(row[label_pos]))
                except ValueError:
                    raise DataError(
                        f"{path}:{rowno}: column {label_column!r}: "
                        f"{row[label_pos]!r} is not a number"
                    ) from None

    features = Tensor(len(ids), len(feature_pos), tuple(flat))
    label_tensor = (
        Tensor(len(ids), 1, tuple(labels)) if label_pos is not None else None
    )
    return PartyDataset(tuple(ids), features, label_tensor, feature_names)


def check_binary_labels(dataset: PartyDataset, protocol: str) -> None:
    """Classification protocols want 0/1 labels; fail early otherwise."""
    if protocol == "linreg" or dataset.labels is None:
        return
    for i, v in enumerate(dataset.labels.data):
        if v not in (0.0, 1.0):
            raise DataError(
                f"label at row {i} is {v!r}; {protocol} needs 0/1 labels"
            )


def gen_synthetic(out_dir: str | Path, parties: int, rows: int,
                  features_per_party: int, seed: int) -> dict[str, Path]:
    """Write one CSV per data-holding party (members first, master last).

    The full feature matrix is standard normal; labels come from a random
    linear teacher pushed through a sigmoid and thresholded at 1/2. Every
    party independently drops ~10% of the ids so intersections are proper
    subsets. Deterministic: same arguments, same bytes.
    """
    if parties < 2:
        raise DataError("need at least 2 parties (1 member + master)")
    if rows < 0 or features_per_party < 1:
        raise DataError("rows must be >= 0 and features_per_party >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    width = max(3, len(str(max(rows - 1, 0))))
    ids = [f"r{i:0{width}d}" for i in range(rows)]
    total_features = parties * features_per_party

    feat_rng = substream(seed, "gen", "features")
    matrix = [
        [feat_rng.gauss(0.0, 1.0) for _ in range(total_features)]
        for _ in range(rows)
    ]
    teacher_rng = substream(seed, "gen", "teacher")
    w = [teacher_rng.gauss(0.0, 1.0) for _ in range(total_features)]
    bias = teacher_rng.gauss(0.0, 0.5)
    labels = []
    for row in matrix:
        z = bias
        for j in range(total_features):
            z += row[j] * w[j]
        labels.append(1.0 if sigmoid(z) >= 0.5 else 0.0)

    # column blocks: member0, member1, ..., then the master takes the tail
    names = [f"member{k}" for k in range(parties - 1)] + ["master"]
    written: dict[str, Path] = {}
    for k, name in enumerate(names):
        lo = k * features_per_party
        hi = lo + features_per_party
        drop_rng = substream(seed, "gen", "drop", name)
        keep = [i for i in range(rows) if drop_rng.random() >= DROP_RATE]
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            feat_header = [f"x{j}" for j in range(features_per_party)]
            if name == "master":
                writer.writerow(["id"] + feat_header + ["label"])
                for i in keep:
                    writer.writerow(
                        [ids[i]] + [repr(v) for v in matrix[i][lo:hi]]
                        + [repr(labels[i])]
                    )
            else:
                writer.writerow(["id"] + feat_header)
                for i in keep:
                    writer.writerow([ids[i]] + [repr(v) for v in matrix[i][lo:hi]])
        written[name] = path
    return written
