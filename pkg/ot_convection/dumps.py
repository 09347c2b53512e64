"""
Text artifacts. Every number is written with 17 significant digits so that dumps round-trip bit-exactly and
reruns can be hash-compared.

    field dump   # grid=torus|box d=<d> n=<n> t=<t> rank=<r>      then per node: coordinates, components
    cloud dump   # atoms=<N> d=<d> m=<m> t=<t>                    then per atom: a, y[, sigma]
    diagnostics  CSV with a fixed header per series
"""

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ot_convection.grid import Field
from ot_convection.rearrange import LagrangianCloud

NUMBER_FORMAT = "%.17g"

PathLike = Union[str, Path]

_HEADER = re.compile(r"(\w+)=(\S+)")


def format_number(value: float) -> str:
    return NUMBER_FORMAT % value


def _parse_header(line: str) -> Dict[str, str]:
    if not line.startswith("#"):
        raise ValueError(f"Dump is missing its header line: {line[:60]!r}")
    return dict(_HEADER.findall(line))


@dataclass
class GridDump:
    grid: str
    d: int
    n: int
    t: float
    coordinates: np.ndarray
    components: np.ndarray

    @property
    def rank(self) -> int:
        return self.components.shape[1]


def write_grid_dump(path: PathLike, grid: str, n: int, t: float, coordinates: np.ndarray,
                    components: np.ndarray) -> Path:
    """ coordinates (N, d) and components (N, rank), nodes in row-major order. """
    path = Path(path)
    d, rank = coordinates.shape[1], components.shape[1]
    header = f"grid={grid} d={d} n={n} t={format_number(t)} rank={rank}"
    np.savetxt(path, np.hstack([coordinates, components]), fmt=NUMBER_FORMAT, header=header, comments="# ")
    return path


def write_field_dump(path: PathLike, f: Field, t: float) -> Path:
    grid = f.grid
    coordinates = grid.coordinates.reshape(grid.d, -1).T
    components = f.values.reshape(f.rank, -1).T
    return write_grid_dump(path, grid.kind, grid.n, t, coordinates, components)


def read_grid_dump(path: PathLike) -> GridDump:
    with open(path, "r") as handle:
        header = _parse_header(handle.readline())
    table = np.atleast_2d(np.loadtxt(path, comments="#"))
    d, rank = int(header["d"]), int(header["rank"])
    if table.shape[1] != d + rank:
        raise ValueError(f"{path}: expected {d + rank} columns, found {table.shape[1]}")
    return GridDump(header["grid"], d, int(header["n"]), float(header["t"]), table[:, :d], table[:, d:])


@dataclass
class CloudDump:
    atoms: np.ndarray
    values: np.ndarray
    t: Optional[float]
    sigma: Optional[np.ndarray] = None

    def cloud(self) -> LagrangianCloud:
        return LagrangianCloud(self.atoms, self.values)


def write_cloud_dump(path: PathLike, cloud: LagrangianCloud, t: Optional[float] = None,
                     sigma: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    header = f"atoms={cloud.size} d={cloud.d} m={cloud.m}"
    if t is not None:
        header += f" t={format_number(t)}"
    table = np.hstack([cloud.atoms, cloud.values])
    formats = [NUMBER_FORMAT] * table.shape[1]
    if sigma is not None:
        header += " sigma=1"
        table = np.hstack([table, np.asarray(sigma, dtype=float)[:, np.newaxis]])
        formats.append("%d")
    np.savetxt(path, table, fmt=formats, header=header, comments="# ")
    return path


def read_cloud_dump(path: PathLike) -> CloudDump:
    with open(path, "r") as handle:
        header = _parse_header(handle.readline())
    table = np.atleast_2d(np.loadtxt(path, comments="#"))
    d, m = int(header["d"]), int(header["m"])
    sigma = table[:, d + m].astype(int) if "sigma" in header else None
    t = float(header["t"]) if "t" in header else None
    return CloudDump(table[:, :d], table[:, d:d + m], t, sigma)


@dataclass
class DiagnosticSeries:
    """ Append-only table of per-step diagnostics with a fixed column order. """

    columns: Sequence[str]
    rows: List[List[float]] = field(default_factory=list)

    def append(self, **values: float):
        missing = set(self.columns) - set(values)
        extra = set(values) - set(self.columns)
        if missing or extra:
            raise ValueError(f"Diagnostic row mismatch; missing {sorted(missing)}, unexpected {sorted(extra)}")
        self.rows.append([float(values[name]) for name in self.columns])

    def column(self, name: str) -> np.ndarray:
        index = list(self.columns).index(name)
        return np.array([row[index] for row in self.rows])

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path: PathLike) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([format_number(value) for value in row])
        return path

    @classmethod
    def read_csv(cls, path: PathLike) -> "DiagnosticSeries":
        with open(path, "r", newline="") as handle:
            reader = csv.reader(handle)
            columns = next(reader)
            rows = [[float(value) for value in row] for row in reader]
        return cls(columns, rows)


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
