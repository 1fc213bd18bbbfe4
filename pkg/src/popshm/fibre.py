"""Per-structure stratified data store.

Stratum 0 holds raw synchronous time records on a (channel, acquisition)
grid; derived strata are produced cell-wise by registered operators and are
append-only, each carrying the full operator chain that created it. The
projection operators select channels, acquisitions, single cells or whole
strata.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateRecordError,
    InvalidInputError,
    NotFoundError,
    OperatorContractError,
    RecordShapeError,
    SynchronisationError,
)
from .operators import OperatorSpec

_REL_TOL = 1e-9


@dataclass(frozen=True)
class TimeRecord:
    """One stored record: channel j, acquisition k, samples, and the
    acquisition-wide sampling metadata."""

    channel: int
    acquisition: int
    samples: np.ndarray
    f_s: float
    start_time: float


@dataclass
class Stratum:
    """One feature space in the fibre: a grid of equal-length records plus
    the operator chain that produced it from stratum 0."""

    index: int
    record_dim: int
    grid: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    chain: tuple[OperatorSpec, ...] = ()

    def cells(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.grid))

    def chain_hash(self) -> str:
        doc = json.dumps([spec.to_dict() for spec in self.chain], sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.flags.writeable = False
    return out


class Fibre:
    """Total data space of one structure.

    One writer or many readers: ingest and apply_operator mutate internal
    dictionaries, every stored array is frozen, and existing strata are
    never modified after creation.
    """

    def __init__(self, structure_id: str, *, n_s: int, n_t: int, n_r: int,
                 f_s: float, delta_tau: float,
                 channels: dict[int, str] | None = None):
        if n_s < 1 or n_t < 1 or n_r < 1:
            raise InvalidInputError("n_s, n_t and n_r must be positive")
        if f_s <= 0.0 or delta_tau <= 0.0:
            raise InvalidInputError("f_s and delta_tau must be positive")
        if delta_tau <= 1.0 / f_s:
            raise InvalidInputError("acquisition period must exceed the sample period")
        self.structure_id = structure_id
        self.n_s = n_s
        self.n_t = n_t
        self.n_r = n_r
        self.f_s = f_s
        self.delta_tau = delta_tau
        self.channels = dict(channels) if channels else {}
        self._strata: list[Stratum] = [Stratum(index=0, record_dim=n_t)]
        self._start_times: dict[int, float] = {}
        self._anchor: float | None = None

    # -- ingest -------------------------------------------------------------

    @property
    def record_count(self) -> int:
        return len(self._strata[0].grid)

    @property
    def stratum_count(self) -> int:
        return len(self._strata)

    def acquisition_start_time(self, k: int) -> float:
        try:
            return self._start_times[k]
        except KeyError:
            raise NotFoundError(f"acquisition {k} has no records") from None

    def ingest(self, channel: int, acquisition: int, samples,
               start_time: float) -> None:
        """Store a raw record at (channel, acquisition).

        Re-ingesting an identical record is a no-op; a conflicting record at
        an occupied cell raises. Enforces the shared record length, the
        per-acquisition synchronisation of start times, and periodicity of
        the trigger schedule.
        """
        if not (0 <= channel < self.n_s):
            raise InvalidInputError(f"channel {channel} outside [0, {self.n_s})")
        if not (0 <= acquisition < self.n_r):
            raise InvalidInputError(f"acquisition {acquisition} outside [0, {self.n_r})")
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or len(samples) != self.n_t:
            raise RecordShapeError(
                f"record length {samples.shape} != fibre record length {self.n_t}")
        key = (channel, acquisition)
        raw = self._strata[0]
        if key in raw.grid:
            existing = raw.grid[key]
            if (np.array_equal(existing, samples)
                    and math.isclose(self._start_times[acquisition], start_time,
                                     rel_tol=_REL_TOL, abs_tol=1e-12)):
                return
            raise DuplicateRecordError(f"cell {key} already holds a different record")
        if acquisition in self._start_times:
            if not math.isclose(self._start_times[acquisition], start_time,
                                rel_tol=_REL_TOL, abs_tol=1e-12):
                raise SynchronisationError(
                    f"start time {start_time} desynchronised from acquisition "
                    f"{acquisition} siblings at {self._start_times[acquisition]}")
        else:
            anchor = self._anchor
            if anchor is None:
                self._anchor = start_time - acquisition * self.delta_tau
            else:
                expected = anchor + acquisition * self.delta_tau
                if not math.isclose(expected, start_time,
                                    rel_tol=_REL_TOL, abs_tol=1e-9 * self.delta_tau):
                    raise SynchronisationError(
                        f"acquisition {acquisition} start {start_time} breaks the "
                        f"periodic schedule (expected {expected})")
            self._start_times[acquisition] = start_time
        raw.grid[key] = _freeze(samples)

    # -- projections ----------------------------------------------------------

    def _stratum(self, m: int) -> Stratum:
        if not (0 <= m < len(self._strata)):
            raise NotFoundError(f"no stratum {m}")
        return self._strata[m]

    def project_channel(self, m: int, channel: int) -> list[TimeRecord]:
        """pi_j: every record on one channel, ordered by acquisition."""
        stratum = self._stratum(m)
        out = []
        for (j, k) in stratum.cells():
            if j == channel:
                out.append(self._record(stratum, j, k))
        return out

    def project_time(self, m: int, acquisition: int) -> list[TimeRecord]:
        """pi_k: every channel at one acquisition, ordered by channel."""
        stratum = self._stratum(m)
        out = []
        for (j, k) in stratum.cells():
            if k == acquisition:
                out.append(self._record(stratum, j, k))
        return out

    def project_cell(self, m: int, channel: int, acquisition: int) -> TimeRecord:
        """pi_jk: the single record for one channel at one acquisition."""
        stratum = self._stratum(m)
        key = (channel, acquisition)
        if key not in stratum.grid:
            raise NotFoundError(f"stratum {m} has no record at {key}")
        return self._record(stratum, channel, acquisition)

    def project_stratum(self, m: int) -> Stratum:
        """pi^(m): the whole stratum."""
        return self._stratum(m)

    def _record(self, stratum: Stratum, j: int, k: int) -> TimeRecord:
        return TimeRecord(
            channel=j,
            acquisition=k,
            samples=stratum.grid[(j, k)],
            f_s=self.f_s,
            start_time=self._start_times.get(k, math.nan),
        )

    # -- derived strata -------------------------------------------------------

    def apply_operator(self, m_in: int, spec: OperatorSpec) -> int:
        """Apply a registered operator cell-wise to stratum m_in, appending
        (or reusing) the derived stratum and returning its index.

        Identical chains are deduplicated by content hash, so replaying a
        pipeline never grows the fibre.
        """
        source = self._stratum(m_in)
        chain = source.chain + (spec,)
        chain_doc = json.dumps([s.to_dict() for s in chain], sort_keys=True)
        chain_hash = hashlib.sha256(chain_doc.encode()).hexdigest()
        for stratum in self._strata:
            if stratum.chain_hash() == chain_hash and stratum.chain == chain:
                return stratum.index
        out_dim = spec.out_dim(source.record_dim, self.f_s)
        grid = {}
        for key in source.cells():
            result = spec.apply(source.grid[key], self.f_s)
            if len(result) != out_dim:
                raise OperatorContractError(
                    f"operator {spec.name!r} broke its dimension contract at {key}")
            grid[key] = _freeze(result)
        stratum = Stratum(index=len(self._strata), record_dim=out_dim,
                          grid=grid, chain=chain)
        self._strata.append(stratum)
        return stratum.index

    def provenance(self, m: int) -> tuple[OperatorSpec, ...]:
        """Ordered operator chain that produced stratum m; empty for m = 0."""
        return self._stratum(m).chain

    def feature_matrix(self, m: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Stack stratum m records into a (cells x record_dim) matrix, rows
        ordered by (acquisition, channel), returning the cell order."""
        stratum = self._stratum(m)
        keys = sorted(stratum.grid, key=lambda jk: (jk[1], jk[0]))
        if not keys:
            return np.zeros((0, stratum.record_dim)), []
        return np.vstack([stratum.grid[key] for key in keys]), keys


def find_stratum(fibre: Fibre, chain_names: tuple[str, ...]) -> int:
    """Index of the stratum whose chain matches the given operator names."""
    for m in range(fibre.stratum_count):
        chain = fibre.provenance(m)
        if tuple(spec.name for spec in chain) == tuple(chain_names):
            return m
    raise NotFoundError(f"no stratum with chain {chain_names}")


# ---------------------------------------------------------------------------
# Persistence: one directory per structure
# ---------------------------------------------------------------------------

_META_NAME = "meta.json"
_MANIFEST_NAME = "manifest.json"


def save_fibre(fibre: Fibre, directory: str | Path) -> None:
    """Write meta document, per-stratum flat binaries (little-endian float64,
    row-major over sorted (channel, acquisition, sample)) and the chain
    manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "structure_id": fibre.structure_id,
        "n_s": fibre.n_s,
        "n_t": fibre.n_t,
        "n_r": fibre.n_r,
        "f_s": fibre.f_s,
        "delta_tau": fibre.delta_tau,
        "channels": {str(j): s for j, s in sorted(fibre.channels.items())},
        "start_times": {str(k): t for k, t in sorted(fibre._start_times.items())},
    }
    (directory / _META_NAME).write_text(json.dumps(meta, indent=2) + "\n")
    manifest = []
    for m in range(fibre.stratum_count):
        stratum = fibre.project_stratum(m)
        cells = stratum.cells()
        data = np.concatenate([stratum.grid[c] for c in cells]) if cells else np.zeros(0)
        data.astype("<f8").tofile(directory / f"stratum_{m:03d}.bin")
        manifest.append({
            "index": m,
            "record_dim": stratum.record_dim,
            "cells": [list(c) for c in cells],
            "chain": [spec.to_dict() for spec in stratum.chain],
            "chain_hash": stratum.chain_hash(),
        })
    (directory / _MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_fibre(directory: str | Path) -> Fibre:
    directory = Path(directory)
    try:
        meta = json.loads((directory / _META_NAME).read_text())
        manifest = json.loads((directory / _MANIFEST_NAME).read_text())
    except FileNotFoundError as exc:
        raise NotFoundError(f"not a fibre directory: {directory} ({exc})") from None
    fibre = Fibre(
        meta["structure_id"], n_s=meta["n_s"], n_t=meta["n_t"], n_r=meta["n_r"],
        f_s=meta["f_s"], delta_tau=meta["delta_tau"],
        channels={int(j): s for j, s in meta.get("channels", {}).items()})
    start_times = {int(k): t for k, t in meta["start_times"].items()}
    for entry in manifest:
        m = entry["index"]
        data = np.fromfile(directory / f"stratum_{m:03d}.bin", dtype="<f8")
        cells = [tuple(c) for c in entry["cells"]]
        dim = entry["record_dim"]
        if len(data) != dim * len(cells):
            raise InvalidInputError(
                f"stratum {m} binary holds {len(data)} values, "
                f"expected {dim * len(cells)}")
        if m == 0:
            for i, (j, k) in enumerate(cells):
                fibre.ingest(j, k, data[i * dim:(i + 1) * dim], start_times[k])
        else:
            chain = tuple(OperatorSpec.from_dict(d) for d in entry["chain"])
            grid = {
                (j, k): _freeze(data[i * dim:(i + 1) * dim])
                for i, (j, k) in enumerate(cells)
            }
            fibre._strata.append(Stratum(index=m, record_dim=dim, grid=grid,
                                         chain=chain))
    return fibre


def stratum_to_csv(fibre: Fibre, m: int, path: str | Path) -> None:
    """Flat CSV export: channel, acquisition, then the record values."""
    stratum = fibre.project_stratum(m)
    lines = ["channel,acquisition," + ",".join(
        f"v{i}" for i in range(stratum.record_dim))]
    for (j, k) in stratum.cells():
        values = ",".join(repr(float(v)) for v in stratum.grid[(j, k)])
        lines.append(f"{j},{k},{values}")
    Path(path).write_text("\n".join(lines) + "\n")
