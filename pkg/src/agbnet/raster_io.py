"""Grid and footprint data model plus the BTR1 raster container and footprint CSV."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BTR1"
LABEL_SENTINEL = -1.0
DEFAULT_NODATA = -9999.0

FOOTPRINT_COLUMNS = (
    "id",
    "center_x",
    "center_y",
    "radius",
    "rh80",
    "rh98",
    "canopy_cover",
    "sensitivity",
    "quality_flag",
    "degrade_flag",
    "solar_elevation",
    "beam_type",
)


class RasterFormatError(ValueError):
    """Malformed magic or header in a BTR1 file."""


class RasterIntegrityError(ValueError):
    """Header and payload disagree, or a grid violates its invariants."""


class FootprintSchemaError(ValueError):
    pass


class FootprintParseError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class RasterGrid:
    """A north-up, band-major stack of co-registered planes.

    ``values`` has shape ``(bands, rows, cols)``. ``origin`` is the map
    coordinate of the upper-left corner of the upper-left pixel.
    """

    values: np.ndarray
    band_names: list[str]
    origin: tuple[float, float] = (0.0, 0.0)
    pixel_size: tuple[float, float] = (10.0, -10.0)
    nodata: float = DEFAULT_NODATA
    crs: str = "local"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim == 2:
            self.values = self.values[None]
        self.band_names = list(self.band_names)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.pixel_size = (float(self.pixel_size[0]), float(self.pixel_size[1]))
        self.nodata = float(self.nodata)
        self.validate()

    def validate(self) -> None:
        if self.values.ndim != 3:
            raise RasterIntegrityError(f"values must be 3-D, got shape {self.values.shape}")
        if len(self.band_names) != self.values.shape[0]:
            raise RasterIntegrityError(
                f"{len(self.band_names)} band names for {self.values.shape[0]} bands"
            )
        if len(set(self.band_names)) != len(self.band_names):
            raise RasterIntegrityError(f"duplicate band names in {self.band_names}")
        if not (self.pixel_size[0] > 0 and self.pixel_size[1] < 0):
            raise RasterIntegrityError(f"grid must be north-up, got pixel_size {self.pixel_size}")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    def band(self, name: str) -> np.ndarray:
        try:
            return self.values[self.band_names.index(name)]
        except ValueError:
            raise KeyError(f"band {name!r} not in {self.band_names}") from None

    def valid_mask(self, name: str | None = None) -> np.ndarray:
        """True where the pixel is not the nodata sentinel (and finite)."""
        v = self.values if name is None else self.band(name)
        return np.isfinite(v) & (v != self.nodata)

    def like(self, values, band_names=None) -> "RasterGrid":
        """New grid sharing this grid's georeferencing."""
        values = np.asarray(values)
        if values.ndim == 2:
            values = values[None]
        if band_names is None:
            band_names = self.band_names if values.shape[0] == self.bands else [
                f"band_{i}" for i in range(values.shape[0])
            ]
        return RasterGrid(values, band_names, self.origin, self.pixel_size, self.nodata, self.crs)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates of pixel centers: (x per column, y per row)."""
        x = self.origin[0] + (np.arange(self.cols) + 0.5) * self.pixel_size[0]
        y = self.origin[1] + (np.arange(self.rows) + 0.5) * self.pixel_size[1]
        return x, y

    def to_pixel(self, x, y):
        """Fractional (col, row) of a map coordinate, 0 at the upper-left corner."""
        col = (np.asarray(x) - self.origin[0]) / self.pixel_size[0]
        row = (np.asarray(y) - self.origin[1]) / self.pixel_size[1]
        return col, row

    def header(self) -> dict:
        return {
            "dtype": "f32",
            "shape": [self.bands, self.rows, self.cols],
            "band_names": self.band_names,
            "origin": [self.origin[0], self.origin[1]],
            "pixel_size": [self.pixel_size[0], self.pixel_size[1]],
            "nodata": self.nodata,
            "crs": self.crs,
        }

    def equals(self, other: "RasterGrid") -> bool:
        return self.header() == other.header() and np.array_equal(
            self.values.astype("<f4"), other.values.astype("<f4"), equal_nan=True
        )


def _encode(grid: RasterGrid) -> bytes:
    header = json.dumps(grid.header(), separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def _decode(blob: bytes) -> RasterGrid:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise RasterFormatError("missing BTR1 magic")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if 8 + hlen > len(blob):
        raise RasterFormatError(f"header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RasterFormatError(f"bad header JSON: {exc}") from exc
    missing = {"dtype", "shape", "band_names", "origin", "pixel_size", "nodata"} - set(header)
    if missing:
        raise RasterFormatError(f"header missing keys {sorted(missing)}")
    if header["dtype"] != "f32":
        raise RasterFormatError(f"unsupported dtype {header['dtype']!r}")
    shape = tuple(int(s) for s in header["shape"])
    if len(shape) != 3 or min(shape) < 0:
        raise RasterIntegrityError(f"bad shape {header['shape']}")
    payload = blob[8 + hlen :]
    expected = 4 * math.prod(shape)
    if len(payload) != expected:
        raise RasterIntegrityError(f"payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    try:
        return RasterGrid(
            values,
            header["band_names"],
            tuple(header["origin"]),
            tuple(header["pixel_size"]),
            header["nodata"],
            header.get("crs", "local"),
        )
    except RasterIntegrityError:
        raise
    except (TypeError, ValueError) as exc:
        raise RasterFormatError(str(exc)) from exc


def read_raster(path) -> RasterGrid:
    return _decode(Path(path).read_bytes())


def write_raster(grid: RasterGrid, path) -> None:
    grid.validate()
    Path(path).write_bytes(_encode(grid))


# --------------------------------------------------------------------------
# footprints


@dataclass
class FootprintRecord:
    id: str
    center_x: float
    center_y: float
    radius: float = 12.5
    rh80: float = math.nan
    rh98: float = math.nan
    canopy_cover: float = math.nan
    sensitivity: float = math.nan
    quality_flag: int = 1
    degrade_flag: int = 0
    solar_elevation: float = -10.0
    beam_type: str = "power"
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def validate(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        for name in ("canopy_cover", "sensitivity"):
            v = getattr(self, name)
            if not math.isnan(v) and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.quality_flag not in (0, 1) or self.degrade_flag not in (0, 1):
            raise ValueError("quality_flag and degrade_flag must be 0 or 1")
        if self.beam_type not in ("power", "coverage"):
            raise ValueError(f"beam_type must be power or coverage, got {self.beam_type!r}")
        if not math.isnan(self.rh80) and self.rh80 < 0:
            raise ValueError(f"rh80={self.rh80} is negative")
        if not (math.isnan(self.rh80) or math.isnan(self.rh98)) and self.rh98 < self.rh80:
            raise ValueError(f"rh98={self.rh98} below rh80={self.rh80}")


def _parse_float(text: str) -> float:
    text = text.strip()
    return math.nan if text in ("", "nan", "NaN") else float(text)


def read_footprints(path, strict: bool = True):
    """Parse a footprint CSV.

    With ``strict`` (the default) the first invalid row raises; otherwise
    invalid rows are skipped and returned alongside the records as
    ``(records, rejected)`` where ``rejected`` lists ``(row, reason)``.
    Row numbers count data rows from 1.
    """
    records: list[FootprintRecord] = []
    rejected: list[tuple[int, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in FOOTPRINT_COLUMNS if c not in header]
        if missing:
            raise FootprintSchemaError(f"missing columns {missing}")
        for i, row in enumerate(reader, start=1):
            try:
                rec = FootprintRecord(
                    id=row["id"],
                    center_x=_parse_float(row["center_x"]),
                    center_y=_parse_float(row["center_y"]),
                    radius=_parse_float(row["radius"]),
                    rh80=_parse_float(row["rh80"]),
                    rh98=_parse_float(row["rh98"]),
                    canopy_cover=_parse_float(row["canopy_cover"]),
                    sensitivity=_parse_float(row["sensitivity"]),
                    quality_flag=int(row["quality_flag"]),
                    degrade_flag=int(row["degrade_flag"]),
                    solar_elevation=_parse_float(row["solar_elevation"]),
                    beam_type=row["beam_type"].strip(),
                )
            except (TypeError, ValueError) as exc:
                err = FootprintParseError(i, f"non-numeric field ({exc})")
                if strict:
                    raise err from exc
                rejected.append((i, str(err)))
                continue
            try:
                rec.validate()
            except ValueError as exc:
                err = FootprintParseError(i, str(exc))
                if strict:
                    raise err from exc
                rejected.append((i, str(err)))
                continue
            records.append(rec)
    if strict:
        return records
    return records, rejected


def _format(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_footprints(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FOOTPRINT_COLUMNS)
        for r in records:
            writer.writerow([_format(getattr(r, c)) for c in FOOTPRINT_COLUMNS])
