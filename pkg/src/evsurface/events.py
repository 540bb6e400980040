"""Event stream containers and file round-trip IO.

An event is (x, y, t, p): pixel coordinates, a timestamp in microseconds and
a polarity in {-1, +1}.  Streams store events column-wise as numpy arrays and
are immutable after construction.  Two serializations are supported:

* ``EVT1`` binary: magic ``EVT1``, u16 width, u16 height, u64 count, then
  per-event records of u64 timestamp (whole microseconds), u16 x, u16 y,
  i8 polarity.  Everything little-endian.  The loader rejects unsorted files.
* CSV with header ``t,x,y,p``; sensor geometry travels out of band.  The
  loader sorts rows stably by timestamp instead of rejecting them.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EventFormatError, StreamValidationError

_MAGIC = b"EVT1"
_HEADER = struct.Struct("<4sHHQ")
_RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])
_CSV_HEADER = ["t", "x", "y", "p"]


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


def _as_readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out.base is not None or out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EventStream:
    """A single sensor recording: equal-length event columns plus geometry."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise StreamValidationError(
                f"geometry must be positive, got {self.width}x{self.height}"
            )
        object.__setattr__(self, "x", _as_readonly(self.x, np.int32))
        object.__setattr__(self, "y", _as_readonly(self.y, np.int32))
        object.__setattr__(self, "t", _as_readonly(self.t, np.float64))
        object.__setattr__(self, "p", _as_readonly(self.p, np.int8))
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise StreamValidationError("event columns have mismatched lengths")

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        if events:
            x, y, t, p = (np.asarray(col) for col in zip(*events))
        else:
            x = y = t = p = np.empty(0)
        return cls(width, height, x, y, t, p)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls.from_events(width, height, [])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def with_columns(self, **cols) -> "EventStream":
        """Copy of the stream with some event columns replaced."""
        new = {"x": self.x, "y": self.y, "t": self.t, "p": self.p}
        new.update(cols)
        return EventStream(self.width, self.height, **new)

    def sorted_by_time(self) -> "EventStream":
        """Stable sort by timestamp; ties keep their storage order."""
        order = np.argsort(self.t, kind="stable")
        return EventStream(
            self.width, self.height, self.x[order], self.y[order], self.t[order], self.p[order]
        )

    def select(self, mask_or_index: np.ndarray) -> "EventStream":
        """Sub-stream keeping storage order (boolean mask or index array)."""
        m = mask_or_index
        return EventStream(self.width, self.height, self.x[m], self.y[m], self.t[m], self.p[m])

    def time_span(self) -> tuple[float, float]:
        """(first, last) event time; (0.0, 0.0) for an empty stream."""
        if len(self) == 0:
            return (0.0, 0.0)
        return (float(self.t.min()), float(self.t.max()))


@dataclass(frozen=True)
class EventBatch:
    """A list of streams sharing one sensor geometry."""

    streams: tuple[EventStream, ...]

    def __post_init__(self):
        streams = tuple(self.streams)
        if not streams:
            raise StreamValidationError("a batch needs at least one stream")
        w, h = streams[0].width, streams[0].height
        for i, s in enumerate(streams):
            if (s.width, s.height) != (w, h):
                raise StreamValidationError(
                    f"stream {i} geometry {s.width}x{s.height} != batch {w}x{h}"
                )
        object.__setattr__(self, "streams", streams)

    @property
    def width(self) -> int:
        return self.streams[0].width

    @property
    def height(self) -> int:
        return self.streams[0].height

    def __len__(self) -> int:
        return len(self.streams)

    def __iter__(self) -> Iterator[EventStream]:
        return iter(self.streams)

    def __getitem__(self, index: int) -> EventStream:
        return self.streams[index]


class Violation(NamedTuple):
    kind: str  # x_range | y_range | polarity | time_order
    index: int
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.violations)
        return sum(1 for v in self.violations if v.kind == kind)


def validate_stream(stream: EventStream) -> ValidationReport:
    """Collect every contract violation instead of stopping at the first.

    Checked: 0 <= x < width, 0 <= y < height, p in {-1, +1}, and timestamps
    non-decreasing in storage order.  One violation is recorded per offending
    field, plus one per descending adjacent timestamp pair.
    """
    report = ValidationReport()
    for idx in np.flatnonzero((stream.x < 0) | (stream.x >= stream.width)):
        report.violations.append(
            Violation("x_range", int(idx), f"event {idx}: x={stream.x[idx]} outside [0, {stream.width})")
        )
    for idx in np.flatnonzero((stream.y < 0) | (stream.y >= stream.height)):
        report.violations.append(
            Violation("y_range", int(idx), f"event {idx}: y={stream.y[idx]} outside [0, {stream.height})")
        )
    for idx in np.flatnonzero((stream.p != 1) & (stream.p != -1)):
        report.violations.append(
            Violation("polarity", int(idx), f"event {idx}: polarity {stream.p[idx]} not in {{-1, +1}}")
        )
    if len(stream) > 1:
        for idx in np.flatnonzero(np.diff(stream.t) < 0):
            report.violations.append(
                Violation(
                    "time_order",
                    int(idx) + 1,
                    f"event {idx + 1}: t={stream.t[idx + 1]} before t={stream.t[idx]}",
                )
            )
    report.violations.sort(key=lambda v: (v.index, v.kind))
    return report


def slice_time_window(stream: EventStream, t0: float, t1: float) -> EventStream:
    """Events with t0 <= t < t1, preserving storage order."""
    mask = (stream.t >= t0) & (stream.t < t1)
    return stream.select(mask)


# ---------------------------------------------------------------------------
# file IO


def _detect_format(path: Path) -> str:
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise EventFormatError(f"cannot read {path}: {exc}") from exc
    return "binary" if head == _MAGIC else "csv"


def parse_event_file(
    path: str | Path,
    fmt: str = "auto",
    width: int | None = None,
    height: int | None = None,
    validate: bool = True,
) -> EventStream:
    """Load a stream from disk.

    ``fmt`` is one of ``auto`` / ``binary`` / ``csv``.  CSV carries no
    geometry, so ``width`` and ``height`` are required in that case.  With
    ``validate=False`` streams violating the content contract are returned
    instead of raising, so callers can report every violation; format errors
    (bad magic, truncation, unsorted binary timestamps) still raise.
    """
    path = Path(path)
    if fmt == "auto":
        fmt = _detect_format(path)
    if fmt == "binary":
        return _parse_binary(path, validate)
    if fmt == "csv":
        if width is None or height is None:
            raise EventFormatError("csv input needs explicit width and height")
        return _parse_csv(path, width, height, validate)
    raise EventFormatError(f"unknown format {fmt!r}")


def _parse_binary(path: Path, validate: bool = True) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EventFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, width, height, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise EventFormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    expected = count * _RECORD_DTYPE.itemsize
    if len(body) != expected:
        raise EventFormatError(
            f"{path}: expected {expected} record bytes for {count} events, got {len(body)}"
        )
    rec = np.frombuffer(body, dtype=_RECORD_DTYPE)
    t = rec["t"].astype(np.float64)
    if count > 1 and np.any(np.diff(t) < 0):
        raise EventFormatError(f"{path}: binary timestamps are not sorted")
    stream = EventStream(int(width), int(height), rec["x"], rec["y"], t, rec["p"])
    if validate:
        _raise_on_invalid(stream, str(path))
    return stream


def _parse_csv(path: Path, width: int, height: int, validate: bool = True) -> EventStream:
    try:
        text = path.read_text()
    except OSError as exc:
        raise EventFormatError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EventFormatError(f"{path}: empty file, expected header {_CSV_HEADER}") from None
    if [h.strip() for h in header] != _CSV_HEADER:
        raise EventFormatError(f"{path}: bad header {header!r}, expected {_CSV_HEADER}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise EventFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            rows.append((float(row[0]), int(row[1]), int(row[2]), int(row[3])))
        except ValueError as exc:
            raise EventFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
    if rows:
        t, x, y, p = (np.asarray(col) for col in zip(*rows))
    else:
        t = x = y = p = np.empty(0)
    stream = EventStream(width, height, x, y, t, p).sorted_by_time()
    if validate:
        _raise_on_invalid(stream, str(path))
    return stream


def _raise_on_invalid(stream: EventStream, origin: str) -> None:
    report = validate_stream(stream)
    if not report.ok:
        first = report.violations[0]
        raise StreamValidationError(
            f"{origin}: {report.count()} violation(s); first: {first.message}"
        )


def write_event_file(path: str | Path, stream: EventStream, fmt: str = "binary") -> None:
    """Serialize a valid stream.

    Binary timestamps are stored as whole microseconds (values are rounded),
    so binary round-trips are field-exact only for integral timestamps.
    """
    report = validate_stream(stream)
    if not report.ok:
        raise StreamValidationError(
            f"refusing to write invalid stream: {report.count()} violation(s); "
            f"first: {report.violations[0].message}"
        )
    path = Path(path)
    if fmt == "binary":
        if len(stream) and stream.t.min() < 0:
            raise EventFormatError("binary timestamps must be non-negative")
        if stream.width > 0xFFFF or stream.height > 0xFFFF:
            raise EventFormatError("binary geometry fields are 16-bit")
        rec = np.empty(len(stream), dtype=_RECORD_DTYPE)
        rec["t"] = np.rint(stream.t).astype(np.uint64)
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["p"] = stream.p
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, stream.width, stream.height, len(stream)))
            fh.write(rec.tobytes())
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER)
            for ev in stream:
                t = ev.t
                t_repr = int(t) if float(t).is_integer() else repr(t)
                writer.writerow([t_repr, ev.x, ev.y, ev.p])
    else:
        raise EventFormatError(f"unknown format {fmt!r}")
