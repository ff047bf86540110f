"""Reading and writing event streams.

Two interchange formats:

CSV (UTF-8, LF line endings)::

    # width=1280 height=720 view=lateral trigger_t=none
    0,1,2,1
    400,3,4,-1

    One event per line as ``t_us,x,y,p``.  The header line is optional;
    when absent the sensor defaults to 1280x720, lateral view, no trigger.

Binary ``EVS1`` (little-endian)::

    magic 'EVS1' | u16 width | u16 height | u8 view | u8 flags
    | u64 trigger_t (present iff flags bit 0) | u64 count
    | count * record

    record: u64 t | u16 x | u16 y | i8 p | u8 pad(=0)      (14 bytes)

``view`` is 0 for lateral, 1 for rear.  Serialization is canonical (pad
byte zero, records in stream order), so serialize(parse(x)) round-trips
bit-exactly for canonical input.
"""

from __future__ import annotations

import struct

import numpy as np

from .events import EventStream, View

DEFAULT_WIDTH = 1280
DEFAULT_HEIGHT = 720

_MAGIC = b"EVS1"
_VIEW_CODE = {View.LATERAL: 0, View.REAR: 1}
_CODE_VIEW = {0: View.LATERAL, 1: View.REAR}

# One EVS1 event record: t, x, y, p, pad.
_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")]
)


class ParseError(ValueError):
    """Malformed stream input; message carries line or byte position."""


def parse_events(data: bytes, fmt: str) -> EventStream:
    """Parse serialized events; ``fmt`` is ``"csv"`` or ``"binary"``."""
    if fmt == "csv":
        return _parse_csv(data)
    if fmt == "binary":
        return _parse_binary(data)
    raise ValueError(f"unknown stream format {fmt!r}")


def serialize_events(stream: EventStream, fmt: str) -> bytes:
    if fmt == "csv":
        return _serialize_csv(stream)
    if fmt == "binary":
        return _serialize_binary(stream)
    raise ValueError(f"unknown stream format {fmt!r}")


def read_stream(path, fmt: str | None = None) -> EventStream:
    """Load a stream from disk; format inferred from suffix when omitted
    (``.csv`` -> csv, anything else binary)."""
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "binary"
    with open(path, "rb") as fh:
        return parse_events(fh.read(), fmt)


def write_stream(stream: EventStream, path, fmt: str | None = None) -> None:
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "binary"
    with open(path, "wb") as fh:
        fh.write(serialize_events(stream, fmt))


def _parse_header(line: str) -> dict:
    fields = {}
    for token in line[1:].split():
        if "=" not in token:
            raise ParseError(f"line 1: malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    try:
        width = int(fields.pop("width", DEFAULT_WIDTH))
        height = int(fields.pop("height", DEFAULT_HEIGHT))
    except ValueError as exc:
        raise ParseError(f"line 1: bad header dimension: {exc}") from None
    view_name = fields.pop("view", "lateral")
    try:
        view = View(view_name)
    except ValueError:
        raise ParseError(f"line 1: unknown view {view_name!r}") from None
    trig_raw = fields.pop("trigger_t", "none")
    if trig_raw == "none":
        trigger = None
    else:
        try:
            trigger = int(trig_raw)
        except ValueError:
            raise ParseError(f"line 1: bad trigger_t {trig_raw!r}") from None
    if fields:
        raise ParseError(f"line 1: unknown header fields {sorted(fields)}")
    return {"width": width, "height": height, "view": view, "trigger_t": trigger}


def _parse_csv(data: bytes) -> EventStream:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}") from None
    lines = text.split("\n")
    meta = {
        "width": DEFAULT_WIDTH,
        "height": DEFAULT_HEIGHT,
        "view": View.LATERAL,
        "trigger_t": None,
    }
    start = 0
    if lines and lines[0].startswith("#"):
        meta = _parse_header(lines[0])
        start = 1
    ts, xs, ys, ps = [], [], [], []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer field in {line!r}") from None
        _check_record(lineno, t, x, y, p, meta["width"], meta["height"], ts)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    return EventStream(
        view=meta["view"],
        width=meta["width"],
        height=meta["height"],
        t=np.asarray(ts, dtype=np.int64),
        x=np.asarray(xs, dtype=np.int32),
        y=np.asarray(ys, dtype=np.int32),
        p=np.asarray(ps, dtype=np.int8),
        trigger_t=meta["trigger_t"],
    )


def _check_record(pos, t, x, y, p, width, height, prev_ts) -> None:
    where = f"line {pos}" if isinstance(pos, int) else pos
    if t < 0:
        raise ParseError(f"{where}: negative timestamp {t}")
    if prev_ts and t < prev_ts[-1]:
        raise ParseError(
            f"{where}: timestamp {t} decreases below {prev_ts[-1]} "
            "(streams must be time-sorted)"
        )
    if not (0 <= x < width and 0 <= y < height):
        raise ParseError(f"{where}: pixel ({x},{y}) outside {width}x{height}")
    if p not in (1, -1):
        raise ParseError(f"{where}: polarity must be 1 or -1, got {p}")


def _serialize_csv(stream: EventStream) -> bytes:
    trig = "none" if stream.trigger_t is None else str(stream.trigger_t)
    out = [
        f"# width={stream.width} height={stream.height} "
        f"view={stream.view.value} trigger_t={trig}"
    ]
    for i in range(len(stream)):
        out.append(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}")
    out.append("")  # trailing newline
    return "\n".join(out).encode("utf-8")


def _parse_binary(data: bytes) -> EventStream:
    if len(data) < 10:
        raise ParseError(f"byte 0: truncated header ({len(data)} bytes)")
    if data[:4] != _MAGIC:
        raise ParseError(f"byte 0: bad magic {data[:4]!r}, expected {_MAGIC!r}")
    width, height, view_code, flags = struct.unpack_from("<HHBB", data, 4)
    if view_code not in _CODE_VIEW:
        raise ParseError(f"byte 8: unknown view code {view_code}")
    if flags & ~1:
        raise ParseError(f"byte 9: unknown flag bits 0x{flags:02x}")
    pos = 10
    trigger = None
    if flags & 1:
        if len(data) < pos + 8:
            raise ParseError(f"byte {pos}: truncated trigger timestamp")
        (tr,) = struct.unpack_from("<Q", data, pos)
        trigger = int(tr)
        pos += 8
    if len(data) < pos + 8:
        raise ParseError(f"byte {pos}: truncated record count")
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    expected = pos + count * _RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise ParseError(
            f"byte {pos}: expected {count} records "
            f"({expected} bytes total), got {len(data)} bytes"
        )
    rec = np.frombuffer(data, dtype=_RECORD_DTYPE, count=count, offset=pos)
    if count:
        bad = np.flatnonzero(rec["pad"] != 0)
        if len(bad):
            raise ParseError(
                f"byte {pos + int(bad[0]) * 14 + 13}: nonzero pad byte "
                f"in record {int(bad[0])}"
            )
        t = rec["t"].astype(np.int64)
        if np.any(rec["t"] > np.iinfo(np.int64).max):
            raise ParseError("timestamp overflows signed 64-bit range")
        dec = np.flatnonzero(np.diff(t) < 0)
        if len(dec):
            i = int(dec[0]) + 1
            raise ParseError(
                f"byte {pos + i * 14}: timestamp {int(t[i])} decreases "
                f"below {int(t[i - 1])} (streams must be time-sorted)"
            )
        oob = np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))
        if len(oob):
            i = int(oob[0])
            raise ParseError(
                f"byte {pos + i * 14}: pixel ({int(rec['x'][i])},"
                f"{int(rec['y'][i])}) outside {width}x{height}"
            )
        badp = np.flatnonzero(np.abs(rec["p"].astype(np.int16)) != 1)
        if len(badp):
            i = int(badp[0])
            raise ParseError(
                f"byte {pos + i * 14 + 12}: polarity must be 1 or -1, "
                f"got {int(rec['p'][i])}"
            )
    else:
        t = np.empty(0, dtype=np.int64)
    return EventStream(
        view=_CODE_VIEW[view_code],
        width=int(width),
        height=int(height),
        t=t,
        x=rec["x"].astype(np.int32),
        y=rec["y"].astype(np.int32),
        p=rec["p"].astype(np.int8),
        trigger_t=trigger,
    )


def _serialize_binary(stream: EventStream) -> bytes:
    flags = 0 if stream.trigger_t is None else 1
    head = _MAGIC + struct.pack(
        "<HHBB", stream.width, stream.height, _VIEW_CODE[stream.view], flags
    )
    if stream.trigger_t is not None:
        head += struct.pack("<Q", stream.trigger_t)
    head += struct.pack("<Q", len(stream))
    rec = np.empty(len(stream), dtype=_RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    rec["pad"] = 0
    return head + rec.tobytes()
