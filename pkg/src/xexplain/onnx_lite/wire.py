"""Protobuf wire-format primitives (encode and decode).

Only what the ONNX schema subset needs: varints, length-delimited fields,
fixed32, and packed repeated scalars. Unknown fields are skipped on read so
files from other producers parse cleanly.
"""

import struct

from ..errors import FormatError

_U64 = 1 << 64
_S63 = 1 << 63


def read_varint(buf, pos):
    result = 0
    shift = 0
    n = len(buf)
    while True:
        if pos >= n:
            raise FormatError("truncated varint", offset=pos)
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise FormatError("varint too long", offset=pos)


def read_signed(value):
    """Interpret a raw varint as a two's-complement int64."""
    return value - _U64 if value >= _S63 else value


def iter_fields(buf, base_offset=0):
    """Yield (field_number, wire_type, payload, offset) for a message body.

    wire type 0 yields the raw varint, 2 yields bytes, 5 yields 4 raw bytes,
    1 yields 8 raw bytes.
    """
    pos = 0
    n = len(buf)
    while pos < n:
        start = pos
        tag, pos = read_varint(buf, pos)
        field, wire = tag >> 3, tag & 7
        if wire == 0:
            value, pos = read_varint(buf, pos)
        elif wire == 1:
            if pos + 8 > n:
                raise FormatError("truncated fixed64 field", offset=base_offset + pos)
            value = buf[pos:pos + 8]
            pos += 8
        elif wire == 2:
            length, pos = read_varint(buf, pos)
            if pos + length > n:
                raise FormatError(
                    f"length-delimited field overruns buffer (field {field})",
                    offset=base_offset + start,
                )
            value = buf[pos:pos + length]
            pos += length
        elif wire == 5:
            if pos + 4 > n:
                raise FormatError("truncated fixed32 field", offset=base_offset + pos)
            value = buf[pos:pos + 4]
            pos += 4
        else:
            raise FormatError(f"unsupported wire type {wire}", offset=base_offset + start)
        yield field, wire, value, base_offset + start


def read_packed_varints(buf, signed=False):
    values = []
    pos = 0
    while pos < len(buf):
        v, pos = read_varint(buf, pos)
        values.append(read_signed(v) if signed else v)
    return values


def read_fixed32_float(raw):
    return struct.unpack("<f", raw)[0]


# --- encoding ---------------------------------------------------------------

def write_varint(out, value):
    if value < 0:
        value += _U64
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def write_tag(out, field, wire):
    write_varint(out, (field << 3) | wire)


def write_varint_field(out, field, value):
    write_tag(out, field, 0)
    write_varint(out, value)


def write_bytes_field(out, field, data):
    write_tag(out, field, 2)
    write_varint(out, len(data))
    out.extend(data)


def write_string_field(out, field, text):
    write_bytes_field(out, field, text.encode("utf-8"))


def write_float_field(out, field, value):
    write_tag(out, field, 5)
    out.extend(struct.pack("<f", value))


def write_packed_varints_field(out, field, values):
    body = bytearray()
    for v in values:
        write_varint(body, v)
    write_bytes_field(out, field, body)
