"""Writes the binary format fixtures with nothing but `struct`.

Run from this directory: python3 make_fixtures.py
"""
import struct


def u16(v):
    return struct.pack("<H", v)


def f32s(vals):
    return struct.pack("<%df" % len(vals), *vals)


def naeb(image_id, layers, global_vec=None, declared_layers=None, payload_layers=None):
    idb = image_id.encode("utf-8")
    out = b"NAEB" + u16(1) + u16(len(idb)) + idb
    out += bytes([declared_layers if declared_layers is not None else len(layers)])
    for h, w, d, _ in layers:
        out += u16(h) + u16(w) + u16(d)
    if global_vec is None:
        out += b"\x00"
    else:
        out += b"\x01" + u16(len(global_vec))
    for _, _, _, vals in layers[: payload_layers if payload_layers is not None else len(layers)]:
        out += f32s(vals)
    if global_vec is not None and payload_layers is None:
        out += f32s(global_vec)
    return out


def seq(n, start, step):
    return [start + i * step for i in range(n)]


LAYERS = [
    (2, 3, 4, seq(24, -1.0, 0.125)),
    (1, 1, 2, [0.5, -0.25]),
]
GLOBAL = [1.0, 2.0, -3.5]

files = {
    "tiny.naeb": naeb("fixture/0", LAYERS, GLOBAL),
    "bad_magic.naeb": b"NAEX" + naeb("fixture/0", LAYERS, GLOBAL)[4:],
    # header declares four layers, payload holds three
    "truncated.naeb": naeb("t", [(1, 1, 2, [1.0, 2.0])] * 4, declared_layers=4, payload_layers=3),
    "trailing.naeb": naeb("fixture/0", LAYERS, GLOBAL) + f32s([9.0]),
    "tiny.naam": b"NAAM" + u16(1) + u16(2) + u16(3) + f32s([0.0, 0.25, 0.5, 0.75, 1.0, 1.5]),
    "bad_magic.naam": b"MAAN" + u16(1) + u16(2) + u16(3) + f32s([0.0] * 6),
    "truncated.naam": b"NAAM" + u16(1) + u16(2) + u16(3) + f32s([0.0] * 5),
    "trailing.naam": b"NAAM" + u16(1) + u16(2) + u16(3) + f32s([0.0] * 7),
    # identity layer, then a 3 -> 2 affine layer
    "tiny.napj": b"NAPJ" + u16(1) + bytes([2]) + u16(0) + u16(0)
    + u16(3) + u16(2) + f32s([1.0, 0.0, -1.0, 0.5, 0.5, 0.5]) + f32s([0.125, -2.0]),
    "bad_magic.napj": b"NAPK" + u16(1) + bytes([1]) + u16(0) + u16(0),
    "truncated.napj": b"NAPJ" + u16(1) + bytes([1]) + u16(3) + u16(2) + f32s([1.0] * 6) + f32s([0.0]),
    "trailing.napj": b"NAPJ" + u16(1) + bytes([1]) + u16(0) + u16(0) + b"\x00\x00",
}

for name, data in files.items():
    with open(name, "wb") as fh:
        fh.write(data)
