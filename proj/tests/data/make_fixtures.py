"""Writes golden.temb byte by byte with struct, independently of the C++ writer."""
import pathlib
import struct

HERE = pathlib.Path(__file__).resolve().parent

RECORDS = [
    ("dog", [1.0, 0.0, -0.5, 0.25, 2.0, -3.0, 0.125, 1e-3]),
    ("rain", [0.0, 1.5, 0.5, -0.25, -2.0, 3.0, -0.125, 7.0]),
]


def main():
    out = bytearray()
    out += b"TEMB"
    out += struct.pack("<I", 1)
    out += struct.pack("<I", 8)
    out += struct.pack("<Q", len(RECORDS))
    for rid, vec in RECORDS:
        raw = rid.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
        out += struct.pack("<8f", *vec)
    (HERE / "golden.temb").write_bytes(bytes(out))


if __name__ == "__main__":
    main()
