#!/usr/bin/env python3
"""Writes the binary test fixtures under tests/data from first principles,
independent of the Rust reader/writer implementations.

AEF1 layout, little-endian:
  magic "AEF1", version u32=1, width u32, height u32, channels u32,
  origin_x f64, origin_y f64, cell_size f64, crs_code i32, reserved i32=0,
  then width*height*channels f32 in [row][col][channel] order.
"""

import math
import struct
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"


def field_3x3x2() -> bytes:
    width, height, channels = 3, 3, 2
    out = bytearray()
    out += b"AEF1"
    out += struct.pack("<IIII", 1, width, height, channels)
    out += struct.pack("<ddd", 500.0, 1000.0, 10.0)
    out += struct.pack("<ii", 27700, 0)
    for row in range(height):
        for col in range(width):
            for ch in range(channels):
                if (row, col) == (2, 0):
                    value = math.nan
                else:
                    value = 100.0 * row + 10.0 * col + ch
                out += struct.pack("<f", value)
    return bytes(out)


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    target = DATA_DIR / "field_3x3x2.aef"
    target.write_bytes(field_3x3x2())
    print(f"wrote {target} ({target.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
