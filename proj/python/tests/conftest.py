import struct
import zlib

import numpy as np
import pytest

import orthoseg


def write_png(path, rgb):
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[y].astype(np.uint8).tobytes() for y in range(h))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))


def scene(size=256):
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size, 3), np.uint8)
    img[:] = (70, 140, 60)
    disk = (xx + 0.5 - 80) ** 2 + (yy + 0.5 - 90) ** 2 <= 40 ** 2
    img[disk] = (40, 40, 170)
    img[150:230, 150:230] = (210, 60, 40)
    return img, disk


@pytest.fixture
def site(tmp_path):
    img, disk = scene()
    write_png(tmp_path / "site.png", img)
    project = orthoseg.new_project([("water", (0, 0, 255)), ("roof", (255, 0, 0))])
    orthoseg.add_map(project, tmp_path / "site.png", 5.0, project_dir=tmp_path)
    path = tmp_path / "project.json"
    project.save(path)
    return {"dir": tmp_path, "project": path, "disk": disk}
