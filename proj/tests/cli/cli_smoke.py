"""End-to-end smoke test of the orthoseg command-line tool."""

import json
import signal
import struct
import subprocess
import sys
import tempfile
import urllib.request
import zlib
from pathlib import Path

EXE = sys.argv[1]


def write_png(path, width, height, pixel):
    raw = bytearray()
    for y in range(height):
        raw.append(0)
        for x in range(width):
            raw.extend(pixel(x, y))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    Path(path).write_bytes(
        b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(bytes(raw))) + chunk(b"IEND", b"")
    )


def run(*args, expect=0):
    proc = subprocess.run([EXE, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        sys.stderr.write(proc.stdout + proc.stderr)
        raise SystemExit(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}")
    return proc.stdout


def cls(x, y):
    if 40 <= x < 110 and 30 <= y < 220:
        return 1
    if 150 <= x < 230 and 60 <= y < 200:
        return 2
    return 0


IMAGE = {0: (70, 140, 60), 1: (40, 40, 170), 2: (210, 60, 40)}
LABEL = {0: (0, 0, 0), 1: (0, 0, 255), 2: (255, 0, 0)}


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        project = str(tmp / "project.json")
        write_png(tmp / "site.png", 256, 256, lambda x, y: IMAGE[cls(x, y)])
        write_png(tmp / "labels.png", 256, 256, lambda x, y: LABEL[cls(x, y)])

        run("init", "--project", project, "--class", "water:0,0,255", "--class", "roof:255,0,0")
        run("init", "--project", project, expect=2)
        run("add-map", "--project", project, "--image", str(tmp / "site.png"), "--pixel-size", "5")
        assert run("import-labelmap", "--project", project, "--map", "site", "--labels", str(tmp / "labels.png")).split()[0] == "2"
        run("import-labelmap", "--project", project, "--map", "nowhere", "--labels", str(tmp / "labels.png"), expect=3)

        run("export-labelmap", "--project", project, "--map", "site", "--out", str(tmp / "out.png"))
        assert (tmp / "out.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        run("export-vector", "--project", project, "--map", "site", "--out", str(tmp / "out.geojson"))
        assert len(json.loads((tmp / "out.geojson").read_text())["features"]) == 2

        cov = run("coverage", "--project", project, "--map", "site").splitlines()
        assert cov[0] == "class_index,class_name,region_count,area_px,area_mm2,coverage_percent"
        assert cov[1].startswith("1,water,1,13300.000,332500.000,")
        changes = run("changes", "--project", project, "--map-a", "site", "--map-b", "site").splitlines()
        assert all(line.startswith("same,") for line in changes[1:]) and len(changes) == 3

        run("export-dataset", "--project", project, "--map", "site", "--tile", "64", "--split", "random",
            "--out", str(tmp / "ds"))
        manifest = json.loads((tmp / "ds" / "dataset.json").read_text())
        assert len(manifest["tiles"]) == 16
        model = run("train", "--project", project, "--dataset", str(tmp / "ds"), "--epochs", "5").split()[-1]
        assert model == "model-1"
        report = json.loads(run("evaluate", "--project", project, "--model", model))
        assert report["accuracy"] > 0.9
        run("infer", "--project", project, "--map", "site", "--model", model, "--tile", "128", "--stride", "64",
            "--out", str(tmp / "pred.png"))
        assert (tmp / "pred.png").is_file()

        server = subprocess.Popen([EXE, "serve", "--project", project, "--port", "0"], stdout=subprocess.PIPE, text=True)
        try:
            line = server.stdout.readline().strip()
            assert line.startswith("listening on "), line
            url = line.split()[-1]
            with urllib.request.urlopen(url + "/project") as r:
                body = json.load(r)
            assert body["project"]["maps"][0]["id"] == "site"
            with urllib.request.urlopen(url + "/maps/site/tiles/0/0/0.png") as r:
                assert r.read()[:8] == b"\x89PNG\r\n\x1a\n"
        finally:
            server.send_signal(signal.SIGTERM)
            code = server.wait(timeout=30)
        assert code == 0, code
    print("cli smoke ok")


if __name__ == "__main__":
    main()
