"""Writes the seeded 16x16 fixtures under crates/core/tests/fixtures."""
import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"


def ppm(path, img):
    h, w, _ = img.shape
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.astype(np.uint8).tobytes())


def pgm16(path, img):
    h, w = img.shape
    path.write_bytes(b"P5\n%d %d\n65535\n" % (w, h) + img.astype(">u2").tobytes())


def main():
    rng = np.random.default_rng(20240607)
    y, x = np.mgrid[0:16, 0:16] / 15.0
    base = np.stack(
        [
            0.5 + 0.35 * np.sin(3.0 * x + 1.0 * y),
            0.4 + 0.3 * np.cos(2.0 * y - 1.5 * x),
            0.55 + 0.25 * np.sin(4.0 * x * y),
        ],
        axis=-1,
    )
    texture = np.clip(base + rng.normal(0.0, 0.08, base.shape), 0.0, 1.0)
    ref = np.clip(texture * 0.85 + 0.1 + rng.normal(0.0, 0.05, base.shape), 0.0, 1.0)
    depth = np.clip(0.2 + 0.6 * x + rng.normal(0.0, 0.03, x.shape), 0.0, 1.0)

    OUT.mkdir(parents=True, exist_ok=True)
    ppm(OUT / "texture.ppm", np.floor(texture * 255 + 0.5))
    ppm(OUT / "texture_ref.ppm", np.floor(ref * 255 + 0.5))
    pgm16(OUT / "depth.pgm", np.floor(depth * 65535 + 0.5))
    params = {
        "beta": [0.6, 0.3, 0.15],
        "alpha": [0.5, 0.4, 0.35],
        "B": [0.1, 0.45, 0.55],
        "q": 6.0,
        "kernel_size": 5,
    }
    (OUT / "params.json").write_text(json.dumps(params, indent=2) + "\n")


if __name__ == "__main__":
    main()
