"""Reference values for the metric golden tests.

SSIM and CIELAB come from scikit-image. The remaining measures are direct
transcriptions of their published definitions using numpy/scipy only.
"""
import pathlib
import sys

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab
from skimage.metrics import structural_similarity

FIX = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"


def read_ppm(path):
    raw = path.read_bytes()
    parts = raw.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4], dtype=np.uint8)[: w * h * 3]
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def luma(img):
    return img @ np.array([0.299, 0.587, 0.114])


def ssim(a, b):
    return structural_similarity(
        luma(a), luma(b), gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, data_range=1.0,
    )


def gauss_window():
    r = np.arange(-5, 6)
    g = np.exp(-(r ** 2) / (2 * 1.5 ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def valid_filter(img, win):
    h, w = img.shape
    out = np.zeros((h - 10, w - 10))
    for y in range(h - 10):
        for x in range(w - 10):
            out[y, x] = np.sum(img[y:y + 11, x:x + 11] * win)
    return out


def pcqi(a, b):
    x, y = luma(a) * 255.0, luma(b) * 255.0
    win = gauss_window()
    mu1, mu2 = valid_filter(x, win), valid_filter(y, win)
    s1 = np.maximum(0, valid_filter(x * x, win) - mu1 ** 2)
    s2 = np.maximum(0, valid_filter(y * y, win) - mu2 ** 2)
    s12 = valid_filter(x * y, win) - mu1 * mu2
    c, l = 3.0, 256.0
    m = (4 / np.pi) * np.arctan((s12 + c) / (s1 + c))
    m = m * ((s12 + c) / (np.sqrt(s1) * np.sqrt(s2) + c))
    m = m * np.exp(-np.abs(mu1 - mu2) / l)
    return m.mean()


def trimmed_mean(v, alpha=0.1):
    v = np.sort(v.ravel())
    k = v.size
    lo = int(np.ceil(alpha * k))
    hi = int(np.floor(alpha * k))
    return v[lo:k - hi].mean()


def uicm(img):
    p = img * 255.0
    rg = p[..., 0] - p[..., 1]
    yb = (p[..., 0] + p[..., 1]) / 2 - p[..., 2]
    mrg, myb = trimmed_mean(rg), trimmed_mean(yb)
    return -0.0268 * np.hypot(mrg, myb) + 0.1586 * np.sqrt(rg.var() + yb.var())


def eme(ch, block=8):
    k1, k2 = ch.shape[0] // block, ch.shape[1] // block
    total = 0.0
    for i in range(k1):
        for j in range(k2):
            blk = ch[i * block:(i + 1) * block, j * block:(j + 1) * block]
            mx, mn = blk.max(), blk.min()
            if mx > 0 and mn > 0:
                total += np.log(mx / mn)
    return 2.0 / (k1 * k2) * total


def uism(img):
    p = img * 255.0
    out = 0.0
    for c, wt in enumerate([0.299, 0.587, 0.114]):
        ch = p[..., c]
        gx = ndimage.sobel(ch, axis=1, mode="nearest")
        gy = ndimage.sobel(ch, axis=0, mode="nearest")
        out += wt * eme(np.hypot(gx, gy) * ch)
    return out


def uiconm(img, block=8):
    p = img * 255.0
    k1, k2 = p.shape[0] // block, p.shape[1] // block
    total = 0.0
    for i in range(k1):
        for j in range(k2):
            blk = p[i * block:(i + 1) * block, j * block:(j + 1) * block, :]
            mx, mn = blk.max(), blk.min()
            top, bot = mx - mn, mx + mn
            if top > 0 and bot > 0:
                r = top / bot
                total += r * np.log(r)
    return -total / (k1 * k2)


def uciqe(img):
    lab = rgb2lab(img).reshape(-1, 3)
    l = lab[:, 0]
    chroma = np.hypot(lab[:, 1], lab[:, 2])
    sat = np.divide(chroma, l, out=np.zeros_like(l), where=l > 0)
    con = np.percentile(l, 99) - np.percentile(l, 1)
    return 0.4680 * chroma.std() + 0.2745 * con + 0.2576 * sat.mean()


def main():
    a = read_ppm(FIX / "texture.ppm")
    b = read_ppm(FIX / "texture_ref.ppm")
    mse = np.mean((a - b) ** 2)
    vals = {
        "mse": mse,
        "psnr": 10 * np.log10(1 / mse),
        "ssim": ssim(a, b),
        "pcqi": pcqi(a, b),
        "uicm": uicm(a),
        "uism": uism(a),
        "uiconm": uiconm(a),
    }
    vals["uiqm"] = 0.0282 * vals["uicm"] + 0.2953 * vals["uism"] + 3.5753 * vals["uiconm"]
    vals["uciqe"] = uciqe(a)
    for k, v in vals.items():
        sys.stdout.write(f"{k} {v!r}\n")


if __name__ == "__main__":
    main()
