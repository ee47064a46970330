"""Independent reference computations for the values frozen into the C++ tests.

Run with `python3 tests/oracles/oracles.py`; every printed number appears
verbatim in a test. Inputs come from the same 32-bit LCG the tests use.
"""
import math

import numpy as np


class Lcg:
    def __init__(self, seed):
        self.s = seed & 0xFFFFFFFF

    def next(self):
        self.s = (self.s * 1664525 + 1013904223) & 0xFFFFFFFF
        return self.s

    def unit(self):
        return (self.next() >> 8) / float(1 << 24)

    def byte(self):
        return self.next() >> 24


def lcg_unit(seed, shape):
    g = Lcg(seed)
    return np.array([g.unit() for _ in range(int(np.prod(shape)))]).reshape(shape)


def lcg_bytes(seed, shape):
    g = Lcg(seed)
    return np.array([g.byte() for _ in range(int(np.prod(shape)))], dtype=float).reshape(shape)


# --- schedule -------------------------------------------------------------
def schedule():
    beta = np.linspace(1e-4, 0.02, 3)
    alpha = 1 - beta
    abar = np.cumprod(alpha)
    sigma2_2 = (1 - abar[0]) / (1 - abar[1]) * beta[1]
    pm = -beta[1] / (math.sqrt(alpha[1]) * math.sqrt(1 - abar[1]))
    print("schedule T=3 beta", beta.tolist())
    print("  abar_3 %.9f" % abar[2])
    print("  sigma2_2 %.9e" % sigma2_2)
    print("  posterior_mean(x=0, eps=1, t=2) %.12f" % pm)
    beta100 = np.linspace(1e-4, 0.02, 100)
    abar100 = np.cumprod(1 - beta100)
    print("  T=100 abar_50 %.12f abar_100 %.12f" % (abar100[49], abar100[99]))


# --- losses ---------------------------------------------------------------
def sobel_mag(p):
    q = np.pad(p, 1, mode="edge")
    h, w = p.shape
    win = lambda dy, dx: q[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    gx = (win(-1, 1) + 2 * win(0, 1) + win(1, 1)) - (win(-1, -1) + 2 * win(0, -1) + win(1, -1))
    gy = (win(1, -1) + 2 * win(1, 0) + win(1, 1)) - (win(-1, -1) + 2 * win(-1, 0) + win(-1, 1))
    return np.sqrt(gx ** 2 + gy ** 2), gx, gy


def losses():
    d = np.array([0.0, math.log(2.0)])
    print("silog two-pixel %.9f" % (np.mean(d ** 2) - np.mean(d) ** 2))
    fused = lcg_unit(101, (3, 4, 4))
    ir = lcg_unit(202, (1, 4, 4))
    vis = lcg_unit(303, (3, 4, 4))
    hw = 16.0
    mcg = 0.0
    mci = 0.0
    gir = sobel_mag(ir[0])[0]
    for i in range(3):
        target = np.maximum(gir, sobel_mag(vis[i])[0])
        mcg += np.abs(sobel_mag(fused[i])[0] - target).sum() / hw
        mci += np.abs(fused[i] - np.maximum(ir[0], vis[i])).sum() / hw
    print("l_mcg lcg(101,202,303) %.12f" % mcg)
    print("l_mci lcg(101,202,303) %.12f" % mci)
    a = lcg_unit(404, (4, 4, 4))
    b = lcg_unit(505, (4, 4, 4))
    print("l_diff lcg(404,505) mse %.12f l2 %.12f" % (np.mean((a - b) ** 2), math.sqrt(((a - b) ** 2).sum())))


# --- metrics --------------------------------------------------------------
def sf(f):
    h, w = f.shape
    rf = ((f[:, 1:] - f[:, :-1]) ** 2).sum() / (h * (w - 1))
    cf = ((f[1:, :] - f[:-1, :]) ** 2).sum() / ((h - 1) * w)
    return math.sqrt(rf + cf)


def mi_pair(x, y):
    joint = np.zeros((256, 256))
    for a, b in zip(x.ravel().astype(int), y.ravel().astype(int)):
        joint[a, b] += 1
    p = joint / joint.sum()
    px = p.sum(1)
    py = p.sum(0)
    total = 0.0
    for a in range(256):
        for b in range(256):
            if p[a, b] > 0:
                total += p[a, b] * math.log2(p[a, b] / (px[a] * py[b]))
    return total


def qabf(f, a, b):
    Tg, kg, Dg = 0.9994, -15.0, 0.5
    Ta, ka, Da = 0.9879, -22.0, 0.8

    def edges(img):
        g, gx, gy = sobel_mag(img)
        with np.errstate(divide="ignore", invalid="ignore"):
            ang = np.where(gx == 0, np.where(gy == 0, 0.0, math.pi / 2), np.arctan(gy / np.where(gx == 0, 1, gx)))
        return g, ang

    gf, af = edges(f)

    def q(gs, as_):
        with np.errstate(divide="ignore", invalid="ignore"):
            G = np.where((gs > 0) & (gf > 0), np.where(gs > gf, gf / gs, gs / gf), 0.0)
        d = np.abs(as_ - af)
        d = np.where(d > math.pi / 2, math.pi - d, d)
        A = 1 - d / (math.pi / 2)
        qg = np.minimum(1.0, 1 / (1 + np.exp(kg * (G - Dg))) / Tg)
        qa = np.minimum(1.0, 1 / (1 + np.exp(ka * (A - Da))) / Ta)
        return qg * qa

    ga, aa = edges(a)
    gb, ab = edges(b)
    den = (ga + gb).sum()
    if den == 0:
        return 0.0
    return float(np.clip((q(ga, aa) * ga + q(gb, ab) * gb).sum() / den, 0, 1))


def gauss(n):
    s = n / 5.0
    c = (n - 1) / 2.0
    k = np.exp(-((np.arange(n) - c) ** 2) / (2 * s * s))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def filt_valid(img, k):
    n = k.shape[0]
    h, w = img.shape
    if h < n or w < n:
        return np.zeros((0, 0))
    out = np.zeros((h - n + 1, w - n + 1))
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            out[y, x] = (img[y:y + n, x:x + n] * k).sum()
    return out


def decimate(x):
    def along(x, axis):
        x = np.moveaxis(x, axis, 0)
        y = x[::2] if x.shape[0] % 2 else 0.5 * (x[0::2] + x[1::2])
        return np.moveaxis(y, 0, axis)
    return along(along(x, 1), 0)


def vifp(ref, dist):
    sigma_nsq = 2.0
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (5 - scale) + 1
        win = gauss(n)
        if scale > 1:
            ref = filt_valid(ref, win)
            dist = filt_valid(dist, win)
            if ref.size == 0:
                break
            ref = decimate(ref)
            dist = decimate(dist)
        mu1 = filt_valid(ref, win)
        if mu1.size == 0:
            break
        mu2 = filt_valid(dist, win)
        s1 = filt_valid(ref * ref, win) - mu1 * mu1
        s2 = filt_valid(dist * dist, win) - mu2 * mu2
        s12 = filt_valid(ref * dist, win) - mu1 * mu2
        s1 = np.maximum(s1, 0)
        s2 = np.maximum(s2, 0)
        g = s12 / (s1 + 1e-10)
        sv = s2 - g * s12
        m = s1 < 1e-10
        g[m] = 0
        sv[m] = s2[m]
        s1[m] = 0
        m = s2 < 1e-10
        g[m] = 0
        sv[m] = 0
        m = g < 0
        sv[m] = s2[m]
        g[m] = 0
        sv = np.maximum(sv, 1e-10)
        num += np.log2(1 + g * g * s1 / (sv + sigma_nsq)).sum()
        den += np.log2(1 + s1 / sigma_nsq).sum()
    return num / den if den > 0 else 0.0


def metrics():
    f = lcg_bytes(11, (16, 16))
    a = lcg_bytes(22, (16, 16))
    b = lcg_bytes(33, (16, 16))
    print("mi lcg16(11,22,33) %.12f" % (mi_pair(f, a) + mi_pair(f, b)))
    print("sf lcg16(11) %.12f sd %.12f" % (sf(f), f.std()))
    print("qabf lcg16(11,22,33) %.12f" % qabf(f, a, b))
    f = lcg_bytes(44, (32, 32))
    a = lcg_bytes(55, (32, 32))
    b = lcg_bytes(66, (32, 32))
    print("qabf lcg32(44,55,66) %.12f" % qabf(f, a, b))
    print("vif lcg32(44,55,66) %.12f" % (0.5 * (vifp(a, f) + vifp(b, f))))
    # Smooth textured source for the VIF sanity cases.
    yy, xx = np.mgrid[0:32, 0:32]
    tex = np.round(127.5 + 100 * np.sin(xx / 3.0) * np.cos(yy / 4.0))
    print("vif textured self %.12f" % vifp(tex, tex))
    gt = lcg_unit(77, (4, 4)) * 10 + 1
    pred = lcg_unit(88, (4, 4)) * 10 + 1
    print("depth_rmse lcg(77,88) %.12f" % math.sqrt(((gt - pred) ** 2).mean()))


if __name__ == "__main__":
    schedule()
    losses()
    metrics()
