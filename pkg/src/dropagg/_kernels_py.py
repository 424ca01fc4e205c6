"""Pure-numpy twin of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _words(k0, k1, start, n):
    counter = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(np.uint64(k0) + counter * _GOLDEN) ^ np.uint64(k1))


def keystream(k0, k1, n):
    return _words(k0, k1, 0, n)


def expand_mod(k0, k1, n, modulus):
    return _words(k0, k1, 0, n) % np.uint64(modulus)


def masked_accumulate(base, keys, signs, modulus):
    mod = np.uint64(modulus)
    out = np.ascontiguousarray(base, dtype=np.uint64) % mod
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1, 2)
    signs = np.asarray(signs, dtype=np.int64)
    if signs.shape[0] != keys.shape[0]:
        raise ValueError("keys and signs differ in length")
    n = out.shape[0]
    for (k0, k1), s in zip(keys, signs):
        if s == 0:
            continue
        v = _words(k0, k1, 0, n) % mod
        if s > 0:
            out = (out + v) % mod
        else:
            out = (out + (mod - v)) % mod
    return out


def gaussian(k0, k1, n):
    pairs = (n + 1) // 2
    w = _words(k0, k1, 0, 2 * pairs)
    u1 = ((w[0::2] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV_2_53
    u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = rad * np.cos(ang)
    out[1::2] = rad * np.sin(ang)
    return out[:n]
