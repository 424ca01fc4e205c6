import os
import subprocess
import sys

import numpy as np
import pytest

from dropagg import kernels
from dropagg import _kernels_py as py

MASK = (1 << 64) - 1


def _mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def reference_words(k0, k1, n):
    """Plain-int splitmix counter stream."""
    return [_mix(_mix((k0 + (i + 1) * 0x9E3779B97F4A7C15) & MASK) ^ k1) for i in range(n)]


def backends():
    out = [py]
    try:
        out.append(kernels.get_backend("cython"))
    except ImportError:
        pass
    return out


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.__name__)
def test_keystream_matches_reference(impl):
    for k0, k1 in [(0, 0), (1, 2), (MASK, 12345), (0xDEADBEEF, MASK)]:
        assert impl.keystream(k0, k1, 257).tolist() == reference_words(k0, k1, 257)


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.__name__)
def test_expand_mod(impl):
    words = reference_words(7, 9, 100)
    for mod in (2, 3, 2 ** 20, 2 ** 61 - 1):
        assert impl.expand_mod(7, 9, 100, mod).tolist() == [w % mod for w in words]


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.__name__)
def test_masked_accumulate(impl, rng):
    mod, d = 2 ** 20, 64
    base = rng.integers(0, mod, d, dtype=np.uint64)
    keys = rng.integers(0, 2 ** 63, (5, 2), dtype=np.uint64)
    signs = np.array([1, -1, 0, 1, -1])
    expect = [int(b) for b in base]
    for (k0, k1), s in zip(keys.tolist(), signs):
        for i, w in enumerate(reference_words(k0, k1, d)):
            expect[i] = (expect[i] + s * (w % mod)) % mod
    assert impl.masked_accumulate(base, keys, signs, mod).tolist() == expect


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.__name__)
def test_gaussian_is_box_muller(impl):
    import math
    w = reference_words(3, 4, 10)
    expect = []
    for a, b in zip(w[0::2], w[1::2]):
        u1 = ((a >> 11) + 1) * 2.0 ** -53
        u2 = (b >> 11) * 2.0 ** -53
        r = math.sqrt(-2 * math.log(u1))
        expect += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
    np.testing.assert_allclose(impl.gaussian(3, 4, 9), expect[:9], rtol=0, atol=1e-14)


def test_backends_agree_bit_exact(rng):
    impls = backends()
    if len(impls) < 2:
        pytest.skip("compiled kernels not built")
    a, b = impls
    keys = rng.integers(0, 2 ** 63, (8, 2), dtype=np.uint64)
    signs = rng.integers(-1, 2, 8)
    base = rng.integers(0, 2 ** 20, 5000, dtype=np.uint64)
    np.testing.assert_array_equal(a.masked_accumulate(base, keys, signs, 2 ** 20),
                                  b.masked_accumulate(base, keys, signs, 2 ** 20))
    np.testing.assert_array_equal(a.expand_mod(11, 12, 5000, 2 ** 20), b.expand_mod(11, 12, 5000, 2 ** 20))
    # rounding fixed-point noise must agree so the server strips exactly what clients added
    za, zb = a.gaussian(5, 6, 20000), b.gaussian(5, 6, 20000)
    assert np.max(np.abs(za - zb)) < 1e-12
    np.testing.assert_array_equal(np.rint(za * 256), np.rint(zb * 256))


def test_sign_length_mismatch():
    with pytest.raises(ValueError):
        py.masked_accumulate(np.zeros(4, dtype=np.uint64), np.zeros((2, 2), dtype=np.uint64), [1], 16)


def test_env_forces_fallback():
    code = "import dropagg; print(dropagg.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=dict(os.environ, DROPAGG_PURE_PYTHON="1"),
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_fallback_round_matches_compiled():
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    code = (
        "import numpy as np, hashlib\n"
        "from dropagg.protocol import ProtocolParams, run_round\n"
        "p = ProtocolParams(n_sampled=5, t=3, d=300, T=2, sigma_star_sq=1.0)\n"
        "ups = {u: p.encoder.encode(np.linspace(-1, 1, 300) * u / 5) for u in range(1, 6)}\n"
        "r = run_round(p, ups, {2: 'before_masked_input'}, seed=4)\n"
        "print(hashlib.sha256(r.aggregate.tobytes()).hexdigest())\n"
    )
    digests = {
        flag: subprocess.run([sys.executable, "-c", code], env=dict(os.environ, DROPAGG_PURE_PYTHON=flag),
                             capture_output=True, text=True, check=True).stdout.strip()
        for flag in ("0", "1")
    }
    assert digests["0"] == digests["1"]
