"""Counter-based random streams keyed by ``(seed, cycle index)``.

Every simulated cycle owns a private Philox4x64-10 stream: the 128-bit key
is ``(seed, cycle)`` and the 256-bit counter is ``(block, purpose, 0, 0)``.
A draw is therefore a pure function of its coordinates, which is what makes
results independent of how cycles are split across workers and lets the
numba kernels and the numpy fallback consume identical random numbers.

The block function is bit-exact with :class:`numpy.random.Philox`; note that
numpy increments its counter *before* the first block, so
``Philox(key=k, counter=c).random_raw(4)`` equals ``philox4x64(c + 1, k)``.
"""

import math

import numpy as np

from ._jit import USE_NUMBA, njit

# stream purposes (second counter word)
HIT = 0  # hitting-time draw
EXACT = 1  # exact Gaussian endpoint/integral pairs
PATH = 2  # grid path normals
CROSS = 3  # bridge-crossing uniforms
EXTEND = 4  # post-threshold extension of the (T_Q + T) policy

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 2.0**-53


def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    cross = (ll >> _S32) + (lh & _LO32) + hl
    hi = a_hi * b_hi + (lh >> _S32) + (cross >> _S32)
    return hi, a * b  # low word wraps modulo 2^64


def _philox_raw(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _to_unit(x):
    # (0, 1], never zero
    return ((x >> _S11) + _ONE) * _TWO_M53


# Wichura's AS241 (PPND16) rational approximations, lower half only
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)
_HALF53 = np.uint64(1 << 52)
_TOP53 = np.uint64((1 << 53) - 1)


def _poly(c, r):
    return ((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r + c[1]) * r + c[0]


def _to_normal(x):
    """Standard normal from one raw word by inverse CDF, exactly antisymmetric.

    The top 53 bits pick a midpoint (k + 1/2) 2^-53; the upper half is
    mirrored onto the lower half so no tail probability is ever rounded.
    """
    k = x >> _S11
    upper = k >= _HALF53
    k = np.where(upper, _TOP53 - k, k)
    p = (k.astype(np.float64) + 0.5) * _TWO_M53
    q = p - 0.5
    r = 0.180625 - q * q
    centre = q * _poly(_A, r) / _poly(_B, r)
    with np.errstate(invalid="ignore"):
        t = np.sqrt(-np.log(p))
    near = t - 1.6
    far = t - 5.0
    tail = np.where(t <= 5.0, _poly(_C, near) / _poly(_D, near), _poly(_E, far) / _poly(_F, far))
    z = np.where(q >= -0.425, centre, -tail)
    return np.where(upper, -z, z)


@njit(inline="always")
def _to_unit_nb(x):
    return ((x >> _S11) + _ONE) * _TWO_M53


@njit(inline="always")
def _to_normal_nb(x):
    k = x >> _S11
    upper = k >= _HALF53
    if upper:
        k = _TOP53 - k
    p = (float(k) + 0.5) * _TWO_M53
    q = p - 0.5
    if q >= -0.425:
        r = 0.180625 - q * q
        z = q * (((((((_A[7] * r + _A[6]) * r + _A[5]) * r + _A[4]) * r + _A[3]) * r + _A[2]) * r + _A[1]) * r + _A[0]) / (
            ((((((_B[7] * r + _B[6]) * r + _B[5]) * r + _B[4]) * r + _B[3]) * r + _B[2]) * r + _B[1]) * r + _B[0])
    else:
        t = math.sqrt(-math.log(p))
        if t <= 5.0:
            r = t - 1.6
            z = -(((((((_C[7] * r + _C[6]) * r + _C[5]) * r + _C[4]) * r + _C[3]) * r + _C[2]) * r + _C[1]) * r + _C[0]) / (
                ((((((_D[7] * r + _D[6]) * r + _D[5]) * r + _D[4]) * r + _D[3]) * r + _D[2]) * r + _D[1]) * r + _D[0])
        else:
            r = t - 5.0
            z = -(((((((_E[7] * r + _E[6]) * r + _E[5]) * r + _E[4]) * r + _E[3]) * r + _E[2]) * r + _E[1]) * r + _E[0]) / (
                ((((((_F[7] * r + _F[6]) * r + _F[5]) * r + _F[4]) * r + _F[3]) * r + _F[2]) * r + _F[1]) * r + _F[0])
    return -z if upper else z


_mulhilo_nb = njit(inline="always")(_mulhilo)


@njit(inline="always")
def _philox_nb(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo_nb(_M0, c0)
        hi1, lo1 = _mulhilo_nb(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit
def philox_block(seed, cycle, purpose, block):
    """Four raw 64-bit words for one counter block (scalar, jit-friendly)."""
    return _philox_nb(
        np.uint64(block), np.uint64(purpose), np.uint64(0), np.uint64(0),
        np.uint64(seed), np.uint64(cycle),
    )


@njit
def normal4(seed, cycle, purpose, block):
    """Four standard normals, one per word of the block."""
    x0, x1, x2, x3 = philox_block(seed, cycle, purpose, block)
    return _to_normal_nb(x0), _to_normal_nb(x1), _to_normal_nb(x2), _to_normal_nb(x3)


@njit
def uniform4(seed, cycle, purpose, block):
    x0, x1, x2, x3 = philox_block(seed, cycle, purpose, block)
    return _to_unit_nb(x0), _to_unit_nb(x1), _to_unit_nb(x2), _to_unit_nb(x3)


# -- vectorised forms (numpy fallback and tests) ---------------------------


def _blocks(seed, cycles, purpose, blocks):
    cycles = np.asarray(cycles, dtype=np.uint64)
    blocks = np.asarray(blocks, dtype=np.uint64)
    cycles, blocks = np.broadcast_arrays(cycles, blocks)
    zero = np.zeros_like(cycles)
    with np.errstate(over="ignore"):
        return _philox_raw(
            blocks, zero + np.uint64(purpose), zero, zero,
            zero + np.uint64(seed), cycles,
        )


def raw_words(seed, cycles, purpose, blocks) -> np.ndarray:
    """Raw words with a trailing axis of length 4, broadcasting cycles/blocks."""
    return np.stack(_blocks(seed, cycles, purpose, blocks), axis=-1)


def uniforms(seed, cycles, purpose, count: int) -> np.ndarray:
    """The first ``count`` uniforms of ``purpose`` for each cycle, shape (m, count)."""
    cycles = np.atleast_1d(np.asarray(cycles, dtype=np.uint64))
    nb = -(-count // 4)
    words = raw_words(seed, cycles[:, None], purpose, np.arange(nb)[None, :])
    return _to_unit(words).reshape(len(cycles), 4 * nb)[:, :count]


@njit
def _fill_normals(seed, cycles, purpose, start_block, out):
    nb = (out.shape[1] + 3) // 4
    for j in range(cycles.shape[0]):
        for b in range(nb):
            z0, z1, z2, z3 = normal4(seed, cycles[j], purpose, start_block + b)
            k = 4 * b
            out[j, k] = z0
            out[j, k + 1] = z1
            out[j, k + 2] = z2
            out[j, k + 3] = z3


def normals(seed, cycles, purpose, count: int, start_block: int = 0) -> np.ndarray:
    """Normals ``4*start_block ..`` of ``purpose`` for each cycle, shape (m, count)."""
    cycles = np.atleast_1d(np.asarray(cycles, dtype=np.uint64))
    if USE_NUMBA:
        out = np.empty((len(cycles), 4 * (-(-count // 4))))
        _fill_normals(np.uint64(seed), cycles, np.uint64(purpose), np.uint64(start_block), out)
        return out[:, :count]
    nb = -(-count // 4)
    words = raw_words(seed, cycles[:, None], purpose, np.arange(start_block, start_block + nb)[None, :])
    return _to_normal(words).reshape(len(cycles), 4 * nb)[:, :count]


def normal_at(seed, cycles, purpose, index) -> np.ndarray:
    """Normal number ``index`` (per element) of each cycle's ``purpose`` stream."""
    index = np.asarray(index, dtype=np.int64)
    words = _blocks(seed, cycles, purpose, index // 4)
    return _to_normal(np.choose(index % 4, words))


def uniform_at(seed, cycles, purpose, index) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    words = _blocks(seed, cycles, purpose, index // 4)
    return _to_unit(np.choose(index % 4, words))
