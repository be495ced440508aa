"""Vectorised numpy implementation of the exit-walk simulator.

Bit-compatible with the compiled core: both use one xoshiro256** stream per
walk, seeded through splitmix64 from ``(seed, walk index)``.  Exit sites and
step counts agree exactly; exit times agree to libm rounding.
"""
import numpy as np

_U = np.uint64
_GOLDEN = _U(0x9E3779B97F4A7C15)
_MIX1 = _U(0xBF58476D1CE4E5B9)
_MIX2 = _U(0x94D049BB133111EB)
_SEEDMUL = _U(0xD1B54A32D192ED03)


def _splitmix(x):
    # x is advanced by the caller; returns the mixed output
    z = x.copy()
    z = (z ^ (z >> _U(30))) * _MIX1
    z = (z ^ (z >> _U(27))) * _MIX2
    return z ^ (z >> _U(31))


def init_states(seed: int, n: int) -> np.ndarray:
    """Initial xoshiro256** states, shape ``(4, n)``."""
    with np.errstate(over="ignore"):
        x = _U(seed) * _SEEDMUL + np.arange(n, dtype=np.uint64)
        s = np.empty((4, n), dtype=np.uint64)
        for i in range(4):
            x = x + _GOLDEN
            s[i] = _splitmix(x)
    return s


def _rotl(x, k):
    return (x << _U(k)) | (x >> _U(64 - k))


def next_u64(s: np.ndarray) -> np.ndarray:
    """Advance every stream in ``s`` (in place) and return the outputs."""
    with np.errstate(over="ignore"):
        result = _rotl(s[1] * _U(5), 7) * _U(9)
        t = s[1] << _U(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
    return result


def simulate_exits(start, half: int, n_walks: int, seed: int, step_cap: int):
    """Run ``n_walks`` walks from ``start`` until some ``|x_mu| == half``.

    Time is in site units (jump rate ``2d``).  Returns ``(exit positions,
    exit times, step counts, capped)``.
    """
    start = np.asarray(start, dtype=np.int64)
    d = start.size
    nd = _U(2 * d)
    pos_out = np.empty((n_walks, d), dtype=np.int64)
    tau_out = np.empty(n_walks)
    steps_out = np.empty(n_walks, dtype=np.int64)
    s = init_states(seed, n_walks)
    idx = np.arange(n_walks)
    pos = np.tile(start, (n_walks, 1))
    tau = np.zeros(n_walks)
    steps = np.zeros(n_walks, dtype=np.int64)
    if np.any(np.abs(start) >= half):
        raise ValueError("start point is not inside the cube")
    while idx.size:
        r1 = next_u64(s)
        u = ((r1 >> _U(11)).astype(np.float64) + 1.0) * 2.0 ** -53
        tau += -np.log(u) / (2 * d)
        r2 = next_u64(s)
        with np.errstate(over="ignore"):
            j = (((r2 >> _U(32)) * nd) >> _U(32)).astype(np.int64)
        axis = j // 2
        step = 1 - 2 * (j % 2)
        rows = np.arange(idx.size)
        pos[rows, axis] += step
        steps += 1
        done = np.abs(pos[rows, axis]) == half
        if np.any(~done & (steps >= step_cap)):
            return pos_out, tau_out, steps_out, True
        if np.any(done):
            di = idx[done]
            pos_out[di] = pos[done]
            tau_out[di] = tau[done]
            steps_out[di] = steps[done]
            keep = ~done
            idx, pos, tau, steps, s = idx[keep], pos[keep], tau[keep], steps[keep], s[:, keep]
    return pos_out, tau_out, steps_out, False
