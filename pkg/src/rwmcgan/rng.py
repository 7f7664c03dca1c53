"""Reproducible pseudo-random streams.

Every random decision in the package (data order, subsets, weight init,
latent noise, weight dropout) is drawn from the generator defined here so
that results can be reproduced bit for bit by any implementation of the
same algorithm:

* ``splitmix64`` expands a 64-bit seed into generator state.
* ``Rng`` runs ``LANES`` independent xoshiro256** generators side by side.
  Lane ``l`` is seeded with splitmix64 outputs ``4*l .. 4*l+3`` of the
  seed. One *block* advances every lane once and yields the lane outputs
  in lane order. A request for ``n`` words consumes ``ceil(n / LANES)``
  whole blocks and discards the unused tail.
* Uniform doubles are ``(u >> 11) * 2**-53``; normals use Box-Muller on
  pairs of uniforms (cosine branch only); bounded integers use the high
  64 bits of ``u * bound``.
* Fisher-Yates shuffles walk ``i = n-1 .. 1`` swapping ``i`` with
  ``j = bounded(u_k, i + 1)`` where ``u_k`` is the k-th word of one
  ``n - 1`` word request.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
LANES = 64


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(state):
    """One splitmix64 step on a python int. Returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    return state, mix64(state)


def derive_seed(seed, *keys):
    """Deterministically fold integer ``keys`` into ``seed``."""
    s = seed & MASK64
    for k in keys:
        s = mix64((s + ((k + 1) * GOLDEN)) & MASK64)
    return s


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    def __init__(self, seed):
        self.seed = seed & MASK64
        words = []
        s = self.seed
        for _ in range(4 * LANES):
            s, out = splitmix64(s)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64).reshape(LANES, 4).T.copy()

    def _block(self):
        s0, s1, s2, s3 = self.state
        result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self.state[3] = _rotl(s3, 45)
        return result

    def next_u64(self, n):
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        blocks = [self._block() for _ in range(-(-n // LANES))]
        return np.concatenate(blocks)[:n]

    def uniform(self, shape):
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape, dtype=np.float32):
        n = int(np.prod(shape, dtype=np.int64))
        words = self.next_u64(2 * n)
        u1 = ((words[:n] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (words[n:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape).astype(dtype)

    def bernoulli(self, shape, p_one):
        """Binary array, each entry 1 with probability ``p_one``."""
        return (self.uniform(shape) < p_one).astype(np.float32)

    def permutation(self, n):
        order = list(range(n))
        words = self.next_u64(n - 1) if n > 1 else []
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = (int(words[k]) * (i + 1)) >> 64
            order[i], order[j] = order[j], order[i]
        return np.array(order, dtype=np.int64)

    def get_state(self):
        return [int(v) for v in self.state.T.ravel()]

    def set_state(self, words):
        if len(words) != 4 * LANES:
            raise ValueError(f"expected {4 * LANES} state words, got {len(words)}")
        self.state = np.array(words, dtype=np.uint64).reshape(LANES, 4).T.copy()
