# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled sampling and aggregation kernels.

Draw-for-draw identical to ``nrgcn._fallback``: the same SplitMix64 stream,
the same per-node seeds and the same partial Fisher-Yates order.
"""

import os

import numpy as np

from cython.parallel cimport parallel, prange
from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

cdef extern from "<algorithm>" namespace "std" nogil:
    void std_sort "std::sort"(int64_t* first, int64_t* last)

NAME = "cython"

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t below(uint64_t* state, uint64_t n) noexcept nogil:
    cdef uint64_t threshold = (<uint64_t>0 - n) % n
    cdef uint64_t r
    while True:
        state[0] += GAMMA
        r = mix64(state[0])
        if r >= threshold:
            return r % n


cdef int64_t draw(int64_t* pool, int64_t n, int64_t k, uint64_t* state, int64_t* out) noexcept nogil:
    """Uniform k-subset of pool[:n] into out, sorted; pool is scratch."""
    cdef int64_t i, j, t
    if k >= n:
        memcpy(out, pool, n * sizeof(int64_t))
        std_sort(out, out + n)
        return n
    for i in range(k):
        j = i + <int64_t>below(state, <uint64_t>(n - i))
        t = pool[i]
        pool[i] = pool[j]
        pool[j] = t
    memcpy(out, pool, k * sizeof(int64_t))
    std_sort(out, out + k)
    return k


cdef void sample_root(
    const int64_t* indptr, const int64_t* indices, int64_t root, int64_t K,
    const int64_t* P, const int64_t* S, const int64_t* L, bint exact_hop, uint64_t seed,
    int64_t M, int64_t pmax, int64_t lmax,
    int64_t* parents, int32_t* pcount, int64_t* members, int32_t* mcount,
    int64_t* seen, int32_t* dist, int64_t* queue, int64_t* level_start,
    int64_t* mark, int64_t* mark_tag, int64_t* pool, int64_t* ptmp,
) noexcept nogil:
    cdef int64_t max_hop = K if exact_hop else K - 1
    cdef int64_t head, tail, d, u, w, e, a, b, l, i, m, np_, cnt, q, tag
    cdef uint64_t state = seed ^ mix64(<uint64_t>(root + 1) * GAMMA)

    # BFS levels 0..max_hop, each segment of queue sorted
    seen[root] = root
    dist[root] = 0
    queue[0] = root
    level_start[0] = 0
    level_start[1] = 1
    tail = 1
    for d in range(max_hop):
        a = level_start[d]
        b = level_start[d + 1]
        for head in range(a, b):
            u = queue[head]
            for e in range(indptr[u], indptr[u + 1]):
                w = indices[e]
                if seen[w] != root:
                    seen[w] = root
                    dist[w] = <int32_t>(d + 1)
                    queue[tail] = w
                    tail += 1
        level_start[d + 2] = tail
        std_sort(queue + b, queue + tail)

    pcount[0] = 0
    members[0] = root
    mcount[0] = 1
    m = 1
    for l in range(1, K + 1):
        for i in range(S[l - 1]):
            if l == 1:
                ptmp[0] = root
                np_ = 1
            else:
                a = level_start[l - 1]
                b = level_start[l]
                memcpy(pool, queue + a, (b - a) * sizeof(int64_t))
                np_ = draw(pool, b - a, P[l - 1], &state, ptmp)
            memcpy(parents + m * pmax, ptmp, np_ * sizeof(int64_t))
            pcount[m] = <int32_t>np_

            mark_tag[0] += 1
            tag = mark_tag[0]
            cnt = 0
            for q in range(np_):
                u = ptmp[q]
                for e in range(indptr[u], indptr[u + 1]):
                    w = indices[e]
                    if w == root or mark[w] == tag:
                        continue
                    if exact_hop and not (seen[w] == root and dist[w] == l):
                        continue
                    mark[w] = tag
                    pool[cnt] = w
                    cnt += 1
            std_sort(pool, pool + cnt)
            mcount[m] = <int32_t>draw(pool, cnt, L[l - 1], &state, members + m * lmax)
            m += 1


def sample_all_raw(const int64_t[::1] indptr, const int64_t[::1] indices, const int64_t[::1] roots,
                   const int64_t[::1] P, const int64_t[::1] S, const int64_t[::1] L,
                   seed, bint exact_hop, int num_threads=0):
    cdef int64_t n = indptr.shape[0] - 1
    cdef int64_t R = roots.shape[0]
    cdef int64_t K = P.shape[0]
    cdef int64_t M = 1
    cdef int64_t pmax = 1, lmax = 1
    cdef int64_t k, r, j
    cdef uint64_t useed = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    for k in range(K):
        M += S[k]
        pmax = max(pmax, P[k])
        lmax = max(lmax, L[k])

    parents_a = np.full((R, M, pmax), -1, dtype=np.int64)
    members_a = np.full((R, M, lmax), -1, dtype=np.int64)
    pcount_a = np.zeros((R, M), dtype=np.int32)
    mcount_a = np.zeros((R, M), dtype=np.int32)
    cdef int64_t[:, :, ::1] parents = parents_a
    cdef int64_t[:, :, ::1] members = members_a
    cdef int32_t[:, ::1] pcount = pcount_a
    cdef int32_t[:, ::1] mcount = mcount_a
    if R == 0:
        return parents_a, pcount_a, members_a, mcount_a

    cdef int nt = num_threads if num_threads > 0 else (os.cpu_count() or 1)
    cdef int64_t* seen
    cdef int32_t* dist
    cdef int64_t* queue
    cdef int64_t* level_start
    cdef int64_t* mark
    cdef int64_t mark_tag
    cdef int64_t* pool
    cdef int64_t* ptmp
    cdef const int64_t* ip = &indptr[0]
    cdef const int64_t* ix = &indices[0] if indices.shape[0] > 0 else NULL

    with nogil, parallel(num_threads=nt):
        seen = <int64_t*>malloc((n + 1) * sizeof(int64_t))
        dist = <int32_t*>malloc((n + 1) * sizeof(int32_t))
        queue = <int64_t*>malloc((n + 1) * sizeof(int64_t))
        level_start = <int64_t*>malloc((K + 3) * sizeof(int64_t))
        mark = <int64_t*>malloc((n + 1) * sizeof(int64_t))
        pool = <int64_t*>malloc((n + 1) * sizeof(int64_t))
        ptmp = <int64_t*>malloc((pmax + 1) * sizeof(int64_t))
        mark_tag = 0
        for j in range(n + 1):
            seen[j] = -1
            mark[j] = -1
        for r in prange(R, schedule="dynamic", chunksize=64):
            sample_root(ip, ix, roots[r], K, &P[0], &S[0], &L[0], exact_hop, useed,
                        M, pmax, lmax,
                        &parents[r, 0, 0], &pcount[r, 0], &members[r, 0, 0], &mcount[r, 0],
                        seen, dist, queue, level_start, mark, &mark_tag, pool, ptmp)
        free(seen)
        free(dist)
        free(queue)
        free(level_start)
        free(mark)
        free(pool)
        free(ptmp)
    return parents_a, pcount_a, members_a, mcount_a


def aggregate_raw(const float[:, ::1] features, const int64_t[:, :, ::1] members,
                  const int32_t[:, ::1] counts, int num_threads=0, dest=None):
    """Mean of member feature rows per slot, float64 sums, float32 output.

    Every slot of ``dest`` is overwritten; empty slots become zero.
    """
    cdef int64_t R = members.shape[0]
    cdef int64_t M = members.shape[1]
    cdef int64_t F = features.shape[1]
    out_a = np.empty((R, M, F), dtype=np.float32) if dest is None else dest
    cdef float[:, :, ::1] out = out_a
    if R == 0 or F == 0:
        return out_a
    cdef int nt = num_threads if num_threads > 0 else (os.cpu_count() or 1)
    cdef int64_t r, m, j, f, c, u
    cdef double* acc
    cdef const float* row
    with nogil, parallel(num_threads=nt):
        acc = <double*>malloc(F * sizeof(double))
        for r in prange(R, schedule="static"):
            for m in range(M):
                c = counts[r, m]
                for f in range(F):
                    acc[f] = 0.0
                if c == 0:
                    for f in range(F):
                        out[r, m, f] = 0.0
                    continue
                for j in range(c):
                    u = members[r, m, j]
                    row = &features[u, 0]
                    for f in range(F):
                        acc[f] += row[f]
                for f in range(F):
                    out[r, m, f] = <float>(acc[f] / c)
        free(acc)
    return out_a
