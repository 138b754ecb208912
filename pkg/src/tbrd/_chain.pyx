# cython: language_level=3, boundscheck=False, wraparound=False
"""SHA-256 hash-chain loops backed by libcrypto."""

from libc.stdlib cimport malloc, free
from cpython.bytes cimport PyBytes_FromStringAndSize

cdef extern from *:
    """
    #define OPENSSL_SUPPRESS_DEPRECATED
    #include <openssl/sha.h>
    /* The one-shot SHA256() fetches an EVP provider per call; the CTX API does not. */
    static inline void tbrd_sha256_32(const unsigned char *in, unsigned char *out) {
        SHA256_CTX c;
        SHA256_Init(&c);
        SHA256_Update(&c, in, 32);
        SHA256_Final(out, &c);
    }
    """
    void tbrd_sha256_32(const unsigned char *inp, unsigned char *out) nogil

cdef enum:
    KEY_LEN = 32


def hash_forward(bytes key not None, Py_ssize_t steps):
    if len(key) != KEY_LEN:
        raise ValueError("key must be 32 bytes")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    cdef unsigned char a[KEY_LEN]
    cdef unsigned char b[KEY_LEN]
    cdef const unsigned char *src = key
    cdef Py_ssize_t k
    cdef int j
    for j in range(KEY_LEN):
        a[j] = src[j]
    with nogil:
        # ping-pong between two buffers so input and output never alias
        k = 0
        while k < steps:
            if k & 1:
                tbrd_sha256_32(b, a)
            else:
                tbrd_sha256_32(a, b)
            k += 1
    if steps & 1:
        return PyBytes_FromStringAndSize(<char *>b, KEY_LEN)
    return PyBytes_FromStringAndSize(<char *>a, KEY_LEN)


def hash_chain(bytes seed not None, Py_ssize_t n):
    """Return [K_0, ..., K_n] with K_n = seed."""
    if len(seed) != KEY_LEN:
        raise ValueError("seed must be 32 bytes")
    if n < 1:
        raise ValueError("n must be >= 1")
    cdef unsigned char *buf = <unsigned char *>malloc((n + 1) * KEY_LEN)
    if buf == NULL:
        raise MemoryError()
    cdef const unsigned char *src = seed
    cdef Py_ssize_t i
    cdef int j
    try:
        for j in range(KEY_LEN):
            buf[n * KEY_LEN + j] = src[j]
        with nogil:
            i = n
            while i > 0:
                tbrd_sha256_32(buf + i * KEY_LEN, buf + (i - 1) * KEY_LEN)
                i -= 1
        return [PyBytes_FromStringAndSize(<char *>(buf + i * KEY_LEN), KEY_LEN)
                for i in range(n + 1)]
    finally:
        free(buf)
