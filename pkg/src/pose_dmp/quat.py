"""Unit quaternion algebra.

Quaternions are stored as arrays ``[eta, eps_1, eps_2, eps_3]`` (scalar
first). Every function accepts stacked inputs of shape ``(..., 4)`` (and
``(..., 3)`` for rotation vectors / angular velocities) and broadcasts over
the leading dimensions.
"""
import numpy as np

from .errors import DomainError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
NORM_TOL = 1e-9
# below this vector norm the log map returns the zero vector
LOG_EPS = 1e-12


def skew(a):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    a = np.asarray(a, dtype=float)
    S = np.zeros(a.shape[:-1] + (3, 3))
    S[..., 0, 1] = -a[..., 2]
    S[..., 0, 2] = a[..., 1]
    S[..., 1, 0] = a[..., 2]
    S[..., 1, 2] = -a[..., 0]
    S[..., 2, 0] = -a[..., 1]
    S[..., 2, 1] = a[..., 0]
    return S


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def scal(q):
    return np.asarray(q)[..., 0]


def vec(q):
    return np.asarray(q)[..., 1:]


def pure(w):
    """Quaternion with zero scalar part and ``w`` as vector part."""
    w = np.asarray(w, dtype=float)
    return np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1)


_C1 = np.array([1, 2, 0])
_C2 = np.array([2, 0, 1])


def cross(a, b):
    """``a x b`` for stacked 3-vectors (cheaper than ``np.cross`` on small batches)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., _C1] * b[..., _C2] - a[..., _C2] * b[..., _C1]


# Hamilton product as out_i = sum_j S_ij a[A_ij] b[B_ij]
_PA = np.array([[0, 1, 2, 3], [0, 1, 2, 3], [0, 2, 3, 1], [0, 3, 1, 2]])
_PB = np.array([[0, 1, 2, 3], [1, 0, 3, 2], [2, 0, 1, 3], [3, 0, 2, 1]])
_PS = np.array([[1, -1, -1, -1], [1, 1, 1, -1], [1, 1, 1, -1], [1, 1, 1, -1]], dtype=float)


def qprod(a, b):
    """Raw Hamilton product of two (not necessarily unit) quaternions.

    ``[eta1 eta2 - eps1.eps2, eta1 eps2 + eta2 eps1 + eps1 x eps2]``
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.einsum("...ij,...ij->...i", a[..., _PA] * _PS, b[..., _PB])


def qmul(a, b):
    """Product ``a * b`` of two unit quaternions, renormalized."""
    return normalize(qprod(a, b))


def conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qlog(q):
    """Logarithmic map ``S^3 -> R^3``, ``arccos(eta) * eps / |eps|``.

    Raises
    ------
    DomainError
        If ``q`` is within 1e-9 of ``[-1, 0, 0, 0]``.
    """
    q = np.asarray(q, dtype=float)
    if np.any(np.linalg.norm(q - np.array([-1.0, 0.0, 0.0, 0.0]), axis=-1) < NORM_TOL):
        raise DomainError("log map undefined at [-1, 0, 0, 0]")
    eps = q[..., 1:]
    n = np.linalg.norm(eps, axis=-1, keepdims=True)
    safe = np.where(n > LOG_EPS, n, 1.0)
    # atan2 equals arccos(eta) on unit q but keeps precision near eta = 1
    r = np.arctan2(n, q[..., :1]) * eps / safe
    return np.where(n > LOG_EPS, r, 0.0)


def qexp(r):
    """Exponential map ``R^3 -> S^3``, ``[cos|r|, sin|r| r/|r|]``.

    Raises
    ------
    DomainError
        If ``|r| >= pi - 1e-9``.
    """
    r = np.asarray(r, dtype=float)
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(n >= np.pi - NORM_TOL):
        raise DomainError(f"rotation vector norm {np.max(n):.6g} outside [0, pi)")
    safe = np.where(n > 0.0, n, 1.0)
    eps = np.where(n > 0.0, np.sin(n) * r / safe, 0.0)
    return np.concatenate([np.cos(n), eps], axis=-1)


def propagate(q, w):
    """Quaternion rate ``0.5 * [0, w] * q``."""
    return 0.5 * qprod(pure(w), q)


def propagate_matrix_form(q, w):
    """Quaternion rate from the scalar/vector split.

    ``eta_dot = -eps.w / 2`` and ``eps_dot = (eta I - S(eps)) w / 2``.
    Kept separate from :func:`propagate` so the two can check each other.
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    eta, eps = q[..., 0], q[..., 1:]
    eta_dot = -0.5 * np.sum(eps * w, axis=-1)
    M = eta[..., None, None] * np.eye(3) - skew(eps)
    eps_dot = 0.5 * np.einsum("...ij,...j->...i", M, w)
    return np.concatenate([eta_dot[..., None], eps_dot], axis=-1)


def integrate_step(q, w, dt):
    """Advance ``q`` by angular velocity ``w`` over ``dt``: ``exp(dt/2 w) * q``."""
    return qmul(qexp(0.5 * dt * np.asarray(w, dtype=float)), q)


def qerr(a, b):
    """Orientation error ``vec(a * conj(b))`` of ``a`` relative to ``b``.

    No hemisphere handling is done here; see :func:`align`.
    """
    return vec(qprod(a, conj(b)))


def align(ref, q):
    """Return ``q`` or ``-q``, whichever lies in the hemisphere of ``ref``.

    ``q`` is flipped when ``scal(ref * conj(q)) < 0``; both signs encode the
    same rotation.
    """
    q = np.asarray(q, dtype=float)
    d = np.sum(np.asarray(ref, dtype=float) * q, axis=-1, keepdims=True)
    return np.where(d < 0.0, -q, q)


def qdist(a, b):
    """Rotation distance ``|qerr(a, b)|`` after hemisphere alignment."""
    return np.linalg.norm(qerr(a, align(a, b)), axis=-1)


def rotate(q, v):
    """Rotate 3-vector(s) ``v`` by unit ``q``: ``vec(q * [0, v] * conj(q))``."""
    q = np.asarray(q, dtype=float)
    eta, eps = q[..., :1], q[..., 1:]
    t = 2.0 * cross(eps, v)
    return v + eta * t + cross(eps, t)


def slerp(q0, q1, s):
    """Spherical linear interpolation along the short arc.

    ``q1`` is flipped into the hemisphere of ``q0`` first, so the endpoint
    at ``s = 1`` is ``q1`` up to sign.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = align(q0, q1)
    s = np.asarray(s, dtype=float)[..., None]
    d = np.clip(np.sum(q0 * q1, axis=-1), -1.0, 1.0)
    theta = np.arccos(d)[..., None]
    if np.all(theta < 1e-12):
        return normalize(q0 + s * (q1 - q0))
    st = np.sin(theta)
    out = (np.sin((1.0 - s) * theta) * q0 + np.sin(s * theta) * q1) / np.where(st > 0, st, 1.0)
    return normalize(out)


def random_quaternions(rng, n=None):
    """Uniformly distributed unit quaternions (Shoemake's method)."""
    shape = () if n is None else (n,)
    u1, u2, u3 = rng.random((3,) + shape)
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    q = np.stack([
        a * np.cos(2 * np.pi * u2),
        a * np.sin(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
        b * np.cos(2 * np.pi * u3),
    ], axis=-1)
    return q
