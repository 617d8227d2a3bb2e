"""Batched statevector simulation of the variational block.

Circuit per batch row, qubit 0 being the most significant bit of the basis
index::

    |0...0>  ->  RY(z_i) on each qubit
             ->  CNOT(i, i+1) for i = 0 .. n-2
             ->  RZ(t_i2) RY(t_i1) RX(t_i0) on each qubit
             ->  <Z_i> for each qubit

Gradients use the two-point parameter-shift rule, which is exact for every
rotation gate here.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .functional import ShapeError
from .nn import Module
from .tensor import Tensor, make_op, parameter

MAX_QUBITS = 12
ORACLE_MAX_QUBITS = 6
SHIFT = np.pi / 2


def rx(angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    m = np.empty(angles.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -1j * s
    m[..., 1, 0] = -1j * s
    m[..., 1, 1] = c
    return m


def ry(angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    m = np.empty(angles.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    return m


def rz(angles: np.ndarray) -> np.ndarray:
    m = np.zeros(angles.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = np.exp(-0.5j * angles)
    m[..., 1, 1] = np.exp(0.5j * angles)
    return m


def rzyx(theta: np.ndarray) -> np.ndarray:
    """RZ(t2) RY(t1) RX(t0) as one matrix; ``theta`` has trailing axis (t0, t1, t2)."""
    h = theta / 2
    ca, sa = np.cos(h[..., 0]), np.sin(h[..., 0])
    cb, sb = np.cos(h[..., 1]), np.sin(h[..., 1])
    phase = np.exp(-1j * h[..., 2])
    m = np.empty(theta.shape[:-1] + (2, 2), dtype=complex)
    m[..., 0, 0] = phase * (cb * ca + 1j * sb * sa)
    m[..., 0, 1] = -phase * (sb * ca + 1j * cb * sa)
    m[..., 1, 0] = phase.conj() * (sb * ca - 1j * cb * sa)
    m[..., 1, 1] = phase.conj() * (cb * ca - 1j * sb * sa)
    return m


def zero_state(batch: int, n_qubits: int) -> np.ndarray:
    state = np.zeros((batch, 2 ** n_qubits), dtype=complex)
    state[:, 0] = 1.0
    return state


def apply_single(state: np.ndarray, mats: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply one 2x2 gate per batch row (``mats`` is (B, 2, 2)) to ``qubit``."""
    B = state.shape[0]
    s = state.reshape(B, 2 ** qubit, 2, 2 ** (n_qubits - qubit - 1))
    s0, s1 = s[:, :, 0], s[:, :, 1]
    m = mats[:, None, :, :, None]
    out = np.empty_like(s)
    out[:, :, 0] = m[:, :, 0, 0] * s0 + m[:, :, 0, 1] * s1
    out[:, :, 1] = m[:, :, 1, 0] * s0 + m[:, :, 1, 1] * s1
    return out.reshape(B, -1)


def apply_cnot(state: np.ndarray, control: int, n_qubits: int) -> np.ndarray:
    """CNOT from ``control`` onto its neighbour ``control + 1``."""
    B = state.shape[0]
    s = state.reshape(B, 2 ** control, 2, 2, 2 ** (n_qubits - control - 2))
    out = s.copy()
    out[:, :, 1] = s[:, :, 1, ::-1]
    return out.reshape(B, -1)


def _bit_table(n_qubits: int) -> np.ndarray:
    # bits[index, q] is the value of qubit q in basis state ``index``
    idx = np.arange(2 ** n_qubits)
    return (idx[:, None] >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1


def _cnot_chain_permutation(n_qubits: int) -> np.ndarray:
    """Basis-index gather equivalent to CNOT(0,1) ... CNOT(n-2,n-1)."""
    state = np.arange(2 ** n_qubits)[None, :].astype(complex)
    for q in range(n_qubits - 1):
        state = apply_cnot(state, q, n_qubits)
    return state[0].real.astype(int)


_PERM_CACHE: dict[int, np.ndarray] = {}
_SIGN_CACHE: dict[int, np.ndarray] = {}


def z_expectations(state: np.ndarray, n_qubits: int) -> np.ndarray:
    signs = _SIGN_CACHE.get(n_qubits)
    if signs is None:
        signs = _SIGN_CACHE[n_qubits] = 1.0 - 2.0 * _bit_table(n_qubits)
    probs = state.real ** 2 + state.imag ** 2
    return probs @ signs


def circuit_state(z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Final statevectors, shape (B, 2**n).

    ``theta`` is either shared, shape (n, 3), or per row, shape (B, n, 3).
    """
    z = np.asarray(z, dtype=np.float64)
    B, n = z.shape
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 2:
        theta = np.broadcast_to(theta, (B,) + theta.shape)
    if theta.shape != (B, n, 3):
        raise ShapeError(f"theta shape {theta.shape} does not fit {n} qubits")
    # RY(z_q)|0> = (cos z_q/2, sin z_q/2): the encoded register is a product state
    state = np.ones((B, 1))
    for q in range(n):
        amp = np.stack([np.cos(z[:, q] / 2), np.sin(z[:, q] / 2)], axis=1)
        state = (state[:, :, None] * amp[:, None, :]).reshape(B, -1)
    perm = _PERM_CACHE.get(n)
    if perm is None:
        perm = _PERM_CACHE[n] = _cnot_chain_permutation(n)
    state = state[:, perm].astype(complex)
    mats = rzyx(theta)
    for q in range(n):
        state = apply_single(state, mats[:, q], q, n)
    return state


def gate_by_gate_state(z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Same circuit applied one gate at a time (used for norm checks)."""
    z = np.asarray(z, dtype=np.float64)
    B, n = z.shape
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), (B, n, 3))
    states = [zero_state(B, n)]
    for q in range(n):
        states.append(apply_single(states[-1], ry(z[:, q]), q, n))
    for q in range(n - 1):
        states.append(apply_cnot(states[-1], q, n))
    for q in range(n):
        for gate, k in ((rx, 0), (ry, 1), (rz, 2)):
            states.append(apply_single(states[-1], gate(theta[:, q, k]), q, n))
    return np.stack(states, axis=1)


def expectations(z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z_expectations(circuit_state(z, theta), z.shape[1])


def _check_inputs(z: np.ndarray, theta: np.ndarray) -> None:
    if z.ndim != 2:
        raise ShapeError(f"latent batch must be 2-D, got {z.shape}")
    n = theta.shape[0]
    if theta.shape != (n, 3):
        raise ShapeError(f"circuit parameters must be (n_qubits, 3), got {theta.shape}")
    if z.shape[1] != n:
        raise ShapeError(f"input dimension {z.shape[1]} does not match {n} qubits")
    if not 1 <= n <= MAX_QUBITS:
        raise ShapeError(f"{n} qubits outside supported range 1..{MAX_QUBITS}")


def shift_jacobians(z: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row Jacobians by parameter shift.

    Returns ``dz`` of shape (N, n_in, n_out) and ``dtheta`` of shape
    (N, n, 3, n_out): derivative of every expectation w.r.t. every angle.
    """
    z = np.asarray(z, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    N, n = z.shape
    A = 4 * n  # n encoding angles + 3n trainable angles
    zs = np.broadcast_to(z[:, None, None, :], (N, A, 2, n)).copy()
    ts = np.broadcast_to(theta, (N, A, 2, n, 3)).copy()
    sign = np.array([SHIFT, -SHIFT])
    for a in range(n):
        zs[:, a, :, a] += sign
    for idx in range(3 * n):
        i, k = divmod(idx, 3)
        ts[:, n + idx, :, i, k] += sign
    E = expectations(zs.reshape(-1, n), ts.reshape(-1, n, 3)).reshape(N, A, 2, n)
    D = 0.5 * (E[:, :, 0] - E[:, :, 1])
    return D[:, :n], D[:, n:].reshape(N, n, 3, n)


def parameter_shift_gradients(z: np.ndarray, theta: np.ndarray,
                              upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian products for the block: returns (grad_theta, grad_z).

    ``grad_theta`` is summed over the batch.
    """
    z = np.asarray(z, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    _check_inputs(z, theta)
    dz, dtheta = shift_jacobians(z, theta)
    grad_z = np.einsum("bij,bj->bi", dz, upstream)
    grad_theta = np.einsum("bikj,bj->ik", dtheta, upstream)
    return grad_theta, grad_z


def quantum_block_forward(z: Tensor, theta: Tensor) -> Tensor:
    """Differentiable circuit layer: (N, n) angles -> (N, n) Pauli-Z expectations."""
    _check_inputs(z.data, theta.data)
    zd, td = z.data, theta.data
    out = expectations(zd, td)

    def backward(g):
        grad_theta, grad_z = parameter_shift_gradients(zd, td, g)
        return grad_z, grad_theta

    return make_op(out, (z, theta), backward)


class QuantumBlock(Module):
    """Variational block with ``3 * n_qubits`` trainable rotation angles."""

    def __init__(self, n_qubits: int = 5, rng: np.random.Generator | None = None):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in 1..{MAX_QUBITS}")
        rng = rng or np.random.default_rng(0)
        self.n_qubits = n_qubits
        self.theta = parameter(rng.uniform(-np.pi / 4, np.pi / 4, (n_qubits, 3)))

    def forward(self, z: Tensor) -> Tensor:
        return quantum_block_forward(z, self.theta)


# ---------------------------------------------------------------------------
# dense reference: full 2^n x 2^n unitary, gates from matrix exponentials

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _embed(op: np.ndarray, qubit: int, n: int) -> np.ndarray:
    full = np.array([[1.0 + 0j]])
    for q in range(n):
        full = np.kron(full, op if q == qubit else np.eye(2))
    return full


def _cnot_matrix(control: int, target: int, n: int) -> np.ndarray:
    dim = 2 ** n
    U = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        bits = [(col >> (n - 1 - q)) & 1 for q in range(n)]
        if bits[control]:
            bits[target] ^= 1
        row = sum(b << (n - 1 - q) for q, b in enumerate(bits))
        U[row, col] = 1.0
    return U


def dense_unitary_oracle(n: int, z, theta) -> np.ndarray:
    """Expectations for one input row via explicit Kronecker-product unitaries."""
    if n > ORACLE_MAX_QUBITS:
        raise ValueError(f"dense oracle refuses n={n} (> {ORACLE_MAX_QUBITS})")
    z = np.asarray(z, dtype=np.float64).reshape(n)
    theta = np.asarray(theta, dtype=np.float64).reshape(n, 3)

    def rot(axis: str, angle: float) -> np.ndarray:
        return expm(-0.5j * angle * _PAULI[axis])

    U = np.eye(2 ** n, dtype=complex)
    for q in range(n):
        U = _embed(rot("Y", z[q]), q, n) @ U
    for q in range(n - 1):
        U = _cnot_matrix(q, q + 1, n) @ U
    for q in range(n):
        for k, axis in enumerate("XYZ"):
            U = _embed(rot(axis, theta[q, k]), q, n) @ U
    psi = U[:, 0]
    return np.array([np.real(np.vdot(psi, _embed(_PAULI["Z"], q, n) @ psi)) for q in range(n)])
