"""Independent oracles used by the tests: dense-matrix circuit simulation and
central finite differences. Deliberately brute-force and kept apart from the
library's kernels."""

from functools import reduce

import numpy as np

I2 = np.eye(2)
P0 = np.array([[1.0, 0.0], [0.0, 0.0]])
P1 = np.array([[0.0, 0.0], [0.0, 1.0]])


def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]])


def dense_gate(gate, theta: float, n: int) -> np.ndarray:
    """Full 2^n x 2^n matrix of one gate, qubit 0 as the most significant bit."""
    if gate.kind == "ry":
        ops = [I2] * n
        ops[gate.target] = ry_matrix(theta)
        return reduce(np.kron, ops)
    ops0 = [I2] * n
    ops0[gate.control] = P0
    ops1 = [I2] * n
    ops1[gate.control] = P1
    ops1[gate.target] = ry_matrix(theta)
    return reduce(np.kron, ops0) + reduce(np.kron, ops1)


def dense_circuit(circuit, thetas) -> np.ndarray:
    """Product of explicit gate matrices in application order."""
    mat = np.eye(2**circuit.n)
    for g in circuit.gates:
        mat = dense_gate(g, thetas[g.param_slot], circuit.n) @ mat
    return mat


def dense_z(n: int, qubit: int) -> np.ndarray:
    ops = [I2] * n
    ops[qubit] = np.diag([1.0, -1.0])
    return reduce(np.kron, ops)


def random_state(n: int, rng, nonneg: bool = False) -> np.ndarray:
    v = rng.standard_normal(2**n)
    if nonneg:
        v = np.abs(v)
    return v / np.linalg.norm(v)


def random_circuit(n: int, n_gates: int, rng):
    """Random mix of rotations and controlled rotations, one slot per gate."""
    from qnerf.qsim import CircuitSpec, Gate

    gates = []
    for slot in range(n_gates):
        if n >= 2 and rng.random() < 0.5:
            control, target = rng.choice(n, size=2, replace=False)
            gates.append(Gate("cry", int(target), int(control), slot))
        else:
            gates.append(Gate("ry", int(rng.integers(n)), None, slot))
    return CircuitSpec(n, tuple(gates))


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp, xm = xf.copy(), xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / scale))
