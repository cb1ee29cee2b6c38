"""Exact statevector simulation for real-amplitude circuits built from RY / controlled-RY gates.

Amplitudes are stored as plain float64 vectors: the gate set never leaves the
real subspace, so no complex arithmetic is needed anywhere. Qubit 0 is the
MOST significant bit of the basis-state index, i.e. for n=2 the basis order
is |00>, |01>, |10>, |11> and qubit 0 selects the first bit.

Batched kernels operate on arrays of shape (B, 2^n) and accept either a
scalar angle shared across the batch or a per-row angle vector of shape (B,).
Gradients are computed by taping the statevector after every gate and
reverse-propagating through each 2x2 rotation block in a single backward
pass (exact; no parameter-shift evaluations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Gate",
    "CircuitSpec",
    "StateVector",
    "basis_state",
    "amplitude_embed",
    "tensor_product",
    "apply_ry",
    "apply_cry",
    "run_circuit",
    "expectation_z",
    "all_expectations_z",
    "backprop_circuit",
    "ry_kernel",
    "cry_kernel",
    "run_circuit_batch",
    "z_expectations_batch",
    "backprop_z_batch",
    "backprop_circuit_batch",
    "z_sign_matrix",
]

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Gate:
    """One circuit element: 'ry' on ``target`` or 'cry' with an extra ``control``.

    ``param_slot`` indexes into the circuit angle vector.
    """

    kind: str
    target: int
    control: int | None = None
    param_slot: int = 0

    def __post_init__(self):
        if self.kind not in ("ry", "cry"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "cry":
            if self.control is None:
                raise ValueError("cry gate requires a control qubit")
            if self.control == self.target:
                raise ValueError("control and target must differ")
        elif self.control is not None:
            raise ValueError("ry gate takes no control qubit")


@dataclass(frozen=True)
class CircuitSpec:
    """Ordered gate list acting on an n-qubit register."""

    n: int
    gates: tuple[Gate, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("circuit needs at least one qubit")
        for g in self.gates:
            if not (0 <= g.target < self.n):
                raise ValueError(f"target {g.target} out of range for n={self.n}")
            if g.control is not None and not (0 <= g.control < self.n):
                raise ValueError(f"control {g.control} out of range for n={self.n}")

    @property
    def n_params(self) -> int:
        """Number of angle slots referenced (max slot + 1)."""
        if not self.gates:
            return 0
        return max(g.param_slot for g in self.gates) + 1

    def __len__(self) -> int:
        return len(self.gates)


@dataclass(frozen=True)
class StateVector:
    """Real-valued pure state: ``amps`` holds 2^n amplitudes, unit 2-norm."""

    n: int
    amps: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state needs at least one qubit")
        amps = np.asarray(self.amps, dtype=np.float64)
        if amps.shape != (2**self.n,):
            raise ValueError(f"expected {2**self.n} amplitudes, got shape {amps.shape}")
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def basis_state(n: int) -> StateVector:
    """The all-zeros computational basis state on n qubits."""
    if n < 1:
        raise ValueError("n must be >= 1")
    amps = np.zeros(2**n)
    amps[0] = 1.0
    return StateVector(n, amps)


def amplitude_embed(v) -> StateVector:
    """Encode a nonnegative vector of length 2^k (k >= 1) as state amplitudes.

    The vector is L2-normalized; an (effectively) all-zero vector maps to the
    uniform superposition instead of raising, so batches survive dead-ReLU
    encoder outputs.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    k = v.shape[0].bit_length() - 1
    if v.shape[0] < 2 or v.shape[0] != 2**k:
        raise ValueError(f"length {v.shape[0]} is not a power of two >= 2")
    if np.any(v < 0):
        raise ValueError("amplitude embedding requires nonnegative entries")
    norm = np.linalg.norm(v)
    if norm < ZERO_NORM_EPS:
        return StateVector(k, np.full(2**k, 1.0 / math.sqrt(2**k)))
    return StateVector(k, v / norm)


def tensor_product(a: StateVector, b: StateVector) -> StateVector:
    """Kronecker product; ``a`` occupies the leading (most significant) qubits."""
    return StateVector(a.n + b.n, np.kron(a.amps, b.amps))


def _check_qubit(n: int, q: int, name: str = "qubit"):
    if not (0 <= q < n):
        raise ValueError(f"{name} index {q} out of range for n={n}")


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _angle_cos_sin(theta, batch: int, ndim: int):
    """cos/sin of theta/2, shaped to broadcast against arrays of ``ndim`` axes
    whose leading axis is the batch."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    if theta.ndim == 1:
        if theta.shape[0] != batch:
            raise ValueError("per-row angle vector must match batch size")
        shape = (batch,) + (1,) * (ndim - 1)
        c, s = c.reshape(shape), s.reshape(shape)
    return c, s


def ry_kernel(amps: np.ndarray, n: int, target: int, theta) -> np.ndarray:
    """Apply RY(theta) on ``target`` to a (B, 2^n) batch of states."""
    batch = amps.shape[0]
    left, right = 2**target, 2 ** (n - 1 - target)
    a = amps.reshape(batch, left, 2, right)
    c, s = _angle_cos_sin(theta, batch, 3)
    a0, a1 = a[:, :, 0, :], a[:, :, 1, :]
    out = np.empty((batch, left, 2, right))
    out[:, :, 0, :] = c * a0 - s * a1
    out[:, :, 1, :] = s * a0 + c * a1
    return out.reshape(batch, -1)


def _pair_indices(n: int, control: int, target: int):
    """Basic-indexing tuples selecting the control=1, target=0/1 blocks of a
    (B, 2, ..., 2) state tensor."""
    i0 = [slice(None)] * (n + 1)
    i0[1 + control] = 1
    i1 = list(i0)
    i0[1 + target] = 0
    i1[1 + target] = 1
    return tuple(i0), tuple(i1)


def cry_kernel(amps: np.ndarray, n: int, control: int, target: int, theta) -> np.ndarray:
    """Apply controlled-RY on a (B, 2^n) batch: rotate only where the control bit is 1."""
    batch = amps.shape[0]
    a = amps.reshape((batch,) + (2,) * n)
    out = np.empty_like(a)
    rest = _control_index(n, control, 0)
    out[rest] = a[rest]
    i0, i1 = _pair_indices(n, control, target)
    a0, a1 = a[i0], a[i1]
    c, s = _angle_cos_sin(theta, batch, a0.ndim)
    out[i0] = c * a0 - s * a1
    out[i1] = s * a0 + c * a1
    return out.reshape(batch, -1)


def _control_index(n: int, control: int, value: int):
    idx = [slice(None)] * (n + 1)
    idx[1 + control] = value
    return tuple(idx)


def run_circuit_batch(amps: np.ndarray, n: int, circuit: CircuitSpec, thetas,
                      keep_tape: bool = False):
    """Run ``circuit`` on a (B, 2^n) batch.

    ``thetas`` has shape (P,) or (B, P) for per-row angles. With
    ``keep_tape`` the list of states before each gate plus the final state is
    returned alongside the output (inputs to the backward pass).
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if circuit.n_params > thetas.shape[-1]:
        raise ValueError(
            f"circuit references slot {circuit.n_params - 1} but got "
            f"{thetas.shape[-1]} angles")
    state = np.asarray(amps, dtype=np.float64)
    if state.shape[-1] != 2**n:
        raise ValueError("state length does not match qubit count")
    tape = [state] if keep_tape else None
    for g in circuit.gates:
        th = thetas[..., g.param_slot]
        if g.kind == "ry":
            state = ry_kernel(state, n, g.target, th)
        else:
            state = cry_kernel(state, n, g.control, g.target, th)
        if keep_tape:
            tape.append(state)
    return (state, tape) if keep_tape else state


@lru_cache(maxsize=None)
def z_sign_matrix(n: int) -> np.ndarray:
    """(n, 2^n) matrix of Z eigenvalues: entry [q, i] is +1 if bit q of i is 0, else -1."""
    idx = np.arange(2**n)
    bits = (idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 1.0 - 2.0 * bits


def z_expectations_batch(amps: np.ndarray, n: int) -> np.ndarray:
    """Per-qubit <Z> for a (B, 2^n) batch; returns (B, n)."""
    return (amps * amps) @ z_sign_matrix(n).T


def backprop_z_batch(amps: np.ndarray, n: int, d_z: np.ndarray) -> np.ndarray:
    """VJP of z_expectations_batch: d(loss)/d(amps) given d(loss)/d(<Z_q>)."""
    return 2.0 * amps * (d_z @ z_sign_matrix(n))


def _ry_backward(g_out, a_in, n, target, theta, batched_theta):
    """Reverse one RY: returns (g_in, d_theta)."""
    batch = g_out.shape[0]
    left, right = 2**target, 2 ** (n - 1 - target)
    g = g_out.reshape(batch, left, 2, right)
    a = a_in.reshape(batch, left, 2, right)
    c, s = _angle_cos_sin(theta, batch, 3)
    g0, g1 = g[:, :, 0, :], g[:, :, 1, :]
    a0, a1 = a[:, :, 0, :], a[:, :, 1, :]
    g_in = np.empty((batch, left, 2, right))
    g_in[:, :, 0, :] = c * g0 + s * g1
    g_in[:, :, 1, :] = -s * g0 + c * g1
    # d/dtheta of [[c,-s],[s,c]] with c=cos(theta/2), s=sin(theta/2)
    dcontrib = 0.5 * (g0 * (-s * a0 - c * a1) + g1 * (c * a0 - s * a1))
    d_theta = dcontrib.sum(axis=(1, 2)) if batched_theta else dcontrib.sum()
    return g_in.reshape(batch, -1), d_theta


def _cry_backward(g_out, a_in, n, control, target, theta, batched_theta):
    """Reverse one controlled-RY: identity on the control-0 block."""
    batch = g_out.shape[0]
    g = g_out.reshape((batch,) + (2,) * n)
    a = a_in.reshape((batch,) + (2,) * n)
    g_in = np.empty_like(g)
    rest = _control_index(n, control, 0)
    g_in[rest] = g[rest]
    i0, i1 = _pair_indices(n, control, target)
    g0, g1 = g[i0], g[i1]
    a0, a1 = a[i0], a[i1]
    c, s = _angle_cos_sin(theta, batch, g0.ndim)
    g_in[i0] = c * g0 + s * g1
    g_in[i1] = -s * g0 + c * g1
    dcontrib = 0.5 * (g0 * (-s * a0 - c * a1) + g1 * (c * a0 - s * a1))
    if batched_theta:
        d_theta = dcontrib.reshape(batch, -1).sum(axis=1)
    else:
        d_theta = dcontrib.sum()
    return g_in.reshape(batch, -1), d_theta


def backprop_circuit_batch(tape: list[np.ndarray], n: int, circuit: CircuitSpec,
                           thetas, d_out: np.ndarray):
    """Reverse through a taped circuit run.

    ``tape`` is the state list from run_circuit_batch(keep_tape=True) and
    ``d_out`` the loss gradient w.r.t. the final state. Returns
    (d_thetas, d_input_amps) with d_thetas matching the shape of ``thetas``.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    batched = thetas.ndim == 2
    d_thetas = np.zeros_like(thetas)
    g = np.asarray(d_out, dtype=np.float64)
    for i in range(len(circuit.gates) - 1, -1, -1):
        gate = circuit.gates[i]
        th = thetas[..., gate.param_slot]
        a_in = tape[i]
        if gate.kind == "ry":
            g, d_th = _ry_backward(g, a_in, n, gate.target, th, batched)
        else:
            g, d_th = _cry_backward(g, a_in, n, gate.control, gate.target, th, batched)
        d_thetas[..., gate.param_slot] += d_th
    return d_thetas, g


# ---------------------------------------------------------------------------
# single-state API
# ---------------------------------------------------------------------------

def apply_ry(state: StateVector, target: int, theta: float) -> StateVector:
    _check_qubit(state.n, target, "target")
    out = ry_kernel(state.amps[None, :], state.n, target, float(theta))[0]
    return StateVector(state.n, out)


def apply_cry(state: StateVector, control: int, target: int, theta: float) -> StateVector:
    _check_qubit(state.n, control, "control")
    _check_qubit(state.n, target, "target")
    if control == target:
        raise ValueError("control and target must differ")
    out = cry_kernel(state.amps[None, :], state.n, control, target, float(theta))[0]
    return StateVector(state.n, out)


def run_circuit(init: StateVector, circuit: CircuitSpec, thetas) -> StateVector:
    """Apply the circuit's gates in order; preserves unit norm exactly up to roundoff."""
    if circuit.n != init.n:
        raise ValueError("circuit and state qubit counts differ")
    out = run_circuit_batch(init.amps[None, :], init.n, circuit, thetas)[0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite amplitude after circuit run")
    return StateVector(init.n, out)


def expectation_z(state: StateVector, qubit: int) -> float:
    """<Z_qubit> = sum of |a_i|^2 over bit-0 indices minus the bit-1 ones."""
    _check_qubit(state.n, qubit)
    return float(z_expectations_batch(state.amps[None, :], state.n)[0, qubit])


def all_expectations_z(state: StateVector) -> np.ndarray:
    return z_expectations_batch(state.amps[None, :], state.n)[0]


def backprop_circuit(init: StateVector, circuit: CircuitSpec, thetas, upstream):
    """Exact reverse-mode gradients through circuit + Z measurements.

    ``upstream`` is d(loss)/d<Z_q> for q = 0..n-1. Returns
    (d_loss/d_thetas, d_loss/d_init_amps).
    """
    if circuit.n != init.n:
        raise ValueError("circuit and state qubit counts differ")
    thetas = np.asarray(thetas, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (init.n,):
        raise ValueError(f"upstream must have shape ({init.n},)")
    out, tape = run_circuit_batch(init.amps[None, :], init.n, circuit, thetas,
                                  keep_tape=True)
    d_out = backprop_z_batch(out, init.n, upstream[None, :])
    d_thetas, d_in = backprop_circuit_batch(tape, init.n, circuit, thetas, d_out)
    return d_thetas, d_in[0]
