"""Ansatz construction from three layer primitives: per-qubit rotations, dense
entanglement over a qubit set, and partial entanglement between two sets.

The full-register variant stacks ``ell`` blocks of [dense, rotations] over all
qubits. The dual-branch variant first processes the positional register alone
(dense + rotations on qubits [0, n_p)), couples it to the view register with a
partial layer, rotates everything, and then appends ``ell - 2`` full blocks.

Gate ordering inside every layer is fixed lexicographic so a circuit built
from the same config is byte-identical across runs and platforms. Every gate
owns a distinct parameter slot, so slot count == gate count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qsim import CircuitSpec, Gate

__all__ = [
    "AnsatzConfig",
    "rotational_layer",
    "dense_entangling_layer",
    "partial_entangling_layer",
    "build_full",
    "build_dual_branch",
    "build_ansatz",
    "identity_init",
    "full_gate_count",
    "dual_branch_gate_count",
    "dump_circuit",
]


@dataclass(frozen=True)
class AnsatzConfig:
    """Shape of a variational circuit.

    ``variant`` is 'full' or 'dual'. For 'dual' the register splits into
    positional qubits [0, n_p) and view qubits [n_p, n); ell must be >= 2 so
    the two registers actually interact.
    """

    variant: str
    n: int
    ell: int | None = None
    n_p: int | None = None
    n_v: int | None = None

    def __post_init__(self):
        if self.variant not in ("full", "dual"):
            raise ValueError(f"unknown ansatz variant {self.variant!r}")
        if self.n < 1:
            raise ValueError("need at least one qubit")
        if self.ell is None:
            object.__setattr__(self, "ell", 1 if self.variant == "full" else 2)
        if self.variant == "full":
            if self.ell < 1:
                raise ValueError("full ansatz needs ell >= 1")
        else:
            if self.ell < 2:
                raise ValueError("dual-branch ansatz needs ell >= 2")
            if self.n_p is None:
                if self.n % 2:
                    raise ValueError("dual-branch default split needs even n")
                object.__setattr__(self, "n_p", self.n // 2)
            if self.n_v is None:
                object.__setattr__(self, "n_v", self.n - self.n_p)
            if self.n_p + self.n_v != self.n:
                raise ValueError("n_p + n_v must equal n")
            if self.n_p < 1 or self.n_v < 1:
                raise ValueError("both registers need at least one qubit")


def rotational_layer(qubits, slot_offset: int) -> list[Gate]:
    """One RY per qubit, consecutive slots starting at ``slot_offset``."""
    qubits = sorted(qubits)
    if not qubits:
        raise ValueError("rotational layer needs at least one qubit")
    return [Gate("ry", q, param_slot=slot_offset + i) for i, q in enumerate(qubits)]


def dense_entangling_layer(qubits, slot_offset: int) -> list[Gate]:
    """One CRY per pair i > j within the set (control i, target j), ordered by
    ascending (j, i)."""
    qubits = sorted(qubits)
    if len(qubits) < 2:
        raise ValueError("dense entangling layer needs at least two qubits")
    gates = []
    for a, j in enumerate(qubits):
        for i in qubits[a + 1:]:
            gates.append(Gate("cry", target=j, control=i,
                              param_slot=slot_offset + len(gates)))
    return gates


def partial_entangling_layer(pos_qubits, view_qubits, slot_offset: int) -> list[Gate]:
    """One CRY per (pos, view) pair, control on the positional qubit, row-major."""
    pos_qubits, view_qubits = sorted(pos_qubits), sorted(view_qubits)
    if not pos_qubits or not view_qubits:
        raise ValueError("both qubit sets must be nonempty")
    if set(pos_qubits) & set(view_qubits):
        raise ValueError("positional and view qubit sets must be disjoint")
    gates = []
    for i in pos_qubits:
        for j in view_qubits:
            gates.append(Gate("cry", target=j, control=i,
                              param_slot=slot_offset + len(gates)))
    return gates


def build_full(cfg: AnsatzConfig) -> CircuitSpec:
    """ell blocks of [dense over all qubits, rotations over all qubits]."""
    if cfg.variant != "full":
        raise ValueError("config variant is not 'full'")
    all_q = range(cfg.n)
    gates: list[Gate] = []
    for _ in range(cfg.ell):
        gates += dense_entangling_layer(all_q, len(gates))
        gates += rotational_layer(all_q, len(gates))
    return CircuitSpec(cfg.n, tuple(gates))


def build_dual_branch(cfg: AnsatzConfig) -> CircuitSpec:
    """Positional block, then cross-register coupling, then full blocks.

    Layout: [dense(pos), rot(pos), partial(pos -> view), rot(all)] followed by
    (ell - 2) x [dense(all), rot(all)].
    """
    if cfg.variant != "dual":
        raise ValueError("config variant is not 'dual'")
    pos = range(cfg.n_p)
    view = range(cfg.n_p, cfg.n)
    all_q = range(cfg.n)
    gates: list[Gate] = []
    gates += dense_entangling_layer(pos, len(gates))
    gates += rotational_layer(pos, len(gates))
    gates += partial_entangling_layer(pos, view, len(gates))
    gates += rotational_layer(all_q, len(gates))
    for _ in range(cfg.ell - 2):
        gates += dense_entangling_layer(all_q, len(gates))
        gates += rotational_layer(all_q, len(gates))
    return CircuitSpec(cfg.n, tuple(gates))


def build_ansatz(cfg: AnsatzConfig) -> CircuitSpec:
    return build_full(cfg) if cfg.variant == "full" else build_dual_branch(cfg)


def identity_init(circuit: CircuitSpec) -> np.ndarray:
    """All-zero angles: RY(0) = CRY(0) = I, so the circuit starts as the identity."""
    return np.zeros(circuit.n_params)


def full_gate_count(n: int, ell: int = 1) -> int:
    return ell * (n * (n - 1) // 2 + n)


def dual_branch_gate_count(n: int, n_p: int, n_v: int, ell: int = 2) -> int:
    return (n_p * (n_p - 1) // 2 + n_p + n_p * n_v + n
            + (ell - 2) * (n * (n - 1) // 2 + n))


def dump_circuit(circuit: CircuitSpec) -> str:
    """Textual dump, one gate per line: kind, control ('-' for none), target, slot."""
    lines = [f"# qubits {circuit.n}"]
    for g in circuit.gates:
        ctrl = "-" if g.control is None else str(g.control)
        lines.append(f"{g.kind} {ctrl} {g.target} {g.param_slot}")
    return "\n".join(lines) + "\n"
