"""Radiance-field models mapping (position, view direction) -> (rgb, density).

Four variants share one forward interface:

* ``full``: sinusoidal features -> one encoder MLP -> all 2^n amplitudes ->
  variational circuit -> per-qubit Z expectations -> channel averaging ->
  learnable output scaling.
* ``dual``: two encoder MLPs feed 2^{n_p} and 2^{n_v} amplitudes whose outer
  product forms the register state; the circuit couples the halves.
* ``classical``: the standard compact NeRF MLP baseline (8-layer trunk with a
  skip connection, density from position only, color from position+view).
* ``classical-q``: the de-quantised control; the encoder + normalization stay,
  a small MLP replaces the circuit.

Conventions: positions are scene coordinates divided by ``scene_bound`` before
encoding; qubit 0 is the most significant index bit; the density channel is
scaled by ``sigma_scale`` and never clipped from above.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field as dc_field

import numpy as np

from . import qsim
from .autodiff import (ParamStore, Var, affine, clamp, concat, grad_enabled,
                       init_mlp, matmul, mlp_forward, normalize_rows, relu,
                       sigmoid)
from .circuits import AnsatzConfig, build_ansatz, identity_init
from .noise import NoiseConfig, perturb_thetas

__all__ = [
    "VARIANTS",
    "FieldInput",
    "FieldOutput",
    "ModelConfig",
    "positional_encoding",
    "default_parity_sets",
    "parity_average",
    "apply_output_scaling",
    "init_mlp",
    "mlp_forward",
    "build_model",
    "field_forward",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointVersionError",
]

VARIANTS = ("full", "dual", "classical", "classical-q")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FieldInput:
    """A query point: position in scene coordinates, unit view direction."""

    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if p.shape != (3,) or d.shape != (3,):
            raise ValueError("position and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("direction must be a unit vector")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class FieldOutput:
    """Predicted color in [0,1]^3 and nonnegative per-unit-length density."""

    rgb: np.ndarray
    sigma: float

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.shape != (3,):
            raise ValueError("rgb must be a 3-vector")
        if np.any(rgb < 0) or np.any(rgb > 1):
            raise ValueError("rgb components must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("density must be nonnegative")
        object.__setattr__(self, "rgb", rgb)


def default_parity_sets(n: int) -> tuple[tuple[int, ...], ...]:
    """Contiguous near-even split of n qubits into the 4 output channels."""
    if n < 4:
        raise ValueError("need at least 4 qubits for 4 output channels")
    base, extra = divmod(n, 4)
    sets, start = [], 0
    for i in range(4):
        size = base + (1 if i < extra else 0)
        sets.append(tuple(range(start, start + size)))
        start += size
    return tuple(sets)


@dataclass
class ModelConfig:
    """Hyper-parameters of one radiance-field model."""

    variant: str = "full"
    n: int = 8
    ell: int | None = None
    l_pos: int = 10
    l_view: int = 4
    hidden: int = 256
    sigma_scale: float = 25.0
    scene_bound: float = 3.0
    parity_sets: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.ell is None:
            self.ell = 2 if self.variant == "dual" else 1
        if self.variant in ("full", "dual", "classical-q"):
            if self.parity_sets is None and self.variant != "classical-q":
                self.parity_sets = default_parity_sets(self.n)
            if self.parity_sets is not None:
                self.parity_sets = tuple(tuple(s) for s in self.parity_sets)
                flat = [q for s in self.parity_sets for q in s]
                if len(self.parity_sets) != 4 or any(not s for s in self.parity_sets):
                    raise ValueError("need 4 nonempty parity sets")
                if sorted(flat) != list(range(self.n)):
                    raise ValueError("parity sets must partition the qubit range")

    def ansatz(self) -> AnsatzConfig:
        if self.variant == "full":
            return AnsatzConfig("full", self.n, self.ell)
        if self.variant == "dual":
            return AnsatzConfig("dual", self.n, self.ell)
        raise ValueError(f"{self.variant!r} has no ansatz")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        data = json.loads(text)
        if data.get("parity_sets") is not None:
            data["parity_sets"] = tuple(tuple(s) for s in data["parity_sets"])
        return cls(**data)


def positional_encoding(x, L: int):
    """Sinusoidal features (sin 2^0 pi x, cos 2^0 pi x, ..., sin 2^{L-1} pi x,
    cos 2^{L-1} pi x) per coordinate, concatenated coordinate-major.

    A scalar maps to a (2L,) vector; an (..., C) array maps to (..., 2*L*C).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    freqs = (2.0 ** np.arange(L)) * np.pi
    ang = arr[..., None] * freqs  # (..., C, L)
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., C, L, 2)
    return enc.reshape(arr.shape[:-1] + (arr.shape[-1] * 2 * L,))


def parity_matrix(parity_sets, n: int) -> np.ndarray:
    """(n, 4) averaging matrix: column i holds 1/|C_i| on the members of C_i."""
    mat = np.zeros((n, 4))
    for i, s in enumerate(parity_sets):
        for q in s:
            mat[q, i] = 1.0 / len(s)
    return mat


def parity_average(expectations, parity_sets):
    """Average per-qubit expectations within each channel's qubit set.

    Accepts a plain (n,) vector (returns (4,)) or a Var of shape (B, n)
    (returns a Var of shape (B, 4))."""
    if isinstance(expectations, Var):
        n = expectations.value.shape[-1]
        return matmul(expectations, parity_matrix(parity_sets, n))
    exp = np.asarray(expectations, dtype=np.float64)
    return exp @ parity_matrix(parity_sets, exp.shape[-1])


def apply_output_scaling(raw, alphas, sigma_scale: float = 25.0) -> FieldOutput:
    """Channel-wise learnable scaling: rgb clipped to [0,1], density floored at
    zero and stretched by ``sigma_scale`` (no upper clip)."""
    raw = np.asarray(raw, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    scaled = alphas * raw
    rgb = np.clip(scaled[:3], 0.0, 1.0)
    sigma = max(scaled[3], 0.0) * sigma_scale
    return FieldOutput(rgb, float(sigma))


def _scale_outputs(raw: Var, alphas: Var, sigma_scale: float):
    """Var version of apply_output_scaling for (B, 4) batches."""
    scaled = alphas * raw
    rgb = clamp(scaled[:, :3], 0.0, 1.0)
    sigma = relu(scaled[:, 3]) * sigma_scale
    return rgb, sigma


def _mlp_param_count(dims) -> int:
    return sum(fin * fout + fout for fin, fout in zip(dims[:-1], dims[1:]))


# ---------------------------------------------------------------------------
# quantum circuit as one graph node
# ---------------------------------------------------------------------------

def circuit_z_node(amps: Var, thetas: Var, circuit, n: int,
                   thetas_value: np.ndarray | None = None) -> Var:
    """Run the circuit on a (B, 2^n) batch of states and measure every qubit.

    ``thetas_value`` optionally overrides the forward angles (inference-time
    parameter noise); gradients still flow to ``thetas`` since the override is
    an additive offset.
    """
    th = thetas.value if thetas_value is None else np.asarray(thetas_value)
    if grad_enabled():
        out, tape = qsim.run_circuit_batch(amps.value, n, circuit, th, keep_tape=True)
    else:
        out = qsim.run_circuit_batch(amps.value, n, circuit, th)
        tape = None
    z = qsim.z_expectations_batch(out, n)

    def back(node):
        d_out = qsim.backprop_z_batch(out, n, node.grad)
        d_thetas, d_in = qsim.backprop_circuit_batch(tape, n, circuit, th, d_out)
        thetas.accumulate(d_thetas)
        amps.accumulate(d_in)

    return Var(z, (amps, thetas), back)


# ---------------------------------------------------------------------------
# the model variants
# ---------------------------------------------------------------------------

class QuantumField:
    """Full or dual-branch quantum radiance field."""

    def __init__(self, config: ModelConfig, rng):
        if config.variant not in ("full", "dual"):
            raise ValueError("QuantumField needs variant 'full' or 'dual'")
        self.config = config
        self.ansatz_config = config.ansatz()
        self.circuit = build_ansatz(self.ansatz_config)
        self.parity = parity_matrix(config.parity_sets, config.n)
        self.params = ParamStore()
        in_pos = 6 * config.l_pos
        in_view = 6 * config.l_view
        h = config.hidden
        if config.variant == "full":
            dims = (in_pos + in_view, h, h, h, 2**config.n)
            init_mlp(self.params, "enc", dims, rng)
        else:
            n_p, n_v = self.ansatz_config.n_p, self.ansatz_config.n_v
            init_mlp(self.params, "enc_pos", (in_pos, h, h, h, 2**n_p), rng)
            init_mlp(self.params, "enc_view", (in_view, h, h, h, 2**n_v), rng)
        self.params.add("thetas", identity_init(self.circuit))
        self.params.add("alphas", np.ones(4))

    def encode(self, pos: np.ndarray, dirs: np.ndarray) -> Var:
        """Map raw inputs to a batch of unit-norm amplitude rows."""
        cfg = self.config
        gp = positional_encoding(pos / cfg.scene_bound, cfg.l_pos)
        gv = positional_encoding(dirs, cfg.l_view)
        if cfg.variant == "full":
            feats = np.concatenate([gp, gv], axis=-1)
            raw = mlp_forward(self.params, "enc", feats, 4, final_relu=True)
            return normalize_rows(raw)
        a = normalize_rows(mlp_forward(self.params, "enc_pos", gp, 4, final_relu=True))
        b = normalize_rows(mlp_forward(self.params, "enc_view", gv, 4, final_relu=True))
        batch = pos.shape[0]
        n_p, n_v = self.ansatz_config.n_p, self.ansatz_config.n_v
        outer = a.reshape(batch, 2**n_p, 1) * b.reshape(batch, 1, 2**n_v)
        return outer.reshape(batch, 2**self.config.n)

    def forward(self, pos, dirs, noise: NoiseConfig | None = None, noise_rng=None):
        """Returns (rgb Var (B,3), sigma Var (B,)). Noise, when given, perturbs
        the circuit angles once per call and shrinks readout by (1-2p)."""
        amps = self.encode(np.asarray(pos, dtype=np.float64),
                           np.asarray(dirs, dtype=np.float64))
        thetas = self.params["thetas"]
        th_val = None
        if noise is not None and noise.gaussian_std > 0:
            th_val = perturb_thetas(thetas.value, noise.gaussian_std, noise_rng)
        z = circuit_z_node(amps, thetas, self.circuit, self.config.n, th_val)
        if noise is not None:
            z = z * (1.0 - 2.0 * noise.readout_p)
        raw = matmul(z, self.parity)
        return _scale_outputs(raw, self.params["alphas"], self.config.sigma_scale)


class ClassicalField:
    """Compact NeRF baseline: 8-layer trunk with a skip connection at layer 4,
    density head from position only, color head from features + view."""

    TRUNK_LAYERS = 8
    SKIP_AT = 4
    VIEW_WIDTH = 128

    def __init__(self, config: ModelConfig, rng):
        if config.variant != "classical":
            raise ValueError("ClassicalField needs variant 'classical'")
        self.config = config
        self.params = ParamStore()
        in_pos = 6 * config.l_pos
        in_view = 6 * config.l_view
        h = config.hidden
        for i in range(self.TRUNK_LAYERS):
            fin = in_pos if i == 0 else (h + in_pos if i == self.SKIP_AT else h)
            bound = 1.0 / np.sqrt(fin)
            self.params.add(f"trunk.w{i}", rng.uniform(-bound, bound, (fin, h)))
            self.params.add(f"trunk.b{i}", rng.uniform(-bound, bound, (h,)))
        init_mlp(self.params, "sigma", (h, 1), rng)
        init_mlp(self.params, "feat", (h, h), rng)
        init_mlp(self.params, "view", (h + in_view, self.VIEW_WIDTH), rng)
        init_mlp(self.params, "rgb", (self.VIEW_WIDTH, 3), rng)

    def forward(self, pos, dirs, noise=None, noise_rng=None):
        cfg = self.config
        gp = positional_encoding(np.asarray(pos) / cfg.scene_bound, cfg.l_pos)
        gv = positional_encoding(np.asarray(dirs, dtype=np.float64), cfg.l_view)
        h = None
        for i in range(self.TRUNK_LAYERS):
            x = gp if i == 0 else (concat([h, gp], axis=-1) if i == self.SKIP_AT else h)
            h = relu(affine(x, self.params[f"trunk.w{i}"], self.params[f"trunk.b{i}"]))
        sigma = relu(affine(h, self.params["sigma.w0"], self.params["sigma.b0"]))
        feat = affine(h, self.params["feat.w0"], self.params["feat.b0"])
        hv = relu(affine(concat([feat, gv], axis=-1), self.params["view.w0"],
                         self.params["view.b0"]))
        rgb = sigmoid(affine(hv, self.params["rgb.w0"], self.params["rgb.b0"]))
        return rgb, sigma.reshape(-1)


class ClassicalSurrogateField:
    """De-quantised control: encoder + ReLU + normalization as in the full
    model, then a plain MLP instead of the circuit."""

    def __init__(self, config: ModelConfig, rng):
        if config.variant != "classical-q":
            raise ValueError("ClassicalSurrogateField needs variant 'classical-q'")
        self.config = config
        self.params = ParamStore()
        in_pos = 6 * config.l_pos
        in_view = 6 * config.l_view
        h = config.hidden
        init_mlp(self.params, "enc", (in_pos + in_view, h, h, h, 2**config.n), rng)
        init_mlp(self.params, "head", (2**config.n, h, h, 4), rng)
        self.params.add("alphas", np.ones(4))

    def forward(self, pos, dirs, noise=None, noise_rng=None):
        cfg = self.config
        gp = positional_encoding(np.asarray(pos) / cfg.scene_bound, cfg.l_pos)
        gv = positional_encoding(np.asarray(dirs, dtype=np.float64), cfg.l_view)
        feats = np.concatenate([gp, gv], axis=-1)
        raw = mlp_forward(self.params, "enc", feats, 4, final_relu=True)
        amps = normalize_rows(raw)
        out = mlp_forward(self.params, "head", amps, 3, final_relu=False)
        return _scale_outputs(out, self.params["alphas"], cfg.sigma_scale)


def build_model(config: ModelConfig, rng_or_seed=0):
    rng = (rng_or_seed if isinstance(rng_or_seed, np.random.Generator)
           else np.random.default_rng(rng_or_seed))
    if config.variant in ("full", "dual"):
        return QuantumField(config, rng)
    if config.variant == "classical":
        return ClassicalField(config, rng)
    return ClassicalSurrogateField(config, rng)


def field_forward(inp: FieldInput, model, noise: NoiseConfig | None = None,
                  noise_rng=None) -> FieldOutput:
    """Single-point forward pass with validated input/output value types."""
    from .autodiff import no_grad
    with no_grad():
        rgb, sigma = model.forward(inp.position[None, :], inp.direction[None, :],
                                   noise=noise, noise_rng=noise_rng)
    return FieldOutput(rgb.value[0], float(sigma.value[0]))


def parameter_count(config: ModelConfig) -> dict:
    """Closed-form size accounting for a config (matches the constructors)."""
    in_pos, in_view = 6 * config.l_pos, 6 * config.l_view
    h = config.hidden
    counts = {"mlp": 0, "thetas": 0, "alphas": 0, "amplitudes": 0, "gates": 0}
    if config.variant == "full":
        counts["mlp"] = _mlp_param_count((in_pos + in_view, h, h, h, 2**config.n))
        acfg = config.ansatz()
        counts["gates"] = len(build_ansatz(acfg))
        counts["thetas"] = counts["gates"]
        counts["alphas"] = 4
        counts["amplitudes"] = 2**config.n
    elif config.variant == "dual":
        acfg = config.ansatz()
        counts["mlp"] = (_mlp_param_count((in_pos, h, h, h, 2**acfg.n_p))
                         + _mlp_param_count((in_view, h, h, h, 2**acfg.n_v)))
        counts["gates"] = len(build_ansatz(acfg))
        counts["thetas"] = counts["gates"]
        counts["alphas"] = 4
        counts["amplitudes"] = 2**acfg.n_p + 2**acfg.n_v
    elif config.variant == "classical":
        trunk = in_pos * h + h
        for i in range(1, ClassicalField.TRUNK_LAYERS):
            fin = h + in_pos if i == ClassicalField.SKIP_AT else h
            trunk += fin * h + h
        vw = ClassicalField.VIEW_WIDTH
        counts["mlp"] = (trunk + (h * 1 + 1) + (h * h + h)
                         + ((h + in_view) * vw + vw) + (vw * 3 + 3))
    else:  # classical-q
        counts["mlp"] = (_mlp_param_count((in_pos + in_view, h, h, h, 2**config.n))
                         + _mlp_param_count((2**config.n, h, h, 4)))
        counts["alphas"] = 4
        counts["amplitudes"] = 2**config.n
    counts["total"] = counts["mlp"] + counts["thetas"] + counts["alphas"]
    return counts


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# Layout (.npz): 'version' 0-d int; 'config' JSON string of ModelConfig;
# 'seed' 0-d int; one 'param/<name>' little-endian float64 array per
# ParamStore entry.

class CheckpointVersionError(RuntimeError):
    pass


def save_checkpoint(path, config: ModelConfig, params: ParamStore, seed: int):
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "config": np.array(config.to_json()),
        "seed": np.array(int(seed)),
    }
    for name, var in params.items():
        payload[f"param/{name}"] = np.ascontiguousarray(var.value, dtype="<f8")
    np.savez(path, **payload)


def load_checkpoint(path):
    """Returns (config, arrays, seed); raises CheckpointVersionError on a
    version this code does not understand."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version} != supported {CHECKPOINT_VERSION}")
        config = ModelConfig.from_json(str(data["config"]))
        seed = int(data["seed"])
        arrays = {k[len("param/"):]: np.asarray(data[k], dtype=np.float64)
                  for k in data.files if k.startswith("param/")}
    return config, arrays, seed


def load_model(path):
    """Rebuild a model from a checkpoint (params exactly as saved)."""
    config, arrays, seed = load_checkpoint(path)
    model = build_model(config, np.random.default_rng(seed))
    model.params.load_arrays(arrays)
    return model, seed
