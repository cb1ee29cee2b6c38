"""Optimization loop and experiment protocols.

Training follows the fixed recipe: Adam on ray batches of 64 with MSE loss,
per-group learning rates (encoder/circuit vs output-scaling), halving
milestones down to lr/8, evaluation on the test split every few epochs, and
early stopping as soon as the test PSNR drops. One epoch means one pass over
every training pixel. Also hosts the trainability studies: gradient-variance
sweeps over qubit counts, the output-scaling ablation, and the concentration
sweep of raw channel outputs.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import qsim, renderer
from .autodiff import ParamStore, backward
from .circuits import AnsatzConfig, build_ansatz
from .dataio import SceneDataset
from .field import (ModelConfig, build_model, default_parity_sets,
                    parity_matrix, save_checkpoint)

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "Adam",
    "MultiStepLR",
    "build_ray_bank",
    "init_train_state",
    "train_epoch",
    "evaluate",
    "early_stop_check",
    "fit",
    "gradient_variance_study",
    "scaling_ablation",
    "concentration_study",
]


@dataclass
class TrainConfig:
    lr_main: float = 5e-4
    lr_scale: float = 1e-2
    lr_decay: float = 0.5
    milestones: tuple[int, ...] = (15, 30, 45)
    batch_rays: int = 64
    n_samples: int = 64
    max_epochs: int = 50
    eval_every: int = 5
    seed: int = 0
    max_steps: int | None = None
    t_near: float = renderer.T_NEAR
    t_far: float = renderer.T_FAR

    @property
    def lr_floor_main(self) -> float:
        return self.lr_main * self.lr_decay ** len(self.milestones)

    @property
    def lr_floor_scale(self) -> float:
        return self.lr_scale * self.lr_decay ** len(self.milestones)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries param norms and the offending batch."""

    def __init__(self, message: str, param_norms: dict, batch_index: int):
        super().__init__(message)
        self.param_norms = param_norms
        self.batch_index = batch_index


class Adam:
    """Bias-corrected Adam over parameter groups with per-group learning rates."""

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        # groups: iterable of (list_of_vars, lr)
        self.groups = [{"params": list(ps), "lr": float(lr)} for ps, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [[np.zeros_like(p.value) for p in g["params"]] for g in self.groups]
        self._v = [[np.zeros_like(p.value) for p in g["params"]] for g in self.groups]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for gi, group in enumerate(self.groups):
            lr = group["lr"]
            for pi, p in enumerate(group["params"]):
                g = p.grad if p.grad is not None else 0.0
                m = self._m[gi][pi]
                v = self._v[gi][pi]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * np.square(g)
                p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class MultiStepLR:
    """Multiplies each group's base lr by factor^(#milestones passed)."""

    def __init__(self, adam: Adam, milestones, factor: float = 0.5):
        self.adam = adam
        self.milestones = tuple(sorted(milestones))
        self.factor = factor
        self._base = [g["lr"] for g in adam.groups]

    def apply(self, epoch: int):
        k = sum(1 for m in self.milestones if epoch >= m)
        for g, base in zip(self.adam.groups, self._base):
            g["lr"] = base * self.factor**k

    def lrs(self) -> list[float]:
        return [g["lr"] for g in self.adam.groups]


@dataclass
class RayBank:
    """Flattened training rays: one row per pixel across all frames."""

    origins: np.ndarray
    dirs: np.ndarray
    gt: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]


def build_ray_bank(frames, camera_angle_x: float,
                   t_near: float = renderer.T_NEAR,
                   t_far: float = renderer.T_FAR) -> RayBank:
    origins, dirs, gt = [], [], []
    for frame in frames:
        h, w = frame.image.shape[:2]
        o, d = renderer.generate_rays(frame.pose, camera_angle_x, h, w,
                                      t_near=t_near, t_far=t_far)
        origins.append(o)
        dirs.append(d)
        gt.append(frame.image.reshape(-1, 3))
    return RayBank(np.concatenate(origins), np.concatenate(dirs),
                   np.concatenate(gt))


@dataclass
class TrainState:
    model: object
    adam: Adam
    scheduler: MultiStepLR
    sample_rng: np.random.Generator
    shuffle_rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_test_psnr: float = -math.inf
    stop: bool = False
    psnr_history: list = dc_field(default_factory=list)
    losses: list = dc_field(default_factory=list)


def _param_groups(params: ParamStore, cfg: TrainConfig, learn_scale: bool = True):
    scale = [v for k, v in params.items() if k == "alphas"]
    main = [v for k, v in params.items() if k != "alphas"]
    groups = [(main, cfg.lr_main)]
    if scale and learn_scale:
        groups.append((scale, cfg.lr_scale))
    return groups


def init_train_state(model, cfg: TrainConfig, learn_scale: bool = True) -> TrainState:
    adam = Adam(_param_groups(model.params, cfg, learn_scale))
    scheduler = MultiStepLR(adam, cfg.milestones, cfg.lr_decay)
    master = np.random.default_rng(cfg.seed)
    shuffle_rng, sample_rng = master.spawn(2)
    return TrainState(model, adam, scheduler, sample_rng, shuffle_rng)


def train_epoch(state: TrainState, bank: RayBank, cfg: TrainConfig,
                on_step=None) -> float:
    """One shuffled pass over the ray bank (or until cfg.max_steps).

    Returns the mean batch loss of the epoch; raises TrainingDiverged on a
    non-finite loss."""
    state.epoch += 1
    state.scheduler.apply(state.epoch)
    model = state.model
    perm = state.shuffle_rng.permutation(len(bank))
    epoch_losses = []
    for lo in range(0, len(perm), cfg.batch_rays):
        idx = perm[lo:lo + cfg.batch_rays]
        color = renderer.render_batch(model, bank.origins[idx], bank.dirs[idx],
                                      cfg.n_samples, rng=state.sample_rng,
                                      t_near=cfg.t_near, t_far=cfg.t_far)
        loss = renderer.mse_loss(color, bank.gt[idx])
        value = float(loss.value)
        if not math.isfinite(value):
            norms = {k: float(np.linalg.norm(v.value)) for k, v in model.params.items()}
            raise TrainingDiverged(
                f"non-finite loss at step {state.step}", norms, state.step)
        model.params.zero_grad()
        backward(loss)
        state.adam.step()
        state.step += 1
        epoch_losses.append(value)
        state.losses.append(value)
        if on_step is not None:
            on_step(state.step, value)
        if cfg.max_steps is not None and state.step >= cfg.max_steps:
            break
    return float(np.mean(epoch_losses))


def evaluate(frames, render_frame, threads: int = 1):
    """PSNR/SSIM of ``render_frame(frame)`` against each frame's ground truth.

    Pure: repeated calls give identical results. Returns
    (mean_psnr, mean_ssim, per-frame rows)."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(render_frame, frames))
    else:
        images = [render_frame(f) for f in frames]
    rows = []
    for i, (frame, img) in enumerate(zip(frames, images)):
        rows.append((i, renderer.psnr(frame.image, img),
                     renderer.ssim(frame.image, img)))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    return mean_psnr, mean_ssim, rows


def early_stop_check(psnr_history) -> bool:
    """Stop once the latest test PSNR is below the previous evaluation's."""
    if len(psnr_history) < 2:
        return False
    return psnr_history[-1] < psnr_history[-2]


def _frame_renderer(model, camera_angle_x, cfg: TrainConfig, noise=None,
                    noise_rng=None):
    def render_frame(frame):
        h, w = frame.image.shape[:2]
        return renderer.render_image(model, frame.pose, camera_angle_x, h, w,
                                     n_samples=cfg.n_samples, noise=noise,
                                     noise_rng=noise_rng, t_near=cfg.t_near,
                                     t_far=cfg.t_far)
    return render_frame


def fit(model, dataset: SceneDataset, cfg: TrainConfig, out_dir=None,
        early_stop: bool = True, eval_split: str = "test",
        target_psnr: float | None = None, threads: int = 1,
        learn_scale: bool = True, quiet: bool = True) -> dict:
    """Run the full protocol; returns a history dict.

    ``eval_split`` may be 'train' for single-frame overfit probes;
    ``target_psnr`` stops as soon as an evaluation reaches it; ``max_steps``
    in the config caps total Adam steps for desk-scale budgets.
    """
    out = Path(out_dir) if out_dir is not None else None
    steps_writer = evals_writer = None
    steps_fh = evals_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        steps_fh = open(out / "steps.csv", "w", newline="")
        steps_writer = csv.writer(steps_fh)
        steps_writer.writerow(["step", "loss"])
        evals_fh = open(out / "evals.csv", "w", newline="")
        evals_writer = csv.writer(evals_fh)
        evals_writer.writerow(["epoch", "test_psnr", "test_ssim"])

    state = init_train_state(model, cfg, learn_scale)
    bank = build_ray_bank(dataset.train, dataset.camera_angle_x,
                          cfg.t_near, cfg.t_far)
    eval_frames = dataset.test if eval_split == "test" else dataset.train
    render_frame = _frame_renderer(model, dataset.camera_angle_x, cfg)
    history = {"loss": state.losses, "evals": [], "stopped_epoch": None}

    def log_step(step, value):
        if steps_writer is not None:
            steps_writer.writerow([step, repr(value)])
        if not quiet and step % 100 == 0:
            print(f"step {step}: loss {value:.6f}")

    def run_eval():
        mean_psnr, mean_ssim, rows = evaluate(eval_frames, render_frame, threads)
        state.psnr_history.append(mean_psnr)
        state.best_test_psnr = max(state.best_test_psnr, mean_psnr)
        history["evals"].append((state.epoch, mean_psnr, mean_ssim))
        if evals_writer is not None:
            evals_writer.writerow([state.epoch, repr(mean_psnr), repr(mean_ssim)])
            save_checkpoint(out / f"checkpoint_epoch{state.epoch}.npz",
                            model.config, model.params, cfg.seed)
        if not quiet:
            print(f"epoch {state.epoch}: PSNR {mean_psnr:.2f} SSIM {mean_ssim:.4f}")
        return mean_psnr

    try:
        while state.epoch < cfg.max_epochs and not state.stop:
            train_epoch(state, bank, cfg, on_step=log_step)
            budget_done = (cfg.max_steps is not None and state.step >= cfg.max_steps)
            if state.epoch % cfg.eval_every == 0 or budget_done \
                    or state.epoch == cfg.max_epochs:
                mean_psnr = run_eval()
                if target_psnr is not None and mean_psnr >= target_psnr:
                    state.stop = True
                elif early_stop and early_stop_check(state.psnr_history):
                    state.stop = True
            if budget_done:
                break
        if not history["evals"]:
            run_eval()
        history["stopped_epoch"] = state.epoch
        history["best_psnr"] = state.best_test_psnr
        history["final_psnr"] = state.psnr_history[-1]
        if out is not None:
            save_checkpoint(out / "final.npz", model.config, model.params,
                            cfg.seed)
    finally:
        for fh in (steps_fh, evals_fh):
            if fh is not None:
                fh.close()
    return history


# ---------------------------------------------------------------------------
# trainability studies
# ---------------------------------------------------------------------------

def gradient_variance_study(dataset: SceneDataset, variant: str, qubit_counts,
                            n_inits: int = 20, batches_per_init: int = 20,
                            cfg: TrainConfig | None = None, hidden: int = 256,
                            seed: int = 0, sigma_scale: float = 1.0) -> list[dict]:
    """Variance of circuit-angle gradients of the ray-batch MSE loss.

    Per init: a freshly initialized model with angles redrawn uniform in
    [0, 2pi); per batch: random rays, full forward/backward. For each init the
    per-angle variance is taken across its batches and averaged over angles;
    the reported number is the mean of those per-init variances (pooling
    across inits instead is dominated by cross-init scale dispersion).

    ``sigma_scale`` defaults to 1 here (unlike training): the density
    stretch is a rendering constant, and letting it amplify one channel's
    gradients 25x buries the register-size trend under that channel's
    liveliness noise."""
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed)
    bank = build_ray_bank(dataset.train, dataset.camera_angle_x,
                          cfg.t_near, cfg.t_far)
    rows = []
    for n in qubit_counts:
        model_cfg = ModelConfig(variant=variant, n=n, hidden=hidden,
                                sigma_scale=sigma_scale)
        per_init = []
        for _ in range(n_inits):
            init_rng, theta_rng, batch_rng, strat_rng = rng.spawn(4)
            model = build_model(model_cfg, init_rng)
            thetas = model.params["thetas"]
            thetas.value = theta_rng.uniform(0.0, 2.0 * np.pi,
                                             thetas.value.shape)
            grads = []
            for _ in range(batches_per_init):
                idx = batch_rng.choice(len(bank), size=cfg.batch_rays,
                                       replace=False)
                color = renderer.render_batch(model, bank.origins[idx],
                                              bank.dirs[idx], cfg.n_samples,
                                              rng=strat_rng, t_near=cfg.t_near,
                                              t_far=cfg.t_far)
                loss = renderer.mse_loss(color, bank.gt[idx])
                model.params.zero_grad()
                backward(loss)
                grads.append(thetas.grad.copy())
            per_init.append(np.stack(grads).var(axis=0).mean())
        rows.append({"qubits": n, "variant": variant,
                     "variance": float(np.mean(per_init))})
    return rows


def scaling_ablation(dataset: SceneDataset, model_cfg: ModelConfig,
                     cfg: TrainConfig, steps: int):
    """Twin runs from identical initial parameters: learnable output scaling
    vs scaling frozen at 1. Returns (psnr_with, psnr_without) on the test
    split after the shared step budget."""
    results = {}
    for learn_scale in (True, False):
        model = build_model(model_cfg, np.random.default_rng(cfg.seed))
        run_cfg = replace(cfg, max_steps=steps, max_epochs=10**9)
        hist = fit(model, dataset, run_cfg, early_stop=False,
                   learn_scale=learn_scale)
        if not learn_scale:
            if not np.all(model.params["alphas"].value == 1.0):
                raise AssertionError("frozen scaling drifted from 1")
        results[learn_scale] = hist["final_psnr"]
    return results[True], results[False]


def concentration_study(qubit_counts, n_draws: int = 1000, ell: int = 1,
                        seed: int = 0) -> list[dict]:
    """Sample variance of raw channel outputs under random angles and random
    embedded inputs, per qubit count (full-register ansatz)."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in qubit_counts:
        circuit = build_ansatz(AnsatzConfig("full", n, ell))
        v = np.abs(rng.standard_normal((n_draws, 2**n)))
        inputs = v / np.linalg.norm(v, axis=1, keepdims=True)
        thetas = rng.uniform(0.0, 2.0 * np.pi, (n_draws, circuit.n_params))
        out = qsim.run_circuit_batch(inputs, n, circuit, thetas)
        z = qsim.z_expectations_batch(out, n)
        raw = z @ parity_matrix(default_parity_sets(n), n)
        rows.append({"qubits": n, "variance": float(raw.var(axis=0).mean())})
    return rows
