"""Command-line entry point.

Subcommands: train, render, eval, info, study. Each accepts a declarative
key=value config file (--config) that fully describes a run; command-line
flags override file values. Unknown config keys are rejected and every path
is checked before any work starts. The environment variable QNERF_DATA_DIR
is used as the dataset root when --scene names a directory that does not
exist as given.

Exit codes: 0 success, 2 bad configuration, 3 training diverged (non-finite
loss), 4 unreadable checkpoint version.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import renderer
from .circuits import AnsatzConfig, build_ansatz
from .dataio import SceneLoadError, SceneFormatError, load_blender
from .field import (CheckpointVersionError, ModelConfig, build_model,
                    load_model, parameter_count)
from .noise import NoiseConfig, fidelity_study
from .trainer import (TrainConfig, TrainingDiverged, concentration_study,
                      evaluate, fit, gradient_variance_study, scaling_ablation)

DATA_DIR_ENV = "QNERF_DATA_DIR"


class ConfigError(Exception):
    pass


def _read_kv_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        values[key] = value
    return values


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_KEY_TYPES = {
    "scene": str,
    "variant": str,
    "qubits": int,
    "ell": int,
    "seed": int,
    "out": str,
    "threads": int,
    "downscale": int,
    "hidden": int,
    "sigma_scale": float,
    "scene_bound": float,
    "max_epochs": int,
    "eval_every": int,
    "batch_rays": int,
    "n_samples": int,
    "max_steps": int,
    "lr_main": float,
    "lr_scale": float,
    "checkpoint": str,
    "pose_index": int,
    "pose_file": str,
    "noise_sigma": float,
    "readout_p": float,
    "noise_seed": int,
    "kind": str,
    "sigmas": _float_list,
    "qubit_list": _int_list,
    "runs": int,
    "inits": int,
    "batches": int,
    "draws": int,
    "steps": int,
    "quiet": _bool,
}

_COMMAND_KEYS = {
    "train": {"scene", "variant", "qubits", "ell", "seed", "out", "threads",
              "downscale", "hidden", "sigma_scale", "scene_bound", "max_epochs",
              "eval_every", "batch_rays", "n_samples", "max_steps", "lr_main",
              "lr_scale", "quiet"},
    "render": {"checkpoint", "scene", "pose_index", "pose_file", "out",
               "noise_sigma", "readout_p", "noise_seed", "downscale",
               "n_samples", "threads"},
    "eval": {"checkpoint", "scene", "out", "downscale", "n_samples", "threads"},
    "info": {"variant", "qubits", "ell"},
    "study": {"kind", "scene", "variant", "qubits", "ell", "seed", "out",
              "threads", "downscale", "hidden", "sigmas", "qubit_list", "runs",
              "inits", "batches", "draws", "steps", "n_samples", "batch_rays",
              "sigma_scale"},
}


def _merge_config(command: str, args: argparse.Namespace) -> dict:
    allowed = _COMMAND_KEYS[command]
    merged: dict = {}
    if args.config is not None:
        raw = _read_kv_file(Path(args.config))
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(
                f"unknown config keys for {command}: {sorted(unknown)}; "
                f"allowed: {sorted(allowed)}")
        for key, text in raw.items():
            try:
                merged[key] = _KEY_TYPES[key](text)
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r}: {e}") from e
    for key in allowed:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    return merged


def _resolve_scene(cfg: dict) -> Path:
    if "scene" not in cfg:
        raise ConfigError("a scene path is required (--scene or config key)")
    scene = Path(cfg["scene"])
    if not scene.is_dir():
        root = os.environ.get(DATA_DIR_ENV)
        if root and (Path(root) / scene).is_dir():
            scene = Path(root) / scene
        else:
            raise ConfigError(f"scene directory not found: {cfg['scene']}")
    return scene


def _out_dir(cfg: dict, command: str) -> Path:
    out = Path(cfg.get("out", f"qnerf_out/{command}"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output dir {out}: {e}") from e
    return out


def _model_config(cfg: dict) -> ModelConfig:
    kwargs = {}
    if "variant" in cfg:
        kwargs["variant"] = cfg["variant"]
    if "qubits" in cfg:
        kwargs["n"] = cfg["qubits"]
    if "ell" in cfg:
        kwargs["ell"] = cfg["ell"]
    for key in ("hidden", "sigma_scale", "scene_bound"):
        if key in cfg:
            kwargs[key] = cfg[key]
    try:
        return ModelConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _train_config(cfg: dict) -> TrainConfig:
    kwargs = {}
    for key in ("seed", "max_epochs", "eval_every", "batch_rays", "n_samples",
                "max_steps", "lr_main", "lr_scale"):
        if key in cfg:
            kwargs[key] = cfg[key]
    return TrainConfig(**kwargs)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _merge_config("train", args)
    scene = _resolve_scene(cfg)
    out = _out_dir(cfg, "train")
    dataset = load_blender(scene, downscale=cfg.get("downscale", 1))
    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    model = build_model(model_cfg, np.random.default_rng(train_cfg.seed))
    history = fit(model, dataset, train_cfg, out_dir=out,
                  threads=cfg.get("threads", 1), quiet=cfg.get("quiet", True))
    print(f"finished at epoch {history['stopped_epoch']}: "
          f"test PSNR {history['final_psnr']:.2f} dB "
          f"(best {history['best_psnr']:.2f}); artifacts in {out}")
    return 0


def _noise_from(cfg: dict) -> NoiseConfig | None:
    sigma = cfg.get("noise_sigma", 0.0)
    p = cfg.get("readout_p", 0.0)
    if sigma == 0.0 and p == 0.0 and "noise_sigma" not in cfg and "readout_p" not in cfg:
        return None
    try:
        return NoiseConfig(gaussian_std=sigma, readout_p=p,
                           seed=cfg.get("noise_seed", 0))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_render(args) -> int:
    cfg = _merge_config("render", args)
    if "checkpoint" not in cfg:
        raise ConfigError("render needs a checkpoint")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    out = _out_dir(cfg, "render")
    if ("pose_index" in cfg) == ("pose_file" in cfg):
        raise ConfigError("render needs exactly one of pose_index / pose_file")
    model, _seed = load_model(ckpt)
    noise = _noise_from(cfg)
    noise_rng = noise.rng() if noise is not None else None
    n_samples = cfg.get("n_samples", 64)
    if "pose_index" in cfg:
        scene = _resolve_scene(cfg)
        dataset = load_blender(scene, downscale=cfg.get("downscale", 1))
        idx = cfg["pose_index"]
        if not (0 <= idx < len(dataset.test)):
            raise ConfigError(f"pose_index {idx} out of range "
                              f"(test split has {len(dataset.test)} frames)")
        frame = dataset.test[idx]
        h, w = frame.image.shape[:2]
        image = renderer.render_image(model, frame.pose, dataset.camera_angle_x,
                                      h, w, n_samples=n_samples, noise=noise,
                                      noise_rng=noise_rng)
        gt = frame.image
        name = f"render_{idx:03d}.png"
    else:
        pose_path = Path(cfg["pose_file"])
        if not pose_path.is_file():
            raise ConfigError(f"pose file not found: {pose_path}")
        payload = json.loads(pose_path.read_text())
        pose = np.asarray(payload["transform_matrix"], dtype=np.float64)
        angle = float(payload["camera_angle_x"])
        h = w = int(payload.get("size", 100))
        image = renderer.render_image(model, pose, angle, h, w,
                                      n_samples=n_samples, noise=noise,
                                      noise_rng=noise_rng)
        gt, name = None, "render.png"
    out_path = out / name
    Image.fromarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8)).save(out_path)
    if gt is not None:
        print(f"PSNR {renderer.psnr(gt, image):.4f} dB")
    print(f"wrote {out_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _merge_config("eval", args)
    if "checkpoint" not in cfg:
        raise ConfigError("eval needs a checkpoint")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    scene = _resolve_scene(cfg)
    out = _out_dir(cfg, "eval")
    dataset = load_blender(scene, downscale=cfg.get("downscale", 1))
    model, _seed = load_model(ckpt)
    n_samples = cfg.get("n_samples", 64)

    def render_frame(frame):
        h, w = frame.image.shape[:2]
        return renderer.render_image(model, frame.pose, dataset.camera_angle_x,
                                     h, w, n_samples=n_samples)

    mean_psnr, mean_ssim, rows = evaluate(dataset.test, render_frame,
                                          threads=cfg.get("threads", 1))
    _write_csv(out / "metrics.csv", ["image", "psnr", "ssim"],
               [(i, repr(p), repr(s)) for i, p, s in rows])
    print(f"test frames: {len(rows)}  mean PSNR {mean_psnr:.4f} dB  "
          f"mean SSIM {mean_ssim:.4f}")
    return 0


def cmd_info(args) -> int:
    cfg = _merge_config("info", args)
    variant = cfg.get("variant", "full")
    try:
        model_cfg = ModelConfig(variant=variant, n=cfg.get("qubits", 8),
                                ell=cfg.get("ell"))
        counts = parameter_count(model_cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"variant      {variant}")
    print(f"qubits       {model_cfg.n}")
    print(f"ell          {model_cfg.ell}")
    print(f"amplitudes   {counts['amplitudes']}")
    print(f"parameters   {counts['total']} ({counts['total'] / 1000:.0f}k; "
          f"mlp {counts['mlp']}, circuit {counts['thetas']}, "
          f"scaling {counts['alphas']})")
    print(f"gates        {counts['gates']}")
    return 0


def _dual_product_inputs(n: int, runs: int, rng) -> np.ndarray:
    half = n // 2
    a = np.abs(rng.standard_normal((runs, 2**half)))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.abs(rng.standard_normal((runs, 2**(n - half))))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return np.einsum("ri,rj->rij", a, b).reshape(runs, 2**n)


def cmd_study(args) -> int:
    cfg = _merge_config("study", args)
    kind = cfg.get("kind")
    if kind not in ("fidelity", "gradvar", "concentration", "scaling-ablation"):
        raise ConfigError("study kind must be one of: fidelity, gradvar, "
                          "concentration, scaling-ablation")
    out = _out_dir(cfg, f"study_{kind}")
    seed = cfg.get("seed", 0)

    if kind == "fidelity":
        variant = cfg.get("variant", "full")
        n = cfg.get("qubits", 8)
        runs = cfg.get("runs", 50)
        sigmas = cfg.get("sigmas", (0.01, 0.05, 0.1))
        acfg = AnsatzConfig(variant, n, cfg.get("ell"))
        circuit = build_ansatz(acfg)
        rows = []
        for sigma in sigmas:
            rng = np.random.default_rng(seed)
            inputs = (_dual_product_inputs(n, runs, rng)
                      if variant == "dual" else None)
            study = fidelity_study(circuit, NoiseConfig(gaussian_std=sigma),
                                   n_runs=runs, rng=rng, inputs=inputs)
            rows += [(i, sigma, repr(float(f)))
                     for i, f in enumerate(study.samples)]
            print(f"sigma {sigma}: mean fidelity {study.mean:.4f} "
                  f"(min {study.min:.4f})")
        _write_csv(out / "fidelity.csv", ["run", "sigma", "fidelity"], rows)
    elif kind == "gradvar":
        scene = _resolve_scene(cfg)
        dataset = load_blender(scene, downscale=cfg.get("downscale", 1))
        variant = cfg.get("variant", "full")
        qubits = cfg.get("qubit_list", (4, 6, 8))
        rows = gradient_variance_study(
            dataset, variant, qubits, n_inits=cfg.get("inits", 20),
            batches_per_init=cfg.get("batches", 20),
            hidden=cfg.get("hidden", 256), seed=seed,
            sigma_scale=cfg.get("sigma_scale", 1.0))
        _write_csv(out / "gradvar.csv", ["qubits", "variant", "variance"],
                   [(r["qubits"], r["variant"], repr(r["variance"])) for r in rows])
        for r in rows:
            print(f"n={r['qubits']}: gradient variance {r['variance']:.3e}")
    elif kind == "concentration":
        qubits = cfg.get("qubit_list", (4, 6, 8, 10))
        rows = concentration_study(qubits, n_draws=cfg.get("draws", 1000),
                                   seed=seed)
        _write_csv(out / "concentration.csv", ["qubits", "variance"],
                   [(r["qubits"], repr(r["variance"])) for r in rows])
        for r in rows:
            print(f"n={r['qubits']}: output variance {r['variance']:.3e}")
    else:  # scaling-ablation
        scene = _resolve_scene(cfg)
        dataset = load_blender(scene, downscale=cfg.get("downscale", 1))
        model_cfg = _model_config(cfg)
        train_cfg = _train_config(cfg)
        steps = cfg.get("steps", 500)
        with_scale, without = scaling_ablation(dataset, model_cfg, train_cfg,
                                               steps)
        _write_csv(out / "ablation.csv", ["arm", "psnr"],
                   [("learnable", repr(with_scale)), ("frozen", repr(without))])
        print(f"learnable scaling: {with_scale:.2f} dB; frozen: {without:.2f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnerf",
        description="Train and analyze hybrid quantum-classical radiance fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)

    p_train = sub.add_parser("train", help="optimize a model on a scene")
    common(p_train)
    p_train.add_argument("--scene")
    p_train.add_argument("--variant", choices=("full", "dual", "classical",
                                               "classical-q"))
    p_train.add_argument("--qubits", type=int)
    p_train.add_argument("--ell", type=int)
    p_train.add_argument("--max-steps", dest="max_steps", type=int)
    p_train.add_argument("--max-epochs", dest="max_epochs", type=int)
    p_train.add_argument("--downscale", type=int)

    p_render = sub.add_parser("render", help="render one view from a checkpoint")
    common(p_render)
    p_render.add_argument("--checkpoint")
    p_render.add_argument("--scene")
    p_render.add_argument("--pose-index", dest="pose_index", type=int)
    p_render.add_argument("--pose-file", dest="pose_file")
    p_render.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p_render.add_argument("--readout-p", dest="readout_p", type=float)
    p_render.add_argument("--noise-seed", dest="noise_seed", type=int)
    p_render.add_argument("--downscale", type=int)

    p_eval = sub.add_parser("eval", help="metrics over the whole test split")
    common(p_eval)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--scene")
    p_eval.add_argument("--downscale", type=int)

    p_info = sub.add_parser("info", help="amplitude/parameter/gate accounting")
    p_info.add_argument("--config", help="key=value configuration file")
    p_info.add_argument("--variant", choices=("full", "dual", "classical",
                                              "classical-q"))
    p_info.add_argument("--qubits", type=int)
    p_info.add_argument("--ell", type=int)

    p_study = sub.add_parser("study", help="noise / trainability studies")
    common(p_study)
    p_study.add_argument("--kind", choices=("fidelity", "gradvar",
                                            "concentration", "scaling-ablation"))
    p_study.add_argument("--scene")
    p_study.add_argument("--variant", choices=("full", "dual"))
    p_study.add_argument("--qubits", type=int)
    p_study.add_argument("--ell", type=int)
    p_study.add_argument("--steps", type=int)
    p_study.add_argument("--downscale", type=int)
    return parser


_DISPATCH = {
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "info": cmd_info,
    "study": cmd_study,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SceneLoadError, SceneFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        print(f"  batch index: {e.batch_index}", file=sys.stderr)
        for name, norm in e.param_norms.items():
            print(f"  |{name}| = {norm:.3e}", file=sys.stderr)
        return 3
    except CheckpointVersionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
