"""Two-prompt fork sampling for match-cut video generation."""

from ._core import (
    Error,
    IoError,
    NumericalError,
    Session,
    ShapeError,
    ValidationError,
    apply_tau,
    assemble_matchcut,
    ddim_step,
    default_config,
    evaluate,
    generate,
    generate_single,
    load_video,
    motion_consistency,
    num_classes,
    perceptual_distance,
    render_scene,
    save_video,
    schedule_tables,
    ssim,
    train_toy_assets,
    v2v,
    validate_config,
)

__all__ = [
    "Error",
    "IoError",
    "NumericalError",
    "Session",
    "ShapeError",
    "ValidationError",
    "apply_tau",
    "assemble_matchcut",
    "config",
    "ddim_step",
    "default_config",
    "evaluate",
    "generate",
    "generate_single",
    "load_video",
    "motion_consistency",
    "num_classes",
    "perceptual_distance",
    "render_scene",
    "save_video",
    "schedule_tables",
    "ssim",
    "train_toy_assets",
    "v2v",
    "validate_config",
]


def config(**overrides):
    """Default fork config with keyword overrides; nested dicts are merged."""
    cfg = default_config()
    if "schedule" in overrides:
        cfg.pop("total_steps", None)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    validate_config(cfg)
    return cfg
