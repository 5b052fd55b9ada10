"""Shape-guided diffusion editing on a toy text-conditional denoiser.

Thin Python surface over the C++ core: tokenization, the noise schedule and
DDIM steps, the inside/outside attention constraint, the full edit loop, the
synthetic scene generator, and the shape-faithfulness metrics.
"""

from sgdm._core import (
    ConstraintMode,
    Denoiser,
    DenoiserConfig,
    MaskLevel,
    NoiseSchedule,
    PromptPair,
    SgdmError,
    TokenizedPrompt,
    TrainConfig,
    Vocabulary,
    cfg_combine,
    constrain_cross,
    constrain_self,
    ddim_invert_step,
    ddim_step,
    default_vocabulary,
    detokenize,
    downsample_mask,
    kw_miou,
    make_grid_timesteps,
    make_schedule,
    miou,
    null_prompt,
    oracle_segment,
    q_sample,
    read_pgm,
    read_ppm,
    reweight_cross,
    run_edit,
    sample_scene_dict,
    tokenize,
    train_on_scenes,
    write_pgm,
    write_ppm,
)

__all__ = [
    "ConstraintMode",
    "Denoiser",
    "DenoiserConfig",
    "MaskLevel",
    "NoiseSchedule",
    "PromptPair",
    "SgdmError",
    "TokenizedPrompt",
    "TrainConfig",
    "Vocabulary",
    "cfg_combine",
    "constrain_cross",
    "constrain_self",
    "ddim_invert_step",
    "ddim_step",
    "default_vocabulary",
    "detokenize",
    "downsample_mask",
    "kw_miou",
    "make_grid_timesteps",
    "make_schedule",
    "miou",
    "null_prompt",
    "oracle_segment",
    "q_sample",
    "read_pgm",
    "read_ppm",
    "reweight_cross",
    "run_edit",
    "sample_scene_dict",
    "tokenize",
    "train_on_scenes",
    "write_pgm",
    "write_ppm",
]
