"""Portrait light diffusion: rendering, diffuseness, maps, and learned diffusion."""

from ._core import (
    LightDiffError,
    Params,
    compute_metrics,
    diffuse_convolve,
    gen_procedural_env,
    generate_dataset,
    gini,
    render,
    spec_shadow,
)

__all__ = [
    "LightDiffError",
    "Params",
    "compute_metrics",
    "diffuse_convolve",
    "gen_procedural_env",
    "generate_dataset",
    "gini",
    "render",
    "spec_shadow",
]
