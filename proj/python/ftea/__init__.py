"""Test-time adaptation lab for RGB-D pixel-embedding segmentation."""

from ._core import (
    adapt,
    evaluate,
    evaluate_masks,
    gen_dataset,
    gen_scene,
    hungarian,
    lr_at,
    meanshift,
    pretrain,
)

__all__ = [
    "adapt",
    "evaluate",
    "evaluate_masks",
    "gen_dataset",
    "gen_scene",
    "hungarian",
    "lr_at",
    "meanshift",
    "pretrain",
]
