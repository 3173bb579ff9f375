"""Uncertainty-gated knowledge fusion for visual question answering."""

from ._kvqa import (
    KvqaError,
    analyze,
    caption_similarity,
    evaluate,
    sentence_uncertainty,
    synthesize,
    train,
    vqa_accuracy,
)

__all__ = [
    "KvqaError",
    "analyze",
    "caption_similarity",
    "evaluate",
    "sentence_uncertainty",
    "synthesize",
    "train",
    "vqa_accuracy",
]
