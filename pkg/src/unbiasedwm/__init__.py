"""Unbiased watermarking for autoregressive language models.

Reweighting rules (delta, gamma and red-list baselines), keyed watermark
codes, watermarked generation, maximin likelihood-ratio detection and the
experiment harness behind the ``unbiasedwm`` command.
"""
from .detect import (DEFAULT_GRID, DetectionReport, green_z_score, gumbel_scores, llr_scores,
                     maximin_grid, maximin_scores, p_value_bound, replay_and_score, threshold)
from .generate import Transcript, generate, generate_plain, read_transcripts, write_transcripts
from .keyed import CodeHistory, ContextCode, WatermarkKey, context_code, derive_code
from .models import LanguageModel, NGramLM, TableLM, UniformLM, load_model
from .prob import SamplingPolicy, Vocabulary, apply_policy
from .reweight import Reweighter, make_reweighter, verify_unbiased

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_GRID", "DetectionReport", "green_z_score", "gumbel_scores", "llr_scores",
    "maximin_grid", "maximin_scores", "p_value_bound", "replay_and_score", "threshold",
    "Transcript", "generate", "generate_plain", "read_transcripts", "write_transcripts",
    "CodeHistory", "ContextCode", "WatermarkKey", "context_code", "derive_code",
    "LanguageModel", "NGramLM", "TableLM", "UniformLM", "load_model",
    "SamplingPolicy", "Vocabulary", "apply_policy",
    "Reweighter", "make_reweighter", "verify_unbiased",
]
