"""Discrete-unit speech classification with a frozen causal unit LM,
trainable prompt prefixes, a learned verbalizer, and patient-level
voting over segment predictions.

Submodules are imported explicitly (`from unitprompt import featio`);
this file stays import-light so the CLI can pin thread env vars before
numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "cli",
    "datasets",
    "errors",
    "featio",
    "inference",
    "kernels",
    "prompts",
    "quantizer",
    "trainer",
    "ulm",
    "verbalizer",
]
