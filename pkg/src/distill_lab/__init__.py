"""Desk-scale diffusion distillation lab.

Deterministic DDIM inversion/sampling with classifier-free guidance,
self-attention K/V injection for reference-guided view enhancement, and
score / state distillation into a learnable texture field, all on a
procedurally generated toy world.
"""

__version__ = "0.1.0"
