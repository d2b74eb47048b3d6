"""Desk-scale speech classification workbench.

Subpackages:
    autodiff  - reverse-mode automatic differentiation and Adam
    features  - handcrafted acoustic features (MFCC, F0, CQT)
    models    - classifiers and the contrastive speech encoder
    losses    - cross-entropy, soft-weighted cross-entropy, contrastive
    training  - supervised and self-supervised training loops
    data      - WAV I/O, synthetic corpus generation, split protocol
    cli       - experiment runner
"""

__version__ = "0.1.0"
