"""Synthetic navigation worlds, navigation hints and a small jointly trained agent.

Modules:
    world: graph worlds, candidate views and instruction-aligned episodes.
    hints: landmark extraction, ambiguity categories, hint rendering and parsing.
    metrics: NE, SR, SPL, nDTW, sDTW, CLS and corpus BLEU.
    tensor: reverse-mode autodiff on numpy arrays.
    model: the navigation agent and prefix-conditioned hint decoder.
    train: rollouts, joint training and evaluation.
    analysis: quality of generated hints.
    cli: the ``navhint`` command.
"""

__version__ = "0.1.0"
