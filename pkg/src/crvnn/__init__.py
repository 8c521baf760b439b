"""Continuous recursive neural network: a latent-tree sequence encoder.

Subpackages:
    tensor    - numpy autodiff engine (tape, ops, precision control)
    gradcheck - finite-difference gradient verification
    model     - the encoder: soft neighbor retrieval, gated composition,
                dynamic halting
    discrete  - exact discrete execution oracle for binary schedules
    data      - synthetic benchmark generators (list operations, logical
                inference) and dataset file I/O
    training  - optimizers, schedules, classifier heads, train/eval loops,
                checkpoints
    parsing   - induced parse-tree extraction from composition histories
    verify    - soft-vs-discrete agreement and whole-model gradient checks
    cli       - `crvnn` command front end
"""

from .tensor import Tensor, no_grad, precision, set_precision

__version__ = "0.1.0"
