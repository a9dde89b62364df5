"""Self-supervised audio representation learning with few-shot evaluation.

Log-mel front end, window selection, spectrogram augmentation, four
hand-differentiated training objectives, a small numpy conv encoder and an
episodic nearest-prototype evaluator.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
