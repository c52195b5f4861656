"""Raw-waveform spoofing detector with an orthogonality-regularized Sinc front end."""

__version__ = "0.1.0"

from .metrics import ScoreRecord, compute_eer  # noqa: E402
from .model import ModelConfig, TORawNet, task_loss  # noqa: E402
from .tensor import Tensor, finite_diff_check, no_grad  # noqa: E402

__all__ = ["ModelConfig", "ScoreRecord", "TORawNet", "Tensor", "compute_eer", "finite_diff_check", "no_grad", "task_loss"]
