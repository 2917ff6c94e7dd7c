from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + ["grad_check", "save_checkpoint", "load_checkpoint", "CheckpointError"]
