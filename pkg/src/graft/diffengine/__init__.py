from graft.diffengine import ops
from graft.diffengine.fdcheck import FDReport, ParamCheck, fd_check, relative_error
from graft.diffengine.tape import ParamTensor, Tape, Tensor, active_tape

__all__ = [
    "FDReport",
    "ParamCheck",
    "ParamTensor",
    "Tape",
    "Tensor",
    "active_tape",
    "fd_check",
    "ops",
    "relative_error",
]
