from .models import (
    CpDecomposition,
    DenseTensor3,
    MatrixDecomposition,
    Parafac2Decomposition,
    RaggedTensor,
)
from .exceptions import (
    CmtfError,
    ConfigError,
    DataFormatError,
    InvariantError,
    SolverAbort,
    ValidationError,
    exit_code,
    friendly_message,
    map_exception,
)
