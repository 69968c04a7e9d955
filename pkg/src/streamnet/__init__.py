"""streamnet: stream-coordination and tuple-space runtimes, demonstrated
on tiled Cholesky factorization.

The package has three layers:

* a record/combinator/engine stack (`records`, `combinators`, `engine`)
  for composing networks of stateless boxes and synchrocells,
* a tuple-space engine (`tuplespace`) with item/tag/step collections,
* tiled Cholesky built on both (`barrier_net`, `dataflow_net`,
  `tuplespace.run_cholesky_cnc`) plus a serial oracle (`tiling`), all
  bitwise-interchangeable, compared by the `streamnet-bench` CLI.
"""

from .combinators import (
    box,
    feedback,
    parallel,
    serial,
    split,
    star,
    sync,
    validate,
)
from .engine import (
    NetworkGraph,
    RunMetrics,
    RunResult,
    SyncState,
    activate_box,
    compile_network,
    run,
    step_sync,
)
from .errors import (
    ConservationError,
    ContractError,
    CoordinationError,
    DeadlockError,
    DivergenceError,
    InvalidTerminationError,
    KernelError,
    NumericError,
    RoutingError,
    SingleAssignmentError,
    ValidationError,
)
from .records import BoxSignature, Record, TypePattern, merge_records, pattern
from .tuplespace import CncGraph, CncMetrics, build_cholesky_cnc, run_cnc, run_cholesky_cnc

__version__ = "0.1.0"

__all__ = [
    "BoxSignature",
    "CncGraph",
    "CncMetrics",
    "ConservationError",
    "ContractError",
    "CoordinationError",
    "DeadlockError",
    "DivergenceError",
    "InvalidTerminationError",
    "KernelError",
    "NetworkGraph",
    "NumericError",
    "Record",
    "RoutingError",
    "RunMetrics",
    "RunResult",
    "SingleAssignmentError",
    "SyncState",
    "TypePattern",
    "ValidationError",
    "activate_box",
    "box",
    "build_cholesky_cnc",
    "compile_network",
    "feedback",
    "merge_records",
    "parallel",
    "pattern",
    "run",
    "run_cnc",
    "run_cholesky_cnc",
    "serial",
    "split",
    "star",
    "step_sync",
    "sync",
    "validate",
]
