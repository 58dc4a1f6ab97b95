"""hbproxy: a multi-block harmonic-balance proxy solver and parallel-runtime lab.

The package couples a small structured-grid spectral-in-time solver with an
in-process message-passing runtime so that communication aggregation,
collective batching, buffered parallel output, thread-region hoisting and
first-touch initialization can be exercised, counted exactly, and verified
byte-for-byte against serial execution.
"""

from .bench import (MACHINE_PROFILES, MachineProfile, RunRecord, efficiency_hybrid,
                    efficiency_mpi, emit_report, power_per_iteration,
                    predict_comm_time, predict_comm_time_for_plan)
from .driver import CaseRunResult, RunSpec, run_case
from .errors import (CapacityError, CollectiveError, ConfigError, DivergenceError,
                     DomainError, HBProxyError, PlanError, ProtocolError,
                     RankFailure, RunAborted, TopologyError, WriteError)
from .exchange import (CutPlan, ExchangeForecast, ExchangeMode, ExchangeStrategy,
                       RankExchange, ThreadMode, build_cut_plan, exchange_halos,
                       predicted_message_count)
from .hbcore import (ForceCoefficients, HarmonicField, RKScheme, SpectralDeriv,
                     compute_forces, residual, spectral_matrix)
from .hybrid import (ActivationMode, Axis, InitPlan, Team, TeamConfig,
                     build_init_plan, first_touch_init, partition_work, run_stage)
from .mesh import (BlockSpec, CaseConfig, CutRole, CutSide, CutSpec, Partition,
                   Topology, build_topology, cut_role, load_case, parse_case,
                   partition_blocks)
from .outio import (FileLayout, RecordSpec, WriteMode, compute_layout,
                    open_handles, read_block_plane, write_output)
from .reduce import ForceReduceStrategy, ReduceMode, reduce_forces
from .runtime import (Counters, Envelope, RankContext, RunResult, spawn_ranks,
                      wait_all)

__version__ = "0.1.0"
