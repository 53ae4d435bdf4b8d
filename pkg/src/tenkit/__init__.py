"""Sparse tensor formats, MTTKRP kernels, balancing, scheduling, and CP-ALS."""

from .balance import (
    BlockSchedule,
    ImbalanceMetrics,
    ScheduleUnit,
    SplitConfig,
    assign_slice_blocks,
    imbalance_metrics,
    split_fibers,
)
from .coo import (
    CapacityError,
    CooTensor,
    ParseError,
    TensorStats,
    allmode_order,
    canonicalize,
    compute_stats,
    load_frostt,
    parse_frostt,
    save_frostt,
    sort_by_mode_order,
    write_frostt,
)
from .cpd import (
    AlsIteration,
    KruskalModel,
    NumericalError,
    als_update_mode,
    cp_als,
    gram,
    hadamard_all_but,
    kruskal_to_dense,
    kruskal_value,
    pinv_spsd,
)
from .formats import (
    CslSlices,
    CsfTensor,
    HbCsfTensor,
    SliceKind,
    StoragePart,
    StorageReport,
    build_csf,
    build_hbcsf,
    classify_slices,
    flatten_csf,
    flatten_hbcsf,
    slice_census,
    storage_words,
)
from .generate import generate_tensor
from .kernels import (
    OpCount,
    mttkrp,
    mttkrp_coo,
    mttkrp_csf,
    mttkrp_csl,
    mttkrp_dense_oracle,
    mttkrp_hbcsf,
    mttkrp_scheduled,
)
from .schedsim import MachineModel, SimReport, SweepPoint, simulate, sweep_split

__version__ = "0.1.0"

__all__ = [
    "AlsIteration",
    "BlockSchedule",
    "CapacityError",
    "CooTensor",
    "CslSlices",
    "CsfTensor",
    "HbCsfTensor",
    "ImbalanceMetrics",
    "KruskalModel",
    "MachineModel",
    "NumericalError",
    "OpCount",
    "ParseError",
    "ScheduleUnit",
    "SimReport",
    "SliceKind",
    "SplitConfig",
    "StoragePart",
    "StorageReport",
    "SweepPoint",
    "TensorStats",
    "allmode_order",
    "als_update_mode",
    "assign_slice_blocks",
    "build_csf",
    "build_hbcsf",
    "canonicalize",
    "classify_slices",
    "compute_stats",
    "cp_als",
    "flatten_csf",
    "flatten_hbcsf",
    "generate_tensor",
    "gram",
    "hadamard_all_but",
    "imbalance_metrics",
    "kruskal_to_dense",
    "kruskal_value",
    "load_frostt",
    "mttkrp",
    "mttkrp_coo",
    "mttkrp_csf",
    "mttkrp_csl",
    "mttkrp_dense_oracle",
    "mttkrp_hbcsf",
    "mttkrp_scheduled",
    "parse_frostt",
    "pinv_spsd",
    "save_frostt",
    "simulate",
    "slice_census",
    "sort_by_mode_order",
    "split_fibers",
    "storage_words",
    "sweep_split",
    "write_frostt",
]
