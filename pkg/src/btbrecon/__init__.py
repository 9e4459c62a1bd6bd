"""btbrecon: branch target buffer probing and geometry recovery toolkit."""

from .gadget import (
    BRANCH_OFFSET,
    DEFAULT_BASE,
    ENTRY_SYMBOL,
    MIN_STRIDE,
    GadgetSpec,
    branch_addresses,
    build_trace,
    emit_asm,
    validate_spec,
)
from .infer import (
    CapacityEstimate,
    Evidence,
    Indeterminate,
    InferenceConfig,
    InferenceReport,
    cross_check,
    infer_all,
    infer_capacity,
    infer_index_hi,
    infer_index_lo,
    infer_ways,
)
from .report import export_matrix, matrix_from_csv, matrix_to_csv, plot_table, render_ascii
from .sim import (
    Access,
    AddressDecomposition,
    BtbGeometry,
    BtbState,
    MeasurementRecord,
    NoiseModel,
    Replacement,
    decompose,
    entry_key,
    inject_noise,
    recompose,
    replay,
)
from .sweep import (
    DatasetBackend,
    MissMatrix,
    SimulatorBackend,
    SweepGrid,
    hypothesis_grids,
    ingest_csv,
    load_matrix,
    matrix_from_records,
    merge,
    preset_grid,
    records_to_csv,
    run_sweep,
    save_matrix,
    sweep_simulator,
)

__version__ = "0.1.0"
