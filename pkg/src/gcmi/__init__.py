"""Globally convergent microwave imaging of buried targets.

A numpy/scipy library covering the full chain from time-domain wave
simulation through backscatter data preprocessing to the pseudo-
frequency layer-stripping reconstruction of dielectric constants.
"""

from .model import (
    Grid3D,
    IndexBox,
    Inclusion,
    MediumModel,
    ScalarField,
    SceneSpec,
    TimeSeriesCube,
    build_grid,
    rasterize_scene,
)
from .forward import (
    BoundaryTraces,
    SimConfig,
    SimResult,
    Waveform,
    cfl_limit,
    incident_wave_1d,
    record_boundary,
    run_fdtd,
    waveform_value,
)
from .laplace import (
    BoundaryData,
    PseudoFreqField,
    PseudoFrequencyGrid,
    complete_boundary_data,
    compute_w0,
    helmholtz_residual,
    laplace_transform,
    psi_from_boundary,
    tail_from_w,
    tilde_f,
    v0_analytic,
    w_from_timedata,
)
from .elliptic import EllipticProblem, EllipticSolution, solve_dirichlet
from .preprocess import (
    CrossSection,
    DepthEstimate,
    PeakList,
    TargetClassification,
    calibrate,
    classify_and_extract,
    estimate_calibration_factor,
    estimate_cross_section,
    estimate_depth,
    find_peaks,
    offset_correct,
    propagate_fk,
    shift_source,
    time_zero_correct,
)
from .inversion import (
    CwfCoefficients,
    InversionConfig,
    InversionGeometry,
    InversionResult,
    StoppingConfig,
    cwf_coefficients,
    cwf_moment,
    cutoff_chi,
    epsilon_from_v,
    initial_tail_test1,
    initial_tail_test2,
    run_inversion,
    solve_qn,
    stopping_check,
    tail_update,
    target_ratio_to_epsilon,
    truncate_shape,
    update_v,
)
from .io import (
    RunConfig,
    format_config,
    parse_config,
    parse_config_text,
    read_cube,
    read_field,
    write_cube,
    write_field,
)
from .harness import (
    ExperimentSpec,
    ReportRow,
    build_geometry,
    build_inversion_config,
    build_sgrid,
    metrics_table,
    run_pipeline,
    synthesize_measurement,
)

__version__ = "0.1.0"
