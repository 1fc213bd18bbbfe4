"""Population-based SHM engine.

Structures live as attributed graphs in a metric base space, their data in
per-structure stratified fibres; parametric families give the base space a
continuum structure along which damage-localisation classifiers transfer.
"""

__version__ = "0.1.0"

from .errors import PopshmError
from .graphs import (
    AttributedGraph,
    ElementKind,
    IEVertex,
    Population,
    graph_distance,
    mcs_size,
    select_source,
    topological_distance,
)
from .fibre import Fibre, find_stratum, load_fibre, save_fibre
from .operators import (
    OperatorSpec,
    o_band,
    o_demean,
    o_dft,
    o_mean,
    o_modal_peaks,
    o_welch,
)
from .families import (
    FamilyTemplate,
    StructureInstance,
    contract,
    embed,
    family_distance,
    geodesic,
    instantiate,
    interpolating_structure,
    single_span_family,
    three_span_family,
    two_span_family,
)
from .physics import (
    BridgeModel,
    DamageState,
    ModalFeatureOracle,
    ModalResult,
    SynthesisConfig,
    apply_damage,
    assemble,
    natural_frequencies,
    populate_fibre,
    synthesize_timeseries,
)
from .transfer import (
    AffineStep,
    Task,
    TransferMap,
    TransferReport,
    calibrate_threshold,
    cross_val_accuracy,
    ddt_map,
    domain_adaptation_baseline,
    evaluate_transfer,
    nca,
    train_localiser,
    two_step_transfer,
)

__all__ = [name for name in dir() if not name.startswith("_")]
