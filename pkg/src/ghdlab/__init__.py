"""ghdlab: a desk-scale laboratory for the gap-Hamming communication problem.

Instance samplers for the cube and sphere variants, the deterministic
embedding and hyperplane-sketch reductions between them, a two-party
protocol engine with exact exhaustive error evaluation, an executable
round-elimination step with its measured bad-event decomposition, paired
analytic-bound/estimator concentration checks, and the distinct-elements
streaming reduction.  Everything is seeded and reproducible.
"""

from .rng import RandomSource
from .instances import (
    BitString,
    SphereVector,
    CubePromise,
    SpherePromise,
    PromiseUnreachableError,
    hamming_distance,
    ghd_label,
    ghs_label,
    sign_label_cube,
    sign_from_ip,
    sample_haar,
    sample_promise,
    sample_pair_at_distance,
    sample_pair_at_ip,
    repeat_amplify,
)
from .reductions import (
    HyperplaneSketchSeed,
    embed_cube_to_sphere,
    collision_probability,
    sketch_sphere_to_cube,
    gap_transfer_check,
    lift_protocol,
)
from .protocols import (
    ProtocolError,
    CubeDomain,
    SphereDomain,
    NetDomain,
    Round,
    DeterministicProtocol,
    PublicCoinProtocol,
    ErrorReport,
    run,
    max_cost,
    evaluate_error,
    UniformCubePairs,
    FixedDistanceCubePairs,
    FixedIpSpherePairs,
    NetPairs,
    trivial_protocol,
    constant_protocol,
    sampling_protocol,
    majority_error,
    table_protocol,
    first_bit_then_trivial,
    prefix_exchange_protocol,
    DeltaNet,
    build_random_net,
    net_pair_weights,
    discretize,
    protocol_to_json,
    protocol_from_json,
)
from .round_elim import (
    InvariantViolation,
    RoundElimParams,
    EliminationReport,
    error_recurrence,
    iterate_recurrence,
    find_good_inputs,
    largest_message_class,
    snap,
    snap_table,
    eliminate_round,
    full_elimination,
)
from .concentration import (
    BoundCheck,
    SphericalCap,
    FiniteSphereSet,
    cap_bound,
    estimate_cap,
    sphere_concentration_check,
    hamming_cap_bound,
    hamming_cap_check,
    hamming_concentration_check,
    inner_product_density,
    near_zero_mass_check,
    perturbed_sign_flip_check,
    hypergeometric_tail_check,
    default_sweep,
)
from .streaming import (
    StreamToken,
    StreamingAlgorithm,
    ExactF0,
    KmvF0,
    build_streams,
    exact_f0,
    kmv_estimate,
    ghd_from_f0,
    simulate_passes,
    accuracy_requirement_check,
)

__version__ = "0.1.0"
