"""Binary local shape signatures for 3D point clouds.

ISS keypoints, angle-constrained neighbourhoods with a local reference frame,
bit-packed signatures built from pairwise normal comparisons, and Hamming
matching through a randomized clustering forest.
"""
from .cloud_io import load_cloud, save_ply, save_xyz
from .errors import (
    BsigError,
    DegenerateCurveError,
    DegenerateGeometryError,
    EmptyInputError,
    MalformedInputError,
    ParameterError,
    PreconditionError,
    SignatureSkippedError,
    UnmatchedKeypointError,
    UnsupportedFeatureError,
)
from .evaluation import (
    DescriptorParams,
    EvalReport,
    GroundTruth,
    MatcherParams,
    PRPoint,
    SceneRecipe,
    auc_pr,
    compactness,
    is_correct_match,
    precision_recall,
    run_benchmark,
    synth_scene,
)
from .geometry import PointCloud, SpatialIndex, compute_normals, estimate_normals, mesh_resolution
from .keypoints import KeypointSet, detect_iss, load_keypoints, save_keypoints
from .local_frame import (
    LocalReferenceFrame,
    NeighborSet,
    align,
    best_fit_plane,
    compute_lrf,
    select_neighbors_angular,
    support_radius,
)
from .matching import (
    ClusteringForest,
    MatchCandidate,
    brute_force_match,
    build_forest,
    hamming,
    search,
)
from .signature import (
    BinarySignature,
    compute_signature,
    describe,
    float_equivalents,
    read_descriptors,
    signature_length_bits,
    write_descriptors,
)

__version__ = "0.1.0"
