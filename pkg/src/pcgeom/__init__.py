"""Point-cloud local geometry descriptors and geometrically constrained
neighborhood graphs."""

from .cloud import (
    CloudFormatError,
    PointCloud,
    SamplingSpec,
    generate_cloud,
    load_cloud,
    normalize_unit_sphere,
    save_cloud,
)
from .geometry import (
    Descriptors,
    LocalFrame,
    LocalFrames,
    compute_descriptors,
    estimate_normals,
    shape_index,
    shape_indices,
    spin_coordinates,
    spin_decompose,
)
from .graph import (
    ConstraintParams,
    NeighborGraph,
    angular_coverage,
    angular_coverages,
    build_constrained_graph,
    build_knn_graph,
    graph_stats,
)
from .kdtree import KDTree, build_index
from .nn import EdgeConvParams, MlpParams, edgeconv_forward, mlp_backward, mlp_forward

__version__ = "0.1.0"
