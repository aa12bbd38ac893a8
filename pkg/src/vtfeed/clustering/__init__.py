from .base import NO_REASON, NULL_FEATURE, UNIQUE_VALUE, Clustering, UnionFind, read_clusters, write_clusters
from .fvg import FvgRun, fvg_cluster, fvg_cluster_file
from .hac import DistanceSpec, TooLarge, hac_cluster, pairwise_distance
from .hact import DEFAULT_CDIST, hact_cluster
from .vptree import VPTree, build_vptree, radius_join, radius_query

__all__ = [
    "Clustering",
    "DEFAULT_CDIST",
    "DistanceSpec",
    "FvgRun",
    "NO_REASON",
    "NULL_FEATURE",
    "TooLarge",
    "UNIQUE_VALUE",
    "UnionFind",
    "VPTree",
    "build_vptree",
    "fvg_cluster",
    "fvg_cluster_file",
    "hac_cluster",
    "hact_cluster",
    "pairwise_distance",
    "radius_join",
    "radius_query",
    "read_clusters",
    "write_clusters",
]
