from .fps import fps
from .kdtree import KdTree, build_kdtree, nearest
from .sor import SorParams, sor_filter

__all__ = ["KdTree", "SorParams", "build_kdtree", "fps", "nearest", "sor_filter"]
