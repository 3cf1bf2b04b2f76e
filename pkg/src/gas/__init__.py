"""Graph-assisted stitching for offline goal-reaching.

Pipeline: learn a temporal-distance embedding from trajectory data, filter
states by temporal efficiency, cluster the survivors into a sparse graph,
and plan over it with Dijkstra while a directional low-level policy executes.
"""

__version__ = "0.1.0"
