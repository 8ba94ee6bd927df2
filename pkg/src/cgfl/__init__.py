"""Few-shot node classification across heterogeneous graphs with disjoint type sets.

The pipeline: mine and categorize meta-patterns from random walks, encode
nodes with a three-view attention network over pattern instances, weight
source data with graph/task/node scores, and meta-train a prototypical
classifier that transfers to a target graph whose node and edge types were
never seen in training.
"""

__version__ = "0.1.0"
