"""Hierarchical graph language model: graph reasoning benchmarks, a two-block
transformer with intra-node attention, training, robustness and
interpretability metrics. Thin wrapper over the native _hlmg extension."""

try:
    from ._hlmg import *  # noqa: F401,F403  (installed package layout)
    from ._hlmg import __version__  # noqa: F401
except ImportError:  # in-tree build: extension sits on PYTHONPATH
    from _hlmg import *  # noqa: F401,F403
    from _hlmg import __version__  # noqa: F401
