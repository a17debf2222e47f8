"""1-D polynomial neural networks for raw audio: layers, training, equivalence and complexity tools."""

__version__ = "0.1.0"

from .network import Network, NetworkSpec, TopologyError, load_model, param_count, shape_trace  # noqa: E402
from .layers import PnnLayer  # noqa: E402

__all__ = ["Network", "NetworkSpec", "PnnLayer", "TopologyError", "load_model", "param_count", "shape_trace",
           "__version__"]
