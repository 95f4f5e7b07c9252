"""Grid-overlay finite differences for the fractional Laplacian on simplicial meshes."""
from .errors import GofdError
from .mesh import SimplicialMesh, generate_benchmark_mesh, mesh_stats
from .grid import OverlayGrid, build_overlay
from .symbol import SymbolCoefficients, compute_symbol, cached_symbol
from .toeplitz import ToeplitzOperator, build_operator
from .transfer import PointLocator, TransferMatrix, build_transfer

__version__ = "0.1.0"
