from ..engine.errors import *
from ..engine.nn_core import *
from ..engine.flow_ingest import *
from ..engine.stat_disentangle import *
from ..engine.memory_state import *
from ..engine.graph_diffusion import *
from ..engine.classifier import *
from ..engine.metrics import *
from ..engine.training import *
