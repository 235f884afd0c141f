from ..config.base_config import *
from ..config.engine_config import *
