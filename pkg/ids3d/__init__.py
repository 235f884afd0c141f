from .config import *
from .engine import *
from .checkpoint import *
from .export import *
