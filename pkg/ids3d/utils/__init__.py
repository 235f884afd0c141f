from ..utils.base_json_object import *
from ..utils.lazy_property import *
