from .dataset_tool import DatasetTools
from .enhance_tool import EnhanceTools
from .evaluate_tool import EvaluateTools
