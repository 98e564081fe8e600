from .label_mode_benchmark import LabelModeBenchmark
from .weak_segmentation import WeakSegmentationPipeline
