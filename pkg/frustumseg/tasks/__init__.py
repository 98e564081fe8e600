from .flops import CountFlops
from .frangi import ComputeVesselness
from .geometry import ScanConvertVolume
from .inference import InferMasks
from .metrics import EvaluateMasks
from .phantom import GeneratePhantomDataset
from .training import TrainWeakSegmentation
