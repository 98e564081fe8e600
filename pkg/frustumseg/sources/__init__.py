from .base import Source
from .dataset import DatasetItem, VolumeDataset
from .phantom import PhantomDataset, PhantomSpec, generate_dataset, generate_phantom
