class ValidationError(Exception):
    pass


class VolumeIOError(Exception):
    pass


class BadMagicError(VolumeIOError):
    pass


class TruncatedPayloadError(VolumeIOError):
    pass


class NonFiniteValueError(VolumeIOError):
    pass


class ShapeMismatchError(Exception):
    pass


class GeometryError(Exception):
    pass


class PhantomSpecError(Exception):
    pass


class UndersizedInputError(Exception):
    pass


class EmptyRegionError(Exception):
    pass


class NetworkStateError(Exception):
    pass


class CheckpointError(Exception):
    pass


class RegionSamplingError(Exception):
    pass


class TrainingDivergedError(Exception):
    pass


class ConfigConflictError(Exception):
    pass
