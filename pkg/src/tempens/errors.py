"""Exception types raised across the package."""


class TempensError(Exception):
    """Base class for all package errors."""


# idx / data
class BadMagic(TempensError):
    pass


class Truncated(TempensError):
    pass


class TrailingBytes(TempensError):
    pass


class SizeMismatch(TempensError):
    pass


class LabelOutOfRange(TempensError):
    pass


class DegenerateStd(TempensError):
    pass


class IndivisibleSeedSize(TempensError):
    pass


class SeedSizeTooLarge(TempensError):
    pass


class MissingDataset(TempensError):
    pass


# network
class NonFiniteActivation(TempensError):
    def __init__(self, layer, epoch=None):
        self.layer = layer
        self.epoch = epoch
        where = f"layer {layer!r}" + (f" at epoch {epoch}" if epoch is not None else "")
        super().__init__(f"non-finite activation in {where}")


class CacheMismatch(TempensError):
    pass


class ShapeMismatch(TempensError):
    pass


# ensemble / evaluation
class IncompleteEpochBuffer(TempensError):
    pass


class ZeroUpdates(TempensError):
    pass


class EmptyTestSet(TempensError):
    pass
