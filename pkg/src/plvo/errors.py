"""Exception types shared across the toolkit."""


class VOError(Exception):
    """Base class for all errors raised by plvo."""


class NonPositiveDepth(VOError):
    pass


class DegenerateLine(VOError):
    pass


class InsufficientMatches(VOError):
    pass


class IllPosed(VOError):
    pass


class IllPosedLinearization(IllPosed):
    pass


class NoValidSamples(VOError):
    pass


class TooFewSamples(VOError):
    pass


class NoConsensus(VOError):
    pass


class NonLinearStructure(NoConsensus):
    """Consensus set is not elongated enough to be a line."""


class OutOfBounds(VOError):
    pass


class DatasetFormatError(VOError):
    pass


class SpecError(VOError):
    pass


class NoOverlap(VOError):
    pass


class ZeroBaseline(VOError):
    """The 2D-to-2D residual carries no information at zero translation."""
