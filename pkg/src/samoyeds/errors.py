"""Exception hierarchy shared by all modules."""


class SamoyedsError(Exception):
    pass


class ShapeError(SamoyedsError, ValueError):
    pass


class PatternError(SamoyedsError, ValueError):
    """Dense weight does not satisfy the (n, m, v) + 2:4 pattern."""


class CorruptFormat(SamoyedsError, ValueError):
    pass


class SelectionError(SamoyedsError, ValueError):
    pass


class TileConfigError(SamoyedsError, ValueError):
    pass


class BadMagic(CorruptFormat):
    pass


class VersionMismatch(CorruptFormat):
    pass


class TruncatedStream(CorruptFormat):
    pass
