"""Exception hierarchy shared by all feasproj modules."""


class FeasprojError(Exception):
    """Base class for every error raised by feasproj."""


# Case input / output

class MissingTable(FeasprojError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"Case file has no '{name}' table")


class MalformedRow(FeasprojError):
    def __init__(self, table, line, reason=""):
        self.table = table
        self.line = line
        self.reason = reason
        detail = f": {reason}" if reason else ""
        super().__init__(f"Malformed row in '{table}' at line {line}{detail}")


class UnknownBusReference(FeasprojError):
    def __init__(self, bus_id, table=None):
        self.bus_id = bus_id
        self.table = table
        where = f" in '{table}'" if table else ""
        super().__init__(f"Reference to unknown bus {bus_id}{where}")


class MultipleSlackBuses(FeasprojError):
    def __init__(self, bus_ids):
        self.bus_ids = list(bus_ids)
        super().__init__(f"Expected exactly one slack bus, found {self.bus_ids}")


class NoSlackBus(FeasprojError):
    def __init__(self):
        super().__init__("Case has no slack (type 3) bus")


class ResultingEmptyBox(FeasprojError):
    def __init__(self, quantity, record, lower, upper):
        self.quantity = quantity
        self.record = record
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"Perturbation empties the {quantity} box of {record}: min {lower:g} > max {upper:g}"
        )


class InvalidPerturbation(FeasprojError, ValueError):
    pass


class IoFailure(FeasprojError):
    pass


# Network model

class ZeroImpedanceBranch(FeasprojError):
    def __init__(self, from_bus, to_bus):
        self.from_bus = from_bus
        self.to_bus = to_bus
        super().__init__(f"Branch {from_bus}-{to_bus} is in service with r = x = 0")


# Problem assembly and evaluation

class InconsistentDimensions(FeasprojError):
    pass


class NoSlackSegment(FeasprojError):
    def __init__(self):
        super().__init__("Problem has no slack segment; build the slacked problem first")


class DimensionMismatch(FeasprojError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Expected a vector of dimension {expected}, got {actual}")


class NonFiniteEncountered(FeasprojError):
    pass


# SDP

class LinearAlgebraFailure(FeasprojError):
    pass


class IterationLimit(FeasprojError):
    pass


class SdpSizeLimit(FeasprojError):
    def __init__(self, block_name, size, limit):
        self.block_name = block_name
        self.size = size
        self.limit = limit
        super().__init__(
            f"PSD block '{block_name}' of size {size} exceeds the dense limit {limit}"
        )


class NotSolved(FeasprojError):
    def __init__(self, status):
        self.status = status
        super().__init__(f"SDP solution has status '{status}', no candidate can be extracted")


# Certification

class RankDeficientBeyondTolerance(FeasprojError):
    def __init__(self, rank, expected):
        self.rank = rank
        self.expected = expected
        super().__init__(f"Jacobian rank {rank} is below {expected}")


class NonFinite(FeasprojError):
    pass


class Divergence(FeasprojError):
    def __init__(self, iteration, residual):
        self.iteration = iteration
        self.residual = residual
        super().__init__(f"Newton iterates diverge at iteration {iteration} (residual {residual:.3e})")


# Pipeline

class PointUnavailable(FeasprojError):
    pass
