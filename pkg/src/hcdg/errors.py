"""Exception hierarchy shared by all hcdg modules."""


class HCDGError(Exception):
    """Base class for every error raised by hcdg."""


class DegreeTooLow(HCDGError, ValueError):
    pass


class InvalidDomain(HCDGError, ValueError):
    pass


class ParseError(HCDGError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class TopologyError(HCDGError, ValueError):
    pass


class TagError(HCDGError, ValueError):
    pass


class PropagationConflict(HCDGError):
    def __init__(self, message, chain=()):
        self.chain = tuple(chain)
        super().__init__(f"{message}; face chain {list(self.chain)}")


class UnsupportedShape(HCDGError, ValueError):
    pass


class AlternationViolated(HCDGError, ValueError):
    pass


class MissingSwitch(HCDGError, ValueError):
    pass


class NonDiagonalMass(HCDGError):
    pass


class SystemTooLarge(HCDGError):
    pass


class SingularDependentBlock(HCDGError):
    def __init__(self, element):
        self.element = element
        super().__init__(f"dependent block of element {element} is singular")


class PartitionNotBlockDiagonal(HCDGError):
    def __init__(self, face, elements):
        self.face = face
        self.elements = elements
        super().__init__(
            f"dependent nodes of elements {elements} couple (face {face}); "
            "A_DD is not block diagonal"
        )


class SingularBlock(HCDGError):
    def __init__(self, element):
        self.element = element
        super().__init__(f"diagonal block {element} is singular")


class Diverged(HCDGError):
    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class UnstableRun(HCDGError):
    pass


class SingularSystem(HCDGError):
    pass


class ReportTooShort(HCDGError, ValueError):
    pass
