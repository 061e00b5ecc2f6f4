class WasteGraspError(Exception):
    pass


class InputError(WasteGraspError, ValueError):
    pass

class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{location}")

class SchemaError(InputError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)

class ConfigError(InputError):
    pass

class DimensionMismatch(InputError):
    pass

class LengthMismatch(InputError):
    pass

class PreconditionViolation(InputError):
    pass

class IoError(InputError):
    pass


class GeometryError(WasteGraspError):
    pass

class InvalidDepth(GeometryError):
    pass

class OutOfBounds(GeometryError):
    pass

class EmptyMask(GeometryError):
    pass

class EmptyCloud(GeometryError):
    pass

class TooFewPoints(GeometryError):
    pass

class DegenerateCloud(GeometryError):
    pass

class MissingNormals(GeometryError):
    pass


class GraspError(WasteGraspError):
    pass

class EmptySlice(GraspError):
    pass

class OneSidedSlice(GraspError):
    pass

class InsufficientCloud(GraspError):
    pass

class NoFeasibleGrasp(GraspError):
    pass


class UndefinedMetric(WasteGraspError):
    pass
