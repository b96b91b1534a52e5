"""Exception hierarchy.

``DataError`` covers everything caused by bad input data or files; the CLI
maps it to exit code 2. ``ParamError`` covers invalid hyperparameters and
misuse of the API.
"""


class ExpressmlError(Exception):
    pass


class DataError(ExpressmlError, ValueError):
    pass


class ParamError(ExpressmlError, ValueError):
    pass


# --- ingest ---------------------------------------------------------------

class MalformedRow(DataError):
    def __init__(self, line, message="wrong column count"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NonNumericScore(DataError):
    def __init__(self, line, token):
        self.line = line
        self.token = token
        super().__init__(f"line {line}: score {token!r} is neither a finite real nor an NA token")


class DuplicateSample(DataError):
    def __init__(self, sample_id):
        self.sample_id = sample_id
        super().__init__(f"duplicate sample id {sample_id!r} in metadata")


class DuplicateCell(DataError):
    def __init__(self, sample_id, gene_name):
        self.sample_id = sample_id
        self.gene_name = gene_name
        super().__init__(f"duplicate cell ({sample_id!r}, {gene_name!r})")


class EmptyResult(DataError):
    pass


# --- dataset --------------------------------------------------------------

class ClassTooSmall(DataError):
    def __init__(self, label, count):
        self.label = label
        super().__init__(f"class {label!r} has {count} sample(s); at least 2 are required")


class InvalidSpec(ParamError):
    pass


class ContainerError(DataError):
    pass


class BadMagic(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


class TruncatedFile(ContainerError):
    pass


class ChecksumMismatch(ContainerError):
    pass


# --- models ---------------------------------------------------------------

class EmptyNode(ParamError):
    pass


class InvalidParams(ParamError):
    pass


class FeatureOutOfRange(DataError):
    pass


class WidthMismatch(DataError):
    def __init__(self, expected, got):
        super().__init__(f"sample width {got} does not match model width {expected}")


class LengthMismatch(DataError):
    pass


# --- analysis -------------------------------------------------------------

class UnknownClassInTest(DataError):
    pass


class GeneUniverseMismatch(DataError):
    pass


class ScheduleExceedsGeneCount(DataError):
    pass
