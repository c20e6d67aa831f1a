"""Exception hierarchy; the CLI maps each family to an exit code."""


class HeteroMIAError(Exception):
    """Base class for all package errors."""


class ConfigError(HeteroMIAError):
    """Invalid experiment configuration, split plan, or training settings."""


class DataError(HeteroMIAError):
    """Problems with input data: schema mismatches, unparseable cells, empty results."""


class SchemaError(DataError):
    pass


class TrainingError(HeteroMIAError):
    """Non-finite loss or another failure during SGD."""
