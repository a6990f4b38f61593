"""Exception hierarchy; the CLI maps each family to an exit code."""


class MamifuseError(Exception):
    exit_code = 1


class ConfigError(MamifuseError):
    exit_code = 2


class RegistryError(ConfigError):
    """Unknown encoder/backbone id or missing checkpoint."""


class DataError(MamifuseError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class ImageDecodeError(DataError):
    pass


class AlignmentError(MamifuseError):
    exit_code = 4
