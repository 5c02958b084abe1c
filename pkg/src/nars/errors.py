"""Error taxonomy.

Every failure raised by this package carries an ``exit_code`` so the CLI can
map exceptions onto its documented exit categories:

    1  configuration (bad config file, inconsistent grid/bank setup)
    2  data (bad argument values, malformed inputs, framing problems)
    3  numerical (divergence, non-finite results)
    4  validity (request outside a model's physical range of validity)
"""


class NarsError(Exception):
    exit_code = 2


class ConfigurationError(NarsError):
    """Inconsistent or unparseable configuration."""

    exit_code = 1


class DataError(NarsError):
    """Malformed or out-of-range input data."""

    exit_code = 2


class DomainError(DataError):
    """Argument value outside the documented domain."""


class FramingError(DataError):
    """Stream/frame geometry mismatch (too short, wrong channel count...)."""


class NoSourceError(DataError):
    """Localization asked for a source where the input carries none."""


class NumericalError(NarsError):
    exit_code = 3


class DivergenceError(NumericalError):
    """A marching solver left its stability envelope."""


class ValidityError(NarsError):
    """Model evaluated outside its physical range of validity."""

    exit_code = 4
