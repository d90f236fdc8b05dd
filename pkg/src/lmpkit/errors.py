"""Exception hierarchy shared by every lmpkit module."""


class LmpError(Exception):
    """Base class for all lmpkit errors."""


class InvalidInputError(LmpError, ValueError):
    """Arguments violate an operation's preconditions."""


class ValidationError(LmpError, ValueError):
    """Data failed a structural or numeric check."""


class FlowFormatError(LmpError, ValueError):
    """Malformed .flo payload."""


class LandmarkFormatError(LmpError, ValueError):
    """Malformed landmark file."""


class SpecError(LmpError, ValueError):
    """Bad ROI spec, synth spec or config."""


class GeometryError(LmpError, ValueError):
    """Region or polygon does not fit the field, or is degenerate."""


class EmptyRegionError(GeometryError):
    """Region has no pixels inside the flow field."""
