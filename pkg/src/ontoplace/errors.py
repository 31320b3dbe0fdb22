"""Exception types shared across the package."""


class OntoplaceError(Exception):
    """Base class for all package-specific errors."""


class FormatError(OntoplaceError):
    """A line-delimited input file is malformed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DuplicateConceptError(FormatError):
    pass


class UnknownConceptError(OntoplaceError):
    pass


class DanglingEdgeError(OntoplaceError):
    pass


class VerbalizationError(OntoplaceError):
    pass


class ProviderProtocolError(OntoplaceError):
    """A remote endpoint violated its wire contract."""


class PromptBudgetError(OntoplaceError):
    """A prompt exceeds the endpoint's input token budget."""


class StaleSlateError(OntoplaceError):
    """An accept was issued against a slate computed on an older ontology version."""
