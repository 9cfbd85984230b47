# Shared exception types. Library code raises these; the CLI maps them to
# exit codes (contract violations -> 2, everything else -> 1).


class ContractViolationError(ValueError):
    """An argument or configuration breaks a documented precondition."""


class InternalInvariantError(RuntimeError):
    """A cannot-happen condition was hit (numerical invariant broken)."""


class DegenerateComponentError(RuntimeError):
    """A mixture component lost all responsibility mass."""

    def __init__(self, component, total):
        self.component = int(component)
        self.total = float(total)
        super().__init__(
            f"component {self.component} has total responsibility {self.total:.3e}"
        )


class InfeasibleAfterFallbackError(RuntimeError):
    """Projection-direction program stayed infeasible after all penalty growth retries."""

    def __init__(self, lam_final, retries):
        self.lam_final = float(lam_final)
        self.retries = int(retries)
        super().__init__(
            f"projection program infeasible after {self.retries} retries "
            f"(final lambda {self.lam_final:.3e})"
        )


class DiscretizationTooCoarseError(RuntimeError):
    """Segment grid too coarse to accumulate the target mass, even after widening."""


class MissingFileError(FileNotFoundError):
    """Input file does not exist."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"file not found: {self.path}")


class ParseError(ValueError):
    """A CSV cell failed numeric parsing; carries 1-based row/column indices."""

    def __init__(self, row, col, detail=""):
        self.row = int(row)
        self.col = int(col)
        msg = f"parse error at row {self.row}, column {self.col}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ColumnCountMismatchError(ValueError):
    """A CSV row has a different number of columns than the header."""

    def __init__(self, row, expected, got):
        self.row = int(row)
        self.expected = int(expected)
        self.got = int(got)
        super().__init__(
            f"row {self.row} has {self.got} columns, expected {self.expected}"
        )
