class ConfigurationError(ValueError):
    """Mismatched cardinalities, invalid tables or inconsistent settings."""


def _magnitude(n):
    """Compact rendering of a possibly huge integer (too big for a float)."""
    try:
        return f"{n:.3g}"
    except OverflowError:
        return f"~10^{len(str(int(n))) - 1}"


class SizeCapExceeded(ValueError):
    """An exact computation was refused because its size estimate exceeds the cap."""

    def __init__(self, what, estimate, cap):
        self.what = what
        self.estimate = estimate
        self.cap = cap
        super().__init__(f"{what}: estimated size {_magnitude(estimate)} exceeds cap {_magnitude(cap)}")


class DocumentError(ValueError):
    """A serialized document failed validation; ``location`` names the offending part."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
