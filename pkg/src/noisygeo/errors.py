"""Exception taxonomy shared by all modules."""


class InvalidInput(ValueError):
    """Bad argument or coordinate outside the space's chart."""


class ConfigError(InvalidInput):
    """Malformed or inconsistent experiment configuration."""


class ClusterDegenerate(RuntimeError):
    """A cluster came out empty after truncation; carries the center index."""

    def __init__(self, center, msg=""):
        self.center = center
        super().__init__(msg or f"cluster at center {center} is empty after truncation")


class ClusterUnderfull(RuntimeError):
    """Algorithm-2 candidate cluster has fewer than n members (N3 too small)."""

    def __init__(self, k, have, need):
        self.k, self.have, self.need = k, have, need
        super().__init__(f"cluster {k}: only {have} candidates, need {need}")


class MidpointNotFound(RuntimeError):
    """No net point satisfies the midpoint constraint; the net is too sparse."""

    def __init__(self, x, y):
        self.pair = (x, y)
        super().__init__(f"no admissible midpoint for pair ({x}, {y})")


class RatioUnavailable(RuntimeError):
    """Ratio query hit an infinite comparator entry; use the missing-data path."""


class TauNotFound(RuntimeError):
    """No anchor candidate reaches the whole net within the step budget."""

    def __init__(self, x, msg=""):
        self.x = x
        super().__init__(msg or f"no feasible tau anchor for point {x}")
