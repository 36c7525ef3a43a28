"""Error and warning types shared across the toolkit.

Errors signal contract violations detected at runtime (inconsistent inputs,
solver breakdowns); warnings signal conditions that are reported but do not
abort a computation (a non-monotone energy step that triggers dt control, an
alternation that stalls). Everything derives from NetmorphError so callers can
catch the whole family, and the CLI maps the split onto exit codes.
"""

from __future__ import annotations


class NetmorphError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NetmorphError):
    """Malformed scenario, flag, or input file."""


class NumericalError(NetmorphError):
    """Base class for solver/model failures (CLI exit code 1)."""


class UnbalancedComponent(NumericalError):
    """A connected component of the conducting subgraph has nonzero net source."""


class SingularSystem(NumericalError):
    """A linear solve failed to reach the requested residual."""


class LoopyFlux(NumericalError):
    """A flux pattern expected to be loop-free carries a cycle."""


class InfiniteEnergy(NumericalError):
    """An energy evaluation hit a zero-conductivity edge with nonzero flux."""


class TooManyTrees(NumericalError):
    """Spanning-tree enumeration exceeded its cap."""


class InfeasibleSources(NumericalError):
    """Source data admits no mass-conserving flux (imbalance or isolation)."""


class DegeneratePermeability(NumericalError):
    """A cell permeability tensor is singular and no background term covers it."""


class RotationalInput(NumericalError):
    """A vector field required to be curl-free has measurable curl."""


class NoConvergence(NumericalError):
    """An iterative solver exhausted its budget above tolerance."""


class InfeasibleSupport(NumericalError):
    """The conductivity support cannot route the prescribed sources."""


class NetmorphWarning(UserWarning):
    """Base class for reported-but-nonfatal conditions."""


class NonmonotoneEnergy(NetmorphWarning):
    """An integrator step increased the energy beyond its tolerance."""


class InnerStall(NetmorphWarning):
    """An alternating minimization stopped making progress; last iterate kept."""
