"""Exception hierarchy; ``exit_code`` maps onto the CLI's exit statuses."""


class CkmpmError(Exception):
    exit_code = 1


class ConfigError(CkmpmError, ValueError):
    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class NumericalError(CkmpmError):
    exit_code = 3


class ParticleError(NumericalError):
    """Numerical failure tied to one particle (``particle`` is None when unknown)."""

    default_message = "numerical failure"

    def __init__(self, particle=None, message=None):
        self.particle = None if particle is None else int(particle)
        self.step = None
        text = message or self.default_message
        if self.particle is not None:
            text = f"particle {self.particle}: {text}"
        super().__init__(text)


class DomainExitError(ParticleError):
    default_message = "particle stencil leaves the allocated grid"


class InvertedElementError(ParticleError):
    default_message = "inverted element (det F <= 0)"


class SingularMomentError(ParticleError):
    default_message = "moment matrix is singular or ill-conditioned"


class IsolatedParticleError(ParticleError):
    default_message = "no massive grid node in stencil"


class InactiveBlockError(ParticleError):
    default_message = "stencil touched an inactive grid block"


class NaNGuardError(NumericalError):
    pass


class OutputError(CkmpmError, OSError):
    exit_code = 4
