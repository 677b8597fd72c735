"""Exception hierarchy shared by the scheme, accounting and protocol layers."""


class DynoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DynoError, ValueError):
    """Vector lengths or moduli do not line up."""


class RangeError(DynoError, ValueError):
    """A value does not fit the signed range of the ring."""


class SlotError(DynoError, ValueError):
    """A slot index lies outside the supported range."""


class AlreadyRegisteredError(DynoError):
    """A slot already holds an encryption key."""


class RegistrationError(DynoError):
    """A key was requested for a slot that never registered."""


class SubsetError(DynoError, ValueError):
    """The client subset of a decryption key is empty or malformed."""


class AssemblyError(DynoError):
    """Ciphertexts handed to decryption do not cover the key's slots exactly."""


class LabelError(DynoError):
    """A ciphertext label does not match the decryption key label."""


class NoiseOverflowError(DynoError, OverflowError):
    """A sampled noise value does not fit the signed range of the ring."""


class LedgerError(DynoError, KeyError):
    """The budget ledger does not know a client."""


class BudgetRefused(DynoError):
    """A budget charge would overdraw at least one client.

    ``depleted`` lists the clients whose remaining budget is too small.
    """

    def __init__(self, depleted):
        self.depleted = sorted(depleted)
        super().__init__(f"budget exhausted for clients {self.depleted}")


class CapacityError(DynoError, ValueError):
    """A study needs longer vectors than the scheme supports."""


class ResubmissionError(DynoError):
    """A data holder submitted twice under the same label."""


class ConfigError(DynoError, ValueError):
    """A run configuration is invalid."""
