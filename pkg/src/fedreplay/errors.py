"""Exception hierarchy shared by every fedreplay module."""


class FedReplayError(Exception):
	"""Base class for all errors raised by fedreplay."""


class DimensionError(FedReplayError, ValueError):
	"""Array shapes or vector lengths do not agree."""


class NumericError(FedReplayError, ArithmeticError):
	"""A computation produced or received a non-finite value."""


class DomainError(FedReplayError, ValueError):
	"""An argument lies outside the domain an operation accepts."""


class PreconditionError(FedReplayError, RuntimeError):
	"""An operation was invoked in a state where it is not allowed."""


class FormatError(FedReplayError, ValueError):
	"""An input file does not follow its declared binary format.

	Attributes:
		field: Name of the offending header field or section.

	"""

	def __init__(self, field: str, message: str) -> None:
		"""Initialize with the offending field name."""
		super().__init__(f"{field}: {message}")
		self.field = field


class ConfigError(FedReplayError, ValueError):
	"""A configuration file or value failed validation.

	Attributes:
		key: Dotted path of the offending configuration key.

	"""

	def __init__(self, key: str, message: str) -> None:
		"""Initialize with the offending key."""
		super().__init__(f"{key}: {message}")
		self.key = key


class ExperimentError(FedReplayError, RuntimeError):
	"""A failure inside the federated loop, tagged with where it happened.

	Attributes:
		round: Communication round (1-based) in which the failure occurred.
		client_id: Client whose local update failed, or `None` for server-side steps.

	"""

	def __init__(self, round: int, client_id: int | None, message: str) -> None:
		"""Initialize with round and client context."""
		where = f"round {round}" + (
			f", client {client_id}" if client_id is not None else ""
		)
		super().__init__(f"{where}: {message}")
		self.round = round
		self.client_id = client_id
