"""Exception types shared across the package.

Every error carries a short machine-readable ``code``; the CLI uses it to
print ``error[CODE]:`` lines and to pick an exit status.
"""


class ZooError(Exception):
    """Base class for every error raised by this package."""

    code = "internal"


class DimensionError(ZooError):
    """A kernel was called with tensors whose dimensions do not line up."""

    code = "shape"


class ShapeError(ZooError):
    """Shape inference or input validation failed for a graph node."""

    code = "shape"

    def __init__(self, message: str, node: str | None = None, axis: int | None = None):
        super().__init__(message)
        self.node = node
        self.axis = axis


class ParameterError(ZooError):
    """A parameter tensor violates its contract (e.g. negative variance)."""

    code = "param"


class GraphError(ZooError):
    """A graph is structurally broken (cycle, dangling edge, bad ids)."""

    code = "graph"


class ExecutionError(ZooError):
    """Execution could not start or finish (missing input, missing weights)."""

    code = "exec"


class ContainerError(ZooError):
    """A weight container is malformed; ``offset`` is the failing byte."""

    code = "container"

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ManifestError(ZooError):
    """A service manifest failed to parse; ``field`` is the offending path."""

    code = "manifest"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class CompositionError(ZooError):
    """Two adjacent services in a composition are incompatible."""

    code = "compat"

    def __init__(self, message: str, report=None, pair: tuple[str, str] | None = None):
        super().__init__(message)
        self.report = report
        self.pair = pair


class MissingServiceError(ZooError):
    """A referenced service is not present locally or remotely."""

    code = "missing"


class IntegrityError(ZooError):
    """Artifact bytes do not match the content hash in the manifest."""

    code = "integrity"


class RegistryError(ZooError):
    """A registry request failed (bad endpoint, HTTP error status)."""

    code = "network"


class StartupError(ZooError):
    """The inference server could not start (e.g. port already in use)."""

    code = "startup"
