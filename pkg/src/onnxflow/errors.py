"""Exception hierarchy shared by every stage of the flow."""

from __future__ import annotations


class FlowError(Exception):
    """Base class; ``code`` is the machine-greppable tag printed by the CLI."""

    code = "E_FLOW"


# ingestion
class MalformedFile(FlowError):
    code = "E_MALFORMED_FILE"


class UnsupportedOperator(FlowError):
    code = "E_UNSUPPORTED_OPERATOR"

    def __init__(self, op_type: str):
        super().__init__(op_type)
        self.op_type = op_type


class UnsupportedTensorType(FlowError):
    code = "E_UNSUPPORTED_TENSOR_TYPE"


class DanglingInput(FlowError):
    code = "E_DANGLING_INPUT"


class SchemaViolation(FlowError):
    code = "E_SCHEMA_VIOLATION"

    def __init__(self, path: str):
        super().__init__(path)
        self.path = path


# IR
class NonLinearTopology(FlowError):
    code = "E_NONLINEAR_TOPOLOGY"


class ShapeMismatch(FlowError):
    code = "E_SHAPE_MISMATCH"

    def __init__(self, layer: str, detail: str = ""):
        super().__init__(layer if not detail else f"{layer}: {detail}")
        self.layer = layer


class MissingWeights(FlowError):
    code = "E_MISSING_WEIGHTS"


class LengthMismatch(FlowError):
    code = "E_LENGTH_MISMATCH"


# quantization
class EmptyTensor(FlowError):
    code = "E_EMPTY_TENSOR"


class NonFiniteValue(FlowError):
    code = "E_NONFINITE_VALUE"


# simulation / composition
class DeadlockDetected(FlowError):
    code = "E_DEADLOCK"


class EmptyInput(FlowError):
    code = "E_EMPTY_INPUT"


class IncompatibleInterfaces(FlowError):
    code = "E_INCOMPATIBLE_INTERFACES"


class UnknownConfig(FlowError):
    code = "E_UNKNOWN_CONFIG"


# emission
class IoFailure(FlowError):
    code = "E_IO"


class UnrepresentableParameter(FlowError):
    code = "E_UNREPRESENTABLE_PARAMETER"


class DatasetError(FlowError):
    code = "E_DATASET"
