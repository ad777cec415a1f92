# This file makes the tests/tensor_dataclass directory a Python package
