__version__ = "0.1.0"

from .connections import (  # noqa: E402
    PreservationResidual,
    covariant_derivative_11,
    cyclic_torsion_form,
    levi_civita,
    metric_connection_by_solve,
    metric_connection_with_torsion,
    metric_preservation_residual,
    omega_connection_closed_form,
    omega_connection_from_sym,
    omega_connection_symplectic_form,
    omega_preservation_residual,
)
from .fields import (  # noqa: E402
    ChartDomain,
    FieldJet,
    ManifoldSpec,
    TensorFieldSpec,
    TorsionFieldSpec,
    eval_jet,
    eval_jets,
    exterior_derivative_2form,
    finite_diff_matrix_field,
    load_manifold_spec,
    read_manifold_spec,
    validate_fields,
)
from .gromov import (  # noqa: E402
    CertifyConfig,
    CertifyReport,
    GromovFrame,
    KahlerVerdict,
    certify_kahler,
    frame_residuals,
    gromov_J,
    nijenhuis,
    operator_A,
    sqrt_neg_A_squared,
)
from .sequence import (  # noqa: E402
    SequenceConfig,
    SequenceReport,
    detect_period,
    run_sequence,
    step_pair,
)
from .tensor_container import TensorContainer  # noqa: E402
from .tensor_dataclass import TensorDataClass  # noqa: E402
from .tensors import (  # noqa: E402
    BilinearFormValue,
    ConnectionCoeffs,
    TorsionTensor,
    lower_first_index,
    max_abs_distance,
    raise_first_index,
    symmetric_part,
    torsion,
)
from .expr import format_expr, parse_expr  # noqa: E402

__all__ = [
    "BilinearFormValue",
    "CertifyConfig",
    "CertifyReport",
    "ChartDomain",
    "ConnectionCoeffs",
    "FieldJet",
    "GromovFrame",
    "KahlerVerdict",
    "ManifoldSpec",
    "PreservationResidual",
    "SequenceConfig",
    "SequenceReport",
    "TensorContainer",
    "TensorDataClass",
    "TensorFieldSpec",
    "TorsionFieldSpec",
    "TorsionTensor",
    "certify_kahler",
    "covariant_derivative_11",
    "cyclic_torsion_form",
    "detect_period",
    "eval_jet",
    "eval_jets",
    "exterior_derivative_2form",
    "finite_diff_matrix_field",
    "format_expr",
    "frame_residuals",
    "gromov_J",
    "levi_civita",
    "load_manifold_spec",
    "lower_first_index",
    "max_abs_distance",
    "metric_connection_by_solve",
    "metric_connection_with_torsion",
    "metric_preservation_residual",
    "nijenhuis",
    "omega_connection_closed_form",
    "omega_connection_from_sym",
    "omega_connection_symplectic_form",
    "omega_preservation_residual",
    "operator_A",
    "parse_expr",
    "raise_first_index",
    "read_manifold_spec",
    "run_sequence",
    "sqrt_neg_A_squared",
    "step_pair",
    "symmetric_part",
    "torsion",
    "validate_fields",
]
