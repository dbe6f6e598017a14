"""Kashin decompositions and codebook quantization over structured orthogonal bases."""

from ._kernels import BACKEND
from .decomp import (
    Branch,
    ConvergenceReport,
    MatrixDecomposition,
    VectorDecomposition,
    kashin_matrix,
    kashin_vector,
    project,
    reconstruct,
    sign_vector,
)
from .errors import KashinError
from .ortho import (
    Kind,
    OrthogonalOperator,
    apply,
    apply_adjoint,
    from_dense,
    make_butterfly,
    make_dct,
    make_householder,
    make_operator,
    make_random_orthogonal,
    to_dense,
)
from .quantize import Codebook, Mode, QuantizedTensor, decode, encode, fit_codebook

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Branch", "ConvergenceReport", "MatrixDecomposition", "VectorDecomposition",
    "kashin_matrix", "kashin_vector", "project", "reconstruct", "sign_vector", "KashinError",
    "Kind", "OrthogonalOperator", "apply", "apply_adjoint", "from_dense", "make_butterfly",
    "make_dct", "make_householder", "make_operator", "make_random_orthogonal", "to_dense",
    "Codebook", "Mode", "QuantizedTensor", "decode", "encode", "fit_codebook",
]
