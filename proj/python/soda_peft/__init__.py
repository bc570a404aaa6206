# Copyright 2026 The soda-peft Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for the soda adapter library."""

from ._core import (
    Adapter,
    ConfigError,
    NumericError,
    ParseError,
    ShapeError,
    cayley,
    choose_kron_factorization,
    csv_header,
    determinant,
    kron,
    lq,
    lr_sweep,
    matmul,
    merge,
    orthogonality_defect,
    param_count,
    stiefel_step,
    svd,
    train,
    verify,
)

__all__ = [
    "Adapter",
    "ConfigError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "cayley",
    "choose_kron_factorization",
    "csv_header",
    "determinant",
    "kron",
    "lq",
    "lr_sweep",
    "matmul",
    "merge",
    "orthogonality_defect",
    "param_count",
    "stiefel_step",
    "svd",
    "train",
    "verify",
]
__version__ = "0.1.0"
