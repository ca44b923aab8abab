# Copyright 2026 The gradleak Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for the gradleak C++ core."""

from gradleak._core import (
    Classifier,
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    default_config,
    extract_candidates,
    gaussian_sigma,
    head_update,
    ir_match,
    normalized_entropy,
    psnr,
    random_head,
    run_stage,
    scan_checkpoint,
    ssim,
    synth_dataset,
)

__all__ = [
    "Classifier",
    "ConfigError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "default_config",
    "extract_candidates",
    "gaussian_sigma",
    "head_update",
    "ir_match",
    "normalized_entropy",
    "psnr",
    "random_head",
    "run_stage",
    "scan_checkpoint",
    "ssim",
    "synth_dataset",
]
