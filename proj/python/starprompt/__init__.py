# Copyright 2026 The StarPrompt Authors
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
"""Python bindings for the starprompt C++ core."""

from ._core import (
    ConfigError,
    EncoderConfig,
    Error,
    ExperimentConfig,
    FormatError,
    Hyperparams,
    IoError,
    LabelError,
    NumericError,
    ShapeError,
    StateError,
    Trainer,
    ablate,
    config_keys,
    faa,
    final_forgetting,
    fit_em,
    gradcheck,
    load_config,
    parse_config,
    preset,
    preset_names,
    run,
    variant_names,
)

__all__ = [name for name in dir() if not name.startswith("_")]
