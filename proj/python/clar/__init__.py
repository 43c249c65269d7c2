# Copyright (c) 2026 CLAR Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""CIF-aligned localized hotword retrieval: python surface over the C++ core."""

from ._clar import (  # noqa: F401
    Bank,
    ClarError,
    Model,
    accumulate_and_fire,
    biased_metrics,
    cer,
    edit_distance,
    scale_weights_to_length,
)

__all__ = [
    "Bank",
    "ClarError",
    "Model",
    "accumulate_and_fire",
    "biased_metrics",
    "cer",
    "edit_distance",
    "scale_weights_to_length",
]
