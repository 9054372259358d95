# Copyright 2026 The ctcslu Authors.
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

"""CTC slot filling: tag codec, CTC loss, BLSTM model, n-gram LM, decoding and metrics."""

from ._core import (
    Checkpoint,
    Error,
    NgramModel,
    TagInventory,
    Vocabulary,
    beam_decode,
    bio_to_chunk,
    brute_force_ctc,
    chunk_to_bio,
    ctc_loss,
    ctc_star_loss,
    edit_distance,
    evaluate,
    generate_corpus,
    greedy_decode,
    log_softmax,
    parse_chunks,
    read_split,
    run_experiment,
    star_map,
    strip_tags,
)

__all__ = [
    "Checkpoint",
    "Error",
    "NgramModel",
    "TagInventory",
    "Vocabulary",
    "beam_decode",
    "bio_to_chunk",
    "brute_force_ctc",
    "chunk_to_bio",
    "ctc_loss",
    "ctc_star_loss",
    "edit_distance",
    "evaluate",
    "generate_corpus",
    "greedy_decode",
    "log_softmax",
    "parse_chunks",
    "read_split",
    "run_experiment",
    "star_map",
    "strip_tags",
]
