// Copyright 2026 The ctcslu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CTCSLU_UTF8_HPP_
#define CTCSLU_UTF8_HPP_

#include <string>
#include <string_view>

namespace ctcslu::utf8 {

// Strict decoder: overlong forms, surrogates and truncated sequences raise
// an encoding error.
std::u32string decode(std::string_view text);

std::string encode(std::u32string_view text);
std::string encode(char32_t code_point);

// "U+00E9" style label used in diagnostics.
std::string code_point_label(char32_t code_point);

}  // namespace ctcslu::utf8

#endif  // CTCSLU_UTF8_HPP_
