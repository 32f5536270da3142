/*
 *   Copyright 2026 The gmcomplete Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace gmc {

// All messages are prefixed "module: operation: detail" so a failing CLI run
// names where it died.

struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct parameter_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct schema_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gmc
