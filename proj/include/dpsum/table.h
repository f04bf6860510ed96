// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Plain tables rendered as aligned text or RFC 4180 CSV. Every tabular CLI
// output goes through this type so both renderings stay in sync.

#ifndef DPSUM_TABLE_H_
#define DPSUM_TABLE_H_

#include <string>
#include <vector>

namespace dpsum {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws ShapeError if a row's width differs from the header's.
  void AddRow(std::vector<std::string> row);

  // Columns padded to their widest cell and separated by two spaces;
  // cells that parse as numbers are right-aligned.
  std::string ToText() const;
  // Comma-separated with quoting where needed, '\n' line endings.
  std::string ToCsv() const;
};

}  // namespace dpsum

#endif  // DPSUM_TABLE_H_
