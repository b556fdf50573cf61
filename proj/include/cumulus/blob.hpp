#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cumulus/tensor.hpp"

namespace cumulus {

// CFW1 flat weight blobs: per entry a 16-byte header {magic "CFW1", dtype
// code, rank, 10 reserved zero bytes}, then the extents as 64-bit
// little-endian, then the raw values little-endian. A file holds any number
// of consecutive entries. Quant exponents for i8 entries are not part of the
// blob; they live in the model manifest, so i8 tensors come back with a
// provisional exponent of 0.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);  // ModelIOError on malformed/truncated input

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);  // reads entries until EOF

}  // namespace cumulus
