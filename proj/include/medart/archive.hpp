#pragma once

// Versioned tensor archive shared by model and adapter checkpoints.
//
// Layout (little-endian):
//   magic      8 bytes  "MEDARTCK"
//   version    u32      (currently 1)
//   meta_len   u64
//   meta       meta_len bytes of UTF-8 JSON (object; "kind" names the payload)
//   count      u64
//   count x tensor:
//     name_len u32, name bytes
//     ndim     u32, dims u64[ndim]
//     values   f64[prod(dims)], row-major

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "medart/tensor.hpp"

namespace medart {

inline constexpr uint32_t kArchiveVersion = 1;

struct Archive {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void write_archive(const std::string& path, const Archive& ar);
Archive read_archive(const std::string& path);

}  // namespace medart
