/*
 * Copyright 2026 The StarPrompt Authors
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
#include "starprompt/feature_file.hpp"

#include <cmath>
#include <string>

#include "starprompt/binary_io.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

void write_feature_file(const std::filesystem::path& path, const FeatureSet& set) {
  if (!set.features.defined() || set.labels.size() != set.features.rows()) {
    throw FormatError("write_feature_file: need one label per feature row");
  }
  BinaryWriter w;
  w.bytes(std::string_view(kFeatureMagic, 8));
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(set.features.rows()));
  w.u32(static_cast<std::uint32_t>(set.features.cols()));
  for (double v : set.features.data()) w.f32(static_cast<float>(v));
  for (std::uint32_t label : set.labels) w.u32(label);
  w.save(path);
}

FeatureSet load_feature_file(const std::filesystem::path& path, std::optional<std::uint32_t> num_classes) {
  BinaryReader r = BinaryReader::open(path);
  r.expect_magic(std::string_view(kFeatureMagic, 8));
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (count == 0 || dim == 0) {
    throw FormatError(path.string() + ": count and dim must be positive (count=" + std::to_string(count) +
                      ", dim=" + std::to_string(dim) + ")");
  }
  const std::uint64_t expected = (std::uint64_t(count) * dim + count) * 4;
  if (r.remaining() != expected) {
    throw FormatError(path.string() + ": length mismatch, header declares " + std::to_string(expected) +
                      " payload bytes but " + std::to_string(r.remaining()) + " are present");
  }
  std::vector<double> values(std::size_t(count) * dim);
  for (double& v : values) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite feature value");
  }
  FeatureSet set;
  set.features = Tensor::from_data(count, dim, std::move(values));
  set.labels.resize(count);
  for (auto& label : set.labels) {
    label = r.u32();
    if (num_classes && label >= *num_classes) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " out of range for " +
                        std::to_string(*num_classes) + " classes");
    }
  }
  return set;
}

}  // namespace starprompt
