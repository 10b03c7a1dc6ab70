// Copyright 2026 The ddad Authors
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

/// Images of shape [n, c, h, w] with pixels in [0, 1] and optional labels.
struct ImageBatch {
  Tensor data;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return data.rows(); }
  bool has_labels() const { return !labels.empty(); }
  /// Pixels per image.
  std::size_t dim() const { return data.row_size(); }
  ImageBatch subset(std::span<const std::size_t> indices) const;
  /// Throws unless pixels lie in [0, 1] and labels (if any) in [0, classes).
  void validate() const;
};

// --- IDX -------------------------------------------------------------------

/// Reads IDX uint8 images (magic 0x00000803) and optional labels
/// (0x00000801). Pixels are divided by 255; the result has shape [n, 1, h, w].
ImageBatch load_idx(const std::filesystem::path& images,
                    const std::optional<std::filesystem::path>& labels = std::nullopt);
ImageBatch parse_idx(std::string_view image_bytes,
                     std::optional<std::string_view> label_bytes = std::nullopt);
/// Writes images (rounded to uint8) and, if present, labels.
void write_idx(const ImageBatch& batch, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels = std::nullopt);

// --- CSV point clouds ------------------------------------------------------

struct PointSet {
  Tensor points;  // [n, d]
  std::vector<int> labels;
};

/// Header row `x0,...,x{d-1},label`.
PointSet load_csv_points(const std::filesystem::path& path);
void save_csv_points(const std::filesystem::path& path, const PointSet& set);

// --- Synthetic corpora -----------------------------------------------------

struct BlobPair {
  Tensor class0;  // ~ N(0, I)
  Tensor class1;  // ~ N(delta * e1, I)
};

BlobPair synth_blobs(Rng& rng, std::size_t n_per_class, std::size_t dim, double delta);
/// Stacks both blob classes into one labelled set (class 0 rows first).
PointSet blobs_as_points(const BlobPair& blobs);

inline constexpr std::size_t kDigitSide = 8;
inline constexpr std::size_t kMaxDigitClasses = 4;
/// Glyphs are faint strokes on a mid-grey field. Class templates sit more than
/// 2 x 0.1 apart per stroke pixel, so an l_inf budget of 0.1 cannot turn one
/// template into another, yet a plainly trained classifier is still fooled.
inline constexpr double kDigitBackground = 0.4;
inline constexpr double kDigitContrast = 0.3;

/// 8x8 glyph for class k: horizontal bar, vertical bar, cross, frame.
Tensor digit_template(std::size_t k);
/// n images with labels cycling 0..K-1, each the class template plus clipped
/// Gaussian pixel noise.
ImageBatch synth_digits(Rng& rng, std::size_t n, std::size_t classes, double pixel_noise);

// --- Splits ----------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.6;
  double validation_fraction = 0.15;
  /// Size of the held-out reference batch carved from the training pool.
  std::size_t reference_size = 100;
  std::uint64_t seed = 0;
};

/// Pairwise-disjoint index sets. `reference` comes from the training pool but
/// is excluded from `train`, so no training loop ever sees it.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> reference;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

Split make_split(std::size_t n, const SplitSpec& spec);
/// Label-stratified split: every slice, S_V included, keeps the class mix.
Split make_split(std::span<const int> labels, const SplitSpec& spec);

// --- Model container -------------------------------------------------------

inline constexpr std::string_view kContainerMagic = "DDADMDL1";

/// Named f64 tensors plus string metadata.
///
/// Layout: 8-byte magic, u32 LE header length, UTF-8 JSON header listing
/// (name, dtype, shape) per tensor and the metadata map, then the raw LE f64
/// payload concatenated in header order.
class ModelContainer {
 public:
  void put(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  void set_meta(const std::string& key, std::string value) { metadata_[key] = std::move(value); }
  std::optional<std::string> meta(const std::string& key) const;
  std::string require_meta(const std::string& key) const;
  double meta_double(const std::string& key) const;

  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  /// Adds every tensor and metadata entry of `other` (names must not clash).
  void merge(const ModelContainer& other);

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
  std::map<std::string, std::string> metadata_;
};

std::string encode_container(const ModelContainer& c);
ModelContainer decode_container(std::string_view bytes);
/// Atomic: writes a sibling temp file then renames it over `path`.
void save_model(const std::filesystem::path& path, const ModelContainer& c);
ModelContainer load_model(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Atomic write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace ddad
