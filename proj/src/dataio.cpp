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

#include "ddad/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ddad/errors.hpp"

namespace ddad {

// --- ImageBatch ------------------------------------------------------------

ImageBatch ImageBatch::subset(std::span<const std::size_t> indices) const {
  ImageBatch out;
  out.data = gather_rows(data, indices);
  out.classes = classes;
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(labels[i]);
  }
  return out;
}

void ImageBatch::validate() const {
  for (double v : data.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image pixel outside [0, 1]");
  }
  if (has_labels()) {
    if (labels.size() != size()) {
      throw ShapeError(std::to_string(labels.size()) + " labels for " +
                       std::to_string(size()) + " images");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
      }
    }
  }
}

// --- files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// --- IDX -------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::string_view bytes, std::size_t offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

void append_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace

ImageBatch parse_idx(std::string_view image_bytes, std::optional<std::string_view> label_bytes) {
  if (image_bytes.size() < 16) throw FormatError("IDX images: truncated header");
  const std::uint32_t magic = read_be32(image_bytes, 0);
  if (magic != kIdxImages) {
    throw FormatError("IDX images: bad magic 0x" + [&] {
      std::ostringstream os;
      os << std::hex << magic;
      return os.str();
    }());
  }
  const std::size_t n = read_be32(image_bytes, 4);
  const std::size_t h = read_be32(image_bytes, 8);
  const std::size_t w = read_be32(image_bytes, 12);
  if (n == 0 || h == 0 || w == 0) throw FormatError("IDX images: zero dimension in header");
  // Bound the product before multiplying; a hostile header can overflow it.
  if (h > (std::size_t{1} << 16) || w > (std::size_t{1} << 16) ||
      n > (image_bytes.size() - 16) / (h * w)) {
    throw FormatError("IDX images: header claims more pixels than the file holds");
  }
  const std::size_t expected = 16 + n * h * w;
  if (image_bytes.size() < expected) {
    throw FormatError("IDX images: truncated payload (" + std::to_string(image_bytes.size()) +
                      " of " + std::to_string(expected) + " bytes)");
  }
  if (image_bytes.size() > expected) throw FormatError("IDX images: trailing bytes");

  ImageBatch batch;
  batch.data = Tensor({n, 1, h, w});
  const auto* px = reinterpret_cast<const unsigned char*>(image_bytes.data()) + 16;
  for (std::size_t i = 0; i < n * h * w; ++i) batch.data[i] = px[i] / 255.0;

  if (label_bytes) {
    const std::string_view lb = *label_bytes;
    if (lb.size() < 8) throw FormatError("IDX labels: truncated header");
    if (read_be32(lb, 0) != kIdxLabels) throw FormatError("IDX labels: bad magic");
    const std::size_t nl = read_be32(lb, 4);
    if (lb.size() < 8 + nl) throw FormatError("IDX labels: truncated payload");
    if (lb.size() > 8 + nl) throw FormatError("IDX labels: trailing bytes");
    if (nl != n) {
      throw ShapeError("IDX label count " + std::to_string(nl) + " does not match image count " +
                       std::to_string(n));
    }
    const auto* lp = reinterpret_cast<const unsigned char*>(lb.data()) + 8;
    int max_label = 0;
    batch.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      batch.labels[i] = lp[i];
      max_label = std::max(max_label, batch.labels[i]);
    }
    batch.classes = static_cast<std::size_t>(max_label) + 1;
  }
  return batch;
}

ImageBatch load_idx(const std::filesystem::path& images,
                    const std::optional<std::filesystem::path>& labels) {
  const std::string ib = read_file(images);
  if (!labels) return parse_idx(ib);
  const std::string lb = read_file(*labels);
  return parse_idx(ib, std::string_view(lb));
}

void write_idx(const ImageBatch& batch, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels) {
  const Shape& s = batch.data.shape();
  std::size_t h = 1, w = 1;
  if (s.size() == 4) {
    if (s[1] != 1) throw ShapeError("write_idx: only single-channel images are supported");
    h = s[2];
    w = s[3];
  } else if (s.size() == 3) {
    h = s[1];
    w = s[2];
  } else {
    throw ShapeError("write_idx: expected [n,1,h,w], got " + shape_str(s));
  }
  std::string out;
  append_be32(out, kIdxImages);
  append_be32(out, static_cast<std::uint32_t>(batch.size()));
  append_be32(out, static_cast<std::uint32_t>(h));
  append_be32(out, static_cast<std::uint32_t>(w));
  for (double v : batch.data.data()) {
    out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_file_atomic(images, out);
  if (labels) {
    if (!batch.has_labels()) throw InvalidArgument("write_idx: batch has no labels");
    std::string lo;
    append_be32(lo, kIdxLabels);
    append_be32(lo, static_cast<std::uint32_t>(batch.labels.size()));
    for (int y : batch.labels) lo.push_back(static_cast<char>(y));
    write_file_atomic(*labels, lo);
  }
}

// --- CSV -------------------------------------------------------------------

PointSet load_csv_points(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 2 || line.rfind("label") == std::string::npos) {
    throw FormatError(path.string() + ": header must be x0,...,x{d-1},label");
  }
  const std::size_t d = cols - 1;
  std::vector<double> data;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::string field = line.substr(start, comma - start);
      double v = 0.0;
      const char* b = field.data();
      auto r = std::from_chars(b, b + field.size(), v);
      if (r.ec != std::errc()) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" +
                          field + "'");
      }
      fields.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != cols) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(cols) + " fields");
    }
    data.insert(data.end(), fields.begin(), fields.end() - 1);
    labels.push_back(static_cast<int>(fields.back()));
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");
  PointSet set;
  set.points = Tensor({labels.size(), d}, std::move(data));
  set.labels = std::move(labels);
  return set;
}

void save_csv_points(const std::filesystem::path& path, const PointSet& set) {
  std::string out;
  const std::size_t d = set.points.row_size();
  for (std::size_t k = 0; k < d; ++k) out += "x" + std::to_string(k) + ",";
  out += "label\n";
  for (std::size_t i = 0; i < set.points.rows(); ++i) {
    for (double v : set.points.row(i)) out += format_double(v) + ",";
    out += std::to_string(i < set.labels.size() ? set.labels[i] : 0) + "\n";
  }
  write_file_atomic(path, out);
}

// --- Synthetic -------------------------------------------------------------

BlobPair synth_blobs(Rng& rng, std::size_t n_per_class, std::size_t dim, double delta) {
  if (dim < 1) throw InvalidArgument("synth_blobs: dim must be >= 1");
  if (!(delta >= 0.0)) throw InvalidArgument("synth_blobs: delta must be >= 0");
  BlobPair b;
  b.class0 = sample_gaussian(rng, {n_per_class, dim}, 0.0, 1.0);
  b.class1 = sample_gaussian(rng, {n_per_class, dim}, 0.0, 1.0);
  for (std::size_t i = 0; i < n_per_class; ++i) b.class1.at(i, 0) += delta;
  return b;
}

PointSet blobs_as_points(const BlobPair& blobs) {
  const Tensor parts[] = {blobs.class0, blobs.class1};
  PointSet set;
  set.points = concat_rows(parts);
  set.labels.assign(blobs.class0.rows(), 0);
  set.labels.insert(set.labels.end(), blobs.class1.rows(), 1);
  return set;
}

Tensor digit_template(std::size_t k) {
  if (k >= kMaxDigitClasses) throw InvalidArgument("digit_template: class out of range");
  constexpr std::size_t n = kDigitSide;
  Tensor t({1, n, n}, kDigitBackground);
  // Strokes are half the image wide; the box is a two-pixel frame.
  auto in_band = [](std::size_t i) { return i >= 2 && i < n - 2; };
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      bool ink = false;
      switch (k) {
        case 0: ink = in_band(r); break;
        case 1: ink = in_band(c); break;
        case 2: ink = in_band(r) || in_band(c); break;
        default: ink = !(in_band(r) && in_band(c)); break;
      }
      if (ink) t[r * n + c] += kDigitContrast;
    }
  }
  return t;
}

ImageBatch synth_digits(Rng& rng, std::size_t n, std::size_t classes, double pixel_noise) {
  if (classes < 1 || classes > kMaxDigitClasses) {
    throw InvalidArgument("synth_digits: classes must be in [1, 4]");
  }
  if (!(pixel_noise >= 0.0)) throw InvalidArgument("synth_digits: pixel noise must be >= 0");
  constexpr std::size_t side = kDigitSide;
  ImageBatch batch;
  batch.data = Tensor({n, 1, side, side});
  batch.classes = classes;
  batch.labels.resize(n);
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < classes; ++k) templates.push_back(digit_template(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = i % classes;
    batch.labels[i] = static_cast<int>(y);
    auto row = batch.data.row(i);
    for (std::size_t p = 0; p < row.size(); ++p) {
      double v = templates[y][p];
      if (pixel_noise > 0.0) v += pixel_noise * rng.normal();
      row[p] = std::clamp(v, 0.0, 1.0);
    }
  }
  return batch;
}

// --- Splits ----------------------------------------------------------------

namespace {

Split split_from_order(const std::vector<std::size_t>& order, const SplitSpec& spec) {
  const std::size_t n = order.size();
  if (!(spec.train_fraction > 0.0) || !(spec.validation_fraction >= 0.0) ||
      spec.train_fraction + spec.validation_fraction > 1.0) {
    throw InvalidArgument("make_split: fractions must be positive and sum to at most 1");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.validation_fraction * n));
  if (spec.reference_size >= n_train) {
    throw InvalidArgument("make_split: reference batch of " + std::to_string(spec.reference_size) +
                          " does not fit in a training pool of " + std::to_string(n_train));
  }
  auto at = [&](std::size_t i) { return order.begin() + static_cast<std::ptrdiff_t>(i); };
  Split s;
  const std::size_t n_fit = n_train - spec.reference_size;
  s.train.assign(at(0), at(n_fit));
  s.reference.assign(at(n_fit), at(n_train));
  s.validation.assign(at(n_train), at(n_train + n_val));
  s.test.assign(at(n_train + n_val), order.end());
  return s;
}

}  // namespace

Split make_split(std::size_t n, const SplitSpec& spec) {
  Rng rng(spec.seed);
  return split_from_order(rng.permutation(n), spec);
}

Split make_split(std::span<const int> labels, const SplitSpec& spec) {
  // Shuffle within each class, then interleave classes in proportion to their
  // counts: item j of class c sorts at (j + u_c) / n_c. Any contiguous slice of
  // the result then carries the corpus class mix up to rounding.
  Rng rng(spec.seed);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  struct Keyed {
    double key;
    int label;
    std::size_t index;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(labels.size());
  for (auto& [label, members] : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    const double offset = rng.uniform();
    const double count = static_cast<double>(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      keyed.push_back({(static_cast<double>(j) + offset) / count, label, members[j]});
    }
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.label < b.label;
  });
  std::vector<std::size_t> order;
  order.reserve(keyed.size());
  for (const auto& k : keyed) order.push_back(k.index);
  return split_from_order(order, spec);
}

// --- Container -------------------------------------------------------------

void ModelContainer::put(const std::string& name, Tensor value) {
  if (name.empty()) throw InvalidArgument("container tensor name must be non-empty");
  if (find(name)) throw InvalidArgument("duplicate container tensor name '" + name + "'");
  tensors_.emplace_back(name, std::move(value));
}

const Tensor* ModelContainer::find(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& ModelContainer::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError("container has no tensor named '" + name + "'");
  return *t;
}

std::optional<std::string> ModelContainer::meta(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) return std::nullopt;
  return it->second;
}

std::string ModelContainer::require_meta(const std::string& key) const {
  auto v = meta(key);
  if (!v) throw FormatError("container metadata is missing '" + key + "'");
  return *v;
}

double ModelContainer::meta_double(const std::string& key) const {
  const std::string s = require_meta(key);
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("container metadata '" + key + "' is not a number: " + s);
  }
  return v;
}

void ModelContainer::merge(const ModelContainer& other) {
  for (const auto& [n, t] : other.tensors_) put(n, t);
  for (const auto& [k, v] : other.metadata_) metadata_[k] = v;
}

namespace {

void put_le64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b)
    bits |= std::uint64_t{static_cast<unsigned char>(p[b])} << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_container(const ModelContainer& c) {
  nlohmann::json header;
  header["metadata"] = nlohmann::json::object();
  for (const auto& [k, v] : c.metadata()) header["metadata"][k] = v;
  header["tensors"] = nlohmann::json::array();
  std::size_t payload = 0;
  for (const auto& [name, t] : c.tensors()) {
    header["tensors"].push_back({{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}});
    payload += 8 * t.numel();
  }
  const std::string text = header.dump();
  std::string out(kContainerMagic);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xff));
  out += text;
  out.reserve(out.size() + payload);
  for (const auto& [name, t] : c.tensors()) {
    for (double v : t.data()) put_le64(out, v);
  }
  return out;
}

ModelContainer decode_container(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 8) != kContainerMagic) {
    throw FormatError("model container: bad magic");
  }
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b)
    len |= std::uint32_t{static_cast<unsigned char>(bytes[8 + b])} << (8 * b);
  if (bytes.size() < 12 + std::size_t{len}) throw FormatError("model container: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model container: malformed header: ") + e.what());
  }
  ModelContainer c;
  std::size_t offset = 12 + len;
  try {
    for (const auto& [k, v] : header.at("metadata").items()) c.set_meta(k, v.get<std::string>());
    std::size_t need = 0;
    std::vector<std::pair<std::string, Shape>> entries;
    for (const auto& e : header.at("tensors")) {
      if (e.at("dtype").get<std::string>() != "f64") {
        throw FormatError("model container: unsupported dtype");
      }
      entries.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
      need += 8 * shape_numel(entries.back().second);
    }
    if (bytes.size() - offset != need) {
      throw FormatError("model container: payload is " + std::to_string(bytes.size() - offset) +
                        " bytes, header declares " + std::to_string(need));
    }
    for (auto& [name, shape] : entries) {
      Tensor t(shape);
      for (double& v : t.data()) {
        v = get_le64(bytes.data() + offset);
        offset += 8;
      }
      if (c.contains(name)) throw FormatError("model container: duplicate tensor '" + name + "'");
      c.put(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model container: malformed header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model container: bad shape: ") + e.what());
  }
  return c;
}

void save_model(const std::filesystem::path& path, const ModelContainer& c) {
  write_file_atomic(path, encode_container(c));
}

ModelContainer load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("missing " + path.string());
  return decode_container(read_file(path));
}

}  // namespace ddad
