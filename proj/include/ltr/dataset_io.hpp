// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset_io.hpp
 * @brief  On-disk dataset layouts: CIFAR-10/100 binary batches, a single
 *         array file plus a label file, and one directory of array files per
 *         class.
 *
 * Array file (.arr), little-endian:
 *   8 bytes  magic "LTRARR1\0"
 *   u64      sample count n
 *   u32 x 3  channels, height, width
 *   f32      n * c * h * w values, sample-major, NCHW
 * Label file: one integer label per line, same order as the array file.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ltr/lt_data.hpp"

namespace ltr::io {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raw CIFAR images kept as bytes; samples are normalised per channel on copy.
class CifarSource {
public:
  static constexpr std::size_t kPixels = 3 * 32 * 32;

  std::size_t size() const { return labels_.size(); }
  int label(std::size_t i) const { return labels_[i]; }
  Shape sample_shape() const { return {1, 3, 32, 32}; }
  int num_classes() const { return classes_; }

  void copy_sample(std::size_t i, float *out) const {
    static constexpr std::array<float, 3> mean{0.4914f, 0.4822f, 0.4465f};
    static constexpr std::array<float, 3> stdev{0.2023f, 0.1994f, 0.2010f};
    const std::uint8_t *px = pixels_.data() + i * kPixels;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 1024; ++k)
        out[c * 1024 + k] = (static_cast<float>(px[c * 1024 + k]) / 255.0f - mean[c]) / stdev[c];
  }

  /// Reads CIFAR-10 (`data_batch_1..5.bin` / `test_batch.bin`) or CIFAR-100 (`train.bin` / `test.bin`).
  static CifarSource load(const fs::path &dir, int classes, bool train) {
    CifarSource src;
    src.classes_ = classes;
    std::vector<fs::path> files;
    std::size_t label_bytes = 1;
    if (classes == 10) {
      if (train)
        for (int b = 1; b <= 5; ++b)
          files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
      else
        files.push_back(dir / "test_batch.bin");
    } else if (classes == 100) {
      files.push_back(dir / (train ? "train.bin" : "test.bin"));
      label_bytes = 2;
    } else {
      throw ConfigError("CIFAR has 10 or 100 classes");
    }
    const std::size_t record = label_bytes + kPixels;
    for (const auto &f : files) {
      std::ifstream in(f, std::ios::binary);
      if (!in)
        throw IoError("cannot open CIFAR batch " + f.string());
      std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (buf.empty() || buf.size() % record != 0)
        throw IoError("CIFAR batch " + f.string() + " has a truncated record");
      for (std::size_t off = 0; off < buf.size(); off += record) {
        const int y = static_cast<unsigned char>(buf[off + label_bytes - 1]);
        if (y >= classes)
          throw IoError("CIFAR batch " + f.string() + " contains label " + std::to_string(y));
        src.labels_.push_back(y);
        src.pixels_.insert(src.pixels_.end(),
                           reinterpret_cast<const std::uint8_t *>(buf.data() + off + label_bytes),
                           reinterpret_cast<const std::uint8_t *>(buf.data() + off + record));
      }
    }
    return src;
  }

private:
  int classes_ = 10;
  std::vector<int> labels_;
  std::vector<std::uint8_t> pixels_;
};

inline constexpr char kArrayMagic[8] = {'L', 'T', 'R', 'A', 'R', 'R', '1', '\0'};

struct ArrayData {
  Shape shape; ///< n = sample count
  std::vector<float> values;
};

inline void write_array(const fs::path &path, const ArrayData &a) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write array file " + path.string());
  out.write(kArrayMagic, 8);
  const std::uint64_t n = a.shape.n;
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(a.shape.c),
                                 static_cast<std::uint32_t>(a.shape.h),
                                 static_cast<std::uint32_t>(a.shape.w)};
  out.write(reinterpret_cast<const char *>(&n), sizeof n);
  out.write(reinterpret_cast<const char *>(dims), sizeof dims);
  out.write(reinterpret_cast<const char *>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(float)));
}

inline ArrayData read_array(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open array file " + path.string());
  char magic[8];
  std::uint64_t n = 0;
  std::uint32_t dims[3] = {0, 0, 0};
  in.read(magic, 8);
  in.read(reinterpret_cast<char *>(&n), sizeof n);
  in.read(reinterpret_cast<char *>(dims), sizeof dims);
  if (!in || std::memcmp(magic, kArrayMagic, 8) != 0)
    throw IoError(path.string() + " is not an array file");
  ArrayData a;
  a.shape = {static_cast<std::size_t>(n), dims[0], dims[1], dims[2]};
  a.values.resize(a.shape.numel());
  in.read(reinterpret_cast<char *>(a.values.data()),
          static_cast<std::streamsize>(a.values.size() * sizeof(float)));
  if (!in)
    throw IoError("array file " + path.string() + " is truncated");
  return a;
}

inline std::vector<int> read_labels(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open label file " + path.string());
  std::vector<int> labels;
  int y = 0;
  while (in >> y)
    labels.push_back(y);
  if (!in.eof())
    throw IoError("label file " + path.string() + " contains a non-integer entry");
  return labels;
}

inline DatasetSplit make_split(const ArrayData &a, const std::vector<int> &labels, int classes) {
  if (labels.size() != a.shape.n)
    throw IoError("array holds " + std::to_string(a.shape.n) + " samples but " +
                  std::to_string(labels.size()) + " labels were given");
  DatasetSplit s;
  s.shape = a.shape;
  s.shape.n = 1;
  s.inputs = a.values;
  s.labels = labels;
  s.classes = classes > 0 ? classes
                          : (labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1);
  s.source_ids.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    s.source_ids[i] = static_cast<std::int64_t>(i);
  s.rebuild_index();
  return s;
}

/**
 * Loads one split directory: either `inputs.arr` + `labels.txt`, or numeric
 * subdirectories (one per class) holding `.arr` files read in name order.
 */
inline DatasetSplit load_split_dir(const fs::path &dir, int classes = 0) {
  if (!fs::is_directory(dir))
    throw IoError("dataset directory " + dir.string() + " does not exist");
  if (fs::exists(dir / "inputs.arr"))
    return make_split(read_array(dir / "inputs.arr"), read_labels(dir / "labels.txt"), classes);

  std::vector<std::pair<int, fs::path>> class_dirs;
  for (const auto &e : fs::directory_iterator(dir)) {
    if (!e.is_directory())
      continue;
    const std::string name = e.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit))
      throw IoError("class directory name " + e.path().string() + " is not a label");
    class_dirs.emplace_back(std::stoi(name), e.path());
  }
  if (class_dirs.empty())
    throw IoError(dir.string() + " holds neither inputs.arr nor class directories");
  std::sort(class_dirs.begin(), class_dirs.end());

  ArrayData all;
  std::vector<int> labels;
  for (const auto &[label, path] : class_dirs) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".arr")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      ArrayData a = read_array(f);
      if (all.shape.c == 0) {
        all.shape = a.shape;
        all.shape.n = 0;
      } else if (a.shape.c != all.shape.c || a.shape.h != all.shape.h || a.shape.w != all.shape.w) {
        throw IoError("array file " + f.string() + " has a different sample shape");
      }
      all.values.insert(all.values.end(), a.values.begin(), a.values.end());
      all.shape.n += a.shape.n;
      labels.insert(labels.end(), a.shape.n, label);
    }
  }
  return make_split(all, labels, classes);
}

/// Re-materialises a split from a manifest's per-class source ids.
template <SampleSource Source>
DatasetSplit apply_manifest(const Source &source, const nlohmann::json &manifest) {
  if (manifest.value("format", "") != "ltr-split-manifest")
    throw IoError("not a split manifest");
  const LongTailSpec spec = spec_from_json(manifest.at("spec"));
  const auto ids = manifest.at("per_class_ids").get<std::vector<std::vector<std::int64_t>>>();
  std::vector<std::int64_t> keep;
  for (const auto &v : ids)
    keep.insert(keep.end(), v.begin(), v.end());
  std::sort(keep.begin(), keep.end());
  DatasetSplit out;
  out.shape = source.sample_shape();
  out.shape.n = 1;
  out.classes = source.num_classes();
  out.spec = spec;
  std::vector<float> buf(out.shape.sample_size());
  for (std::int64_t id : keep) {
    if (id < 0 || static_cast<std::size_t>(id) >= source.size())
      throw IoError("manifest id " + std::to_string(id) + " outside the source dataset");
    source.copy_sample(static_cast<std::size_t>(id), buf.data());
    out.push_back(buf, source.label(static_cast<std::size_t>(id)), id);
  }
  out.rebuild_index();
  return out;
}

} // namespace ltr::io
