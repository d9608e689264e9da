// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Versioned binary checkpoint holding the experiment config, the
 *         resolved network shape, training progress, history, parameters and
 *         optimizer velocities.
 *
 * Layout, little-endian:
 *   8 bytes  magic "LTRCKPT1"
 *   u32      format version
 *   str      experiment config (JSON text)
 *   u32 x 4  input c, h, w and class count
 *   i32      next epoch, i32 best epoch, f64 best top-1, u8 centers ready
 *   str      history (JSON text)
 *   u32      tensor count, then per tensor: str name, u64 length, f64 values
 *   u32      state count, then per state tensor: str name, u64 length, f64 values
 *   u32      velocity count, then per velocity: u64 length, f64 values
 * where str is a u64 byte length followed by the bytes.
 */
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ltr/config.hpp"
#include "ltr/dataset_io.hpp"

namespace ltr {

inline constexpr char kCheckpointMagic[8] = {'L', 'T', 'R', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

struct TrainingState {
  int next_epoch = 0; ///< first epoch still to run (0-based)
  int best_epoch = -1;
  double best_top1 = -1.0;
  std::vector<EpochRecord> history;
};

namespace detail {

class ByteWriter {
public:
  template <typename T> void pod(const T &v) {
    const auto *p = reinterpret_cast<const char *>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string &s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  void doubles(std::span<const double> v) {
    pod<std::uint64_t>(v.size());
    buf_.append(reinterpret_cast<const char *>(v.data()), v.size() * sizeof(double));
  }
  void raw(const char *p, std::size_t n) { buf_.append(p, n); }
  const std::string &bytes() const { return buf_; }

private:
  std::string buf_;
};

class ByteReader {
public:
  ByteReader(std::string bytes, std::string origin) : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T> T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void raw(char *out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == buf_.size(); }

private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw io::IoError("checkpoint " + origin_ + " is truncated");
  }
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const ExperimentConfig &cfg, Model &model, const Sgd &opt,
                                        const TrainingState &state) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.pod(kCheckpointVersion);
  w.str(config_to_json(cfg).dump());
  const NetworkConfig &net = model.config();
  w.pod(static_cast<std::uint32_t>(net.input.c));
  w.pod(static_cast<std::uint32_t>(net.input.h));
  w.pod(static_cast<std::uint32_t>(net.input.w));
  w.pod(static_cast<std::uint32_t>(net.num_classes));
  w.pod(static_cast<std::int32_t>(state.next_epoch));
  w.pod(static_cast<std::int32_t>(state.best_epoch));
  w.pod(state.best_top1);
  w.pod(static_cast<std::uint8_t>(model.centers_ready() ? 1 : 0));
  json hist = json::array();
  for (const auto &r : state.history)
    hist.push_back(to_json(r));
  w.str(hist.dump());
  const auto params = model.params();
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (const auto &p : params) {
    w.str(p.name);
    w.doubles(p.value);
  }
  const auto states = model.state();
  w.pod(static_cast<std::uint32_t>(states.size()));
  for (const auto &st : states) {
    w.str(st.name);
    w.doubles(st.value);
  }
  w.pod(static_cast<std::uint32_t>(opt.velocity().size()));
  for (const auto &v : opt.velocity())
    w.doubles(v);
  return w.bytes();
}

inline void save_checkpoint(const std::filesystem::path &path, const ExperimentConfig &cfg,
                            Model &model, const Sgd &opt, const TrainingState &state) {
  const std::string bytes = serialize_checkpoint(cfg, model, opt, state);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw io::IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw io::IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  ExperimentConfig config;
  std::unique_ptr<Model> model;
  Sgd opt;
  TrainingState state;
};

inline LoadedCheckpoint parse_checkpoint(std::string bytes, const std::string &origin) {
  detail::ByteReader r(std::move(bytes), origin);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw io::IoError(origin + " is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw io::IoError("checkpoint " + origin + " has unsupported version " + std::to_string(version));

  LoadedCheckpoint ck;
  ck.config = config_from_json(json::parse(r.str()));
  NetworkConfig net = ck.config.network;
  net.input.n = 1;
  net.input.c = r.pod<std::uint32_t>();
  net.input.h = r.pod<std::uint32_t>();
  net.input.w = r.pod<std::uint32_t>();
  net.num_classes = static_cast<int>(r.pod<std::uint32_t>());
  ck.state.next_epoch = r.pod<std::int32_t>();
  ck.state.best_epoch = r.pod<std::int32_t>();
  ck.state.best_top1 = r.pod<double>();
  const bool centers_ready = r.pod<std::uint8_t>() != 0;
  for (const auto &h : json::parse(r.str()))
    ck.state.history.push_back(epoch_record_from_json(h));

  ck.model = std::make_unique<Model>(net, ck.config.seed);
  ck.model->set_centers_ready(centers_ready);
  auto params = ck.model->params();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size())
    throw io::IoError("checkpoint " + origin + " stores " + std::to_string(count) +
                      " tensors but the network has " + std::to_string(params.size()));
  for (auto &p : params) {
    const std::string name = r.str();
    const std::vector<double> v = r.doubles();
    if (name != p.name || v.size() != p.value.size())
      throw io::IoError("checkpoint " + origin + " tensor " + name + " does not fit network tensor " +
                        p.name);
    std::copy(v.begin(), v.end(), p.value.begin());
  }
  auto states = ck.model->state();
  const auto scount = r.pod<std::uint32_t>();
  if (scount != states.size())
    throw io::IoError("checkpoint " + origin + " stores " + std::to_string(scount) +
                      " state tensors but the network has " + std::to_string(states.size()));
  for (auto &st : states) {
    const std::string name = r.str();
    const std::vector<double> v = r.doubles();
    if (name != st.name || v.size() != st.value.size())
      throw io::IoError("checkpoint " + origin + " state " + name + " does not fit network state " +
                        st.name);
    std::copy(v.begin(), v.end(), st.value.begin());
  }
  const auto vcount = r.pod<std::uint32_t>();
  if (vcount != 0 && vcount != params.size())
    throw io::IoError("checkpoint " + origin + " has a mismatched optimizer state");
  for (std::uint32_t k = 0; k < vcount; ++k) {
    ck.opt.velocity().push_back(r.doubles());
    if (ck.opt.velocity().back().size() != params[k].value.size())
      throw io::IoError("checkpoint " + origin + " velocity for " + params[k].name + " has the wrong size");
  }
  if (!r.at_end())
    throw io::IoError("checkpoint " + origin + " has trailing bytes");
  return ck;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io::IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

} // namespace ltr
