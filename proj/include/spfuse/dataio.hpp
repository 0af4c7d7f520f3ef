// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>

#include "spfuse/nn.hpp"

namespace spfuse {

// Filesystem or format failure; carries the offending path in the message.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A labeled corpus plus the class vocabulary shared by every scene.
struct Dataset {
  int n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<LabeledScene> scenes;

  void validate() const;
};

// Directory layout: manifest.json + one self-describing binary file per scene.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_metrics_csv(const SegMetrics& m, const std::vector<std::string>& class_names,
                       const std::filesystem::path& path);
void write_metrics_json(const SegMetrics& m, const std::filesystem::path& path);

namespace detail {

// Append-only little-endian byte buffer with a trailing integrity digest.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <class Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    using Plain = typename Derived::PlainObject;
    const Plain& p = m.derived();
    raw(p.data(), sizeof(typename Derived::Scalar) * static_cast<std::size_t>(p.size()));
  }
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  // Writes buffer + FNV-1a digest of it, atomically via a temp file.
  void commit(const std::filesystem::path& path) const {
    const std::uint64_t digest = fnv1a(buf_.data(), buf_.size());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open for write: " + path.string());
      f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      f.write(reinterpret_cast<const char*>(&digest), sizeof digest);
      if (!f) throw IoError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::string buf_;
};

// Bounds-checked reader over a digest-verified file image.
class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) : name_(path.string()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + name_);
    std::string all((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
    if (all.size() < sizeof(std::uint64_t)) throw IoError("corrupted file: " + name_);
    std::uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - sizeof stored, sizeof stored);
    buf_ = all.substr(0, all.size() - sizeof stored);
    if (fnv1a(buf_.data(), buf_.size()) != stored)
      throw IoError("corrupted file (bad digest): " + name_);
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class M>
  M matrix() {
    const auto rows = static_cast<Eigen::Index>(u64());
    const auto cols = static_cast<Eigen::Index>(u64());
    if (rows < 0 || cols < 0 ||
        (M::ColsAtCompileTime != Eigen::Dynamic && cols != M::ColsAtCompileTime) ||
        (M::RowsAtCompileTime != Eigen::Dynamic && rows != M::RowsAtCompileTime))
      throw IoError("corrupted file (bad matrix shape): " + name_);
    M m(rows, cols);
    const std::size_t bytes =
        sizeof(typename M::Scalar) * static_cast<std::size_t>(m.size());
    need(bytes);
    std::memcpy(m.data(), buf_.data() + pos_, bytes);
    pos_ += bytes;
    return m;
  }
  void done() const {
    if (pos_ != buf_.size()) throw IoError("corrupted file (trailing bytes): " + name_);
  }
  const std::string& name() const { return name_; }

 private:
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("corrupted file (truncated): " + name_);
  }
  std::string name_;
  std::string buf_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kSceneMagic = 0x53435350;       // "PSCS" LE
inline constexpr std::uint32_t kCheckpointMagic = 0x4b435053;  // "SPCK" LE
inline constexpr std::uint32_t kFormatVersion = 1;

}  // namespace detail

// Model parameters plus SGD momentum buffers and bookkeeping, stored as one
// digest-protected binary blob.
template <class S>
struct Checkpoint {
  std::int64_t epoch = 0;
  std::uint64_t frozen_digest = 0;
  std::map<std::string, std::string> meta;
  ParamBundle<S> params;
  ParamBundle<S> momentum;
};

template <class S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.u32(detail::kCheckpointMagic);
  w.u32(detail::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(sizeof(S)));
  w.i64(ckpt.epoch);
  w.u64(ckpt.frozen_digest);
  w.u64(ckpt.meta.size());
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  const auto put_bundle = [&](const ParamBundle<S>& b) {
    w.u64(b.items().size());
    for (const auto& it : b.items()) {
      w.str(it.name);
      w.matrix(it.value);
    }
  };
  put_bundle(ckpt.params);
  put_bundle(ckpt.momentum);
  w.commit(path);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path,
                              std::optional<std::uint64_t> expected_frozen_digest = {}) {
  detail::ByteReader r(path);
  if (r.u32() != detail::kCheckpointMagic)
    throw IoError("not a checkpoint file: " + r.name());
  if (r.u32() != detail::kFormatVersion)
    throw IoError("unsupported checkpoint version: " + r.name());
  if (r.u32() != sizeof(S))
    throw IoError("checkpoint precision mismatch: " + r.name());
  Checkpoint<S> ckpt;
  ckpt.epoch = r.i64();
  ckpt.frozen_digest = r.u64();
  const std::uint64_t n_meta = r.u64();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  const auto get_bundle = [&] {
    ParamBundle<S> b;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = r.str();
      b.add(name, r.template matrix<MatX<S>>());
    }
    return b;
  };
  ckpt.params = get_bundle();
  ckpt.momentum = get_bundle();
  r.done();
  if (expected_frozen_digest && ckpt.frozen_digest != *expected_frozen_digest)
    throw IoError("frozen-encoder digest mismatch: " + r.name());
  return ckpt;
}

}  // namespace spfuse
