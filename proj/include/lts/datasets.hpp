#ifndef LTS_DATASETS_HPP
#define LTS_DATASETS_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lts/tensor.hpp"

namespace lts {

template <typename T>
struct Dataset {
  Tensor<T> images;         // N x C x H x W
  std::vector<int> labels;  // values in [0, classes)
  int classes = 10;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path,
                               std::size_t offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw ParseError(path + ": truncated at byte offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::vector<std::uint8_t> read_exact(std::ifstream& in, const std::string& path,
                                            std::size_t count, std::size_t offset) {
  std::vector<std::uint8_t> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw ParseError(path + ": truncated at byte offset " +
                     std::to_string(offset + static_cast<std::size_t>(in.gcount())));
  return buf;
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// IDX image container: big-endian magic 0x00000803, N, rows, cols, then raw
/// ubyte pixels. Pixels are scaled to [0,1].
template <typename T>
Tensor<T> load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  const std::uint32_t magic = detail::read_be32(in, path, 0);
  if (magic != kIdxImagesMagic) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08x (expected 0x%08x)", magic, kIdxImagesMagic);
    throw ParseError(path + ": bad IDX image magic " + buf);
  }
  const std::uint32_t n = detail::read_be32(in, path, 4);
  const std::uint32_t rows = detail::read_be32(in, path, 8);
  const std::uint32_t cols = detail::read_be32(in, path, 12);
  const std::size_t count = std::size_t(n) * rows * cols;
  auto raw = detail::read_exact(in, path, count, 16);
  Tensor<T> images({n, 1, rows, cols});
  for (std::size_t i = 0; i < count; ++i)
    images[i] = static_cast<T>(raw[i]) / T(255);
  return images;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  const std::uint32_t magic = detail::read_be32(in, path, 0);
  if (magic != kIdxLabelsMagic) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08x (expected 0x%08x)", magic, kIdxLabelsMagic);
    throw ParseError(path + ": bad IDX label magic " + buf);
  }
  const std::uint32_t n = detail::read_be32(in, path, 4);
  auto raw = detail::read_exact(in, path, n, 8);
  return std::vector<int>(raw.begin(), raw.end());
}

template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset<T> ds;
  ds.images = load_idx_images<T>(images_path);
  ds.labels = load_idx_labels(labels_path);
  if (ds.images.dim(0) != ds.labels.size())
    throw ParseError(images_path + ": " + std::to_string(ds.images.dim(0)) +
                     " images vs " + std::to_string(ds.labels.size()) + " labels");
  ds.classes = 10;
  return ds;
}

/// CIFAR-10 binary: per record one label byte then 3072 CHW pixel bytes.
template <typename T>
Dataset<T> load_cifar10_bin(const std::string& path) {
  constexpr std::size_t kRecord = 3073;
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ParseError(path + ": cannot open");
  const std::size_t bytes = static_cast<std::size_t>(in.tellg());
  if (bytes == 0 || bytes % kRecord != 0)
    throw ParseError(path + ": size " + std::to_string(bytes) +
                     " is not a multiple of the 3073-byte record");
  in.seekg(0);
  const std::size_t n = bytes / kRecord;
  Dataset<T> ds;
  ds.images = Tensor<T>({n, 3, 32, 32});
  ds.labels.resize(n);
  std::vector<std::uint8_t> rec(kRecord);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!in)
      throw ParseError(path + ": truncated at byte offset " + std::to_string(i * kRecord));
    if (rec[0] > 9)
      throw ParseError(path + ": record " + std::to_string(i) + " has label " +
                       std::to_string(int(rec[0])) + " > 9");
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j)
      ds.images[i * 3072 + j] = static_cast<T>(rec[1 + j]) / T(255);
  }
  ds.classes = 10;
  return ds;
}

/// (x - mean[c]) / std[c] per channel, applied after the [0,1] scaling.
template <typename T>
void normalize_dataset(Dataset<T>& ds, const std::vector<double>& mean,
                       const std::vector<double>& stddev) {
  const std::size_t c = ds.images.dim(1);
  if (mean.size() != c || stddev.size() != c)
    throw ConfigError("normalization needs one mean/std per channel (" +
                      std::to_string(c) + ")");
  const std::size_t chw = ds.images.numel() / ds.images.dim(0);
  const std::size_t hw = chw / c;
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    const std::size_t ch = (i % chw) / hw;
    ds.images[i] = static_cast<T>((static_cast<double>(ds.images[i]) - mean[ch]) /
                                  stddev[ch]);
  }
}

struct SyntheticSpec {
  std::size_t train_count = 512;
  std::size_t test_count = 256;
  int classes = 10;
  std::size_t channels = 1, height = 28, width = 28;
  double noise = 0.35;
  std::uint64_t seed = 7;
};

/// Class-prototype images plus Gaussian pixel noise, clipped to [0,1] like
/// real pixels. Labels are balanced round-robin. One seed pins both splits.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> make_synthetic(const SyntheticSpec& spec) {
  std::mt19937 rng(static_cast<std::uint32_t>(spec.seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t chw = spec.channels * spec.height * spec.width;
  std::vector<double> protos(static_cast<std::size_t>(spec.classes) * chw);
  for (double& v : protos) v = gauss(rng);

  auto fill = [&](Dataset<T>& ds, std::size_t count) {
    ds.images = Tensor<T>({count, spec.channels, spec.height, spec.width});
    ds.labels.resize(count);
    ds.classes = spec.classes;
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(i % spec.classes);
      ds.labels[i] = label;
      const double* proto = protos.data() + static_cast<std::size_t>(label) * chw;
      for (std::size_t j = 0; j < chw; ++j) {
        const double v = 0.5 + 0.22 * proto[j] + spec.noise * gauss(rng);
        ds.images[i * chw + j] = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
  };

  std::pair<Dataset<T>, Dataset<T>> out;
  fill(out.first, spec.train_count);
  fill(out.second, spec.test_count);
  return out;
}

/// Writers used to build container fixtures.
inline void write_idx_images(const std::string& path,
                             const std::vector<std::uint8_t>& pixels, std::uint32_t n,
                             std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != std::size_t(n) * rows * cols)
    throw DimensionError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, n);
  detail::write_be32(out, rows);
  detail::write_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

inline void write_cifar10_bin(const std::string& path,
                              const std::vector<std::uint8_t>& records) {
  if (records.size() % 3073 != 0)
    throw DimensionError("write_cifar10_bin: records must be 3073 bytes each");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(records.data()),
            static_cast<std::streamsize>(records.size()));
}

/// Gather a batch in index order.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather_batch(const Dataset<T>& ds,
                                                    const std::vector<std::size_t>& idx,
                                                    std::size_t begin, std::size_t count) {
  const std::size_t chw = ds.images.numel() / ds.images.dim(0);
  Tensor<T> batch({count, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  std::vector<int> labels(count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t src = idx[begin + b];
    std::copy(ds.images.data() + src * chw, ds.images.data() + (src + 1) * chw,
              batch.data() + b * chw);
    labels[b] = ds.labels[src];
  }
  return {std::move(batch), std::move(labels)};
}

}  // namespace lts

#endif  // LTS_DATASETS_HPP
