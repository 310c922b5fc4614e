#ifndef LTS_CHECKPOINT_HPP
#define LTS_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lts/network.hpp"
#include "lts/tensor.hpp"

namespace lts {

enum class DType : std::uint8_t { F32 = 1, F64 = 2, U8 = 3, I32 = 4, U64 = 5 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::I32: return 4;
    case DType::U64: return 8;
  }
  throw ParseError("unknown dtype code");
}

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

/// One serialized tensor: dtype, dims, raw little-endian elements.
struct RawTensor {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

constexpr char kCheckpointMagic[9] = "LTSCKPT1";
constexpr char kSnapshotMagic[9] = "LTSLVLS1";

/// Record stream: magic, then per tensor u32 name length, name bytes,
/// u8 dtype, u8 rank, rank x u64 dims, raw elements. Ends at EOF.
inline void write_records(const std::string& path, const char* magic,
                          const std::vector<std::pair<std::string, RawTensor>>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out.write(magic, 8);
  for (const auto& [name, t] : records) {
    const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&nlen), 4);
    out.write(name.data(), nlen);
    const std::uint8_t code = static_cast<std::uint8_t>(t.dtype);
    const std::uint8_t rank = static_cast<std::uint8_t>(t.dims.size());
    out.write(reinterpret_cast<const char*>(&code), 1);
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::uint64_t d : t.dims) out.write(reinterpret_cast<const char*>(&d), 8);
    out.write(reinterpret_cast<const char*>(t.bytes.data()),
              static_cast<std::streamsize>(t.bytes.size()));
  }
  if (!out) throw ParseError(path + ": write failed");
}

inline std::map<std::string, RawTensor> read_records(const std::string& path,
                                                     const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  char head[8];
  in.read(head, 8);
  if (!in || std::memcmp(head, magic, 8) != 0)
    throw ParseError(path + ": bad magic, expected version tag " + std::string(magic, 8));
  std::map<std::string, RawTensor> out;
  while (true) {
    std::uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), 4);
    if (in.eof() && in.gcount() == 0) break;
    if (!in || in.gcount() != 4) throw ParseError(path + ": truncated record header");
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    std::uint8_t code = 0, rank = 0;
    in.read(reinterpret_cast<char*>(&code), 1);
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (!in) throw ParseError(path + ": truncated record for '" + name + "'");
    RawTensor t;
    t.dtype = static_cast<DType>(code);
    dtype_size(t.dtype);  // validates the code
    t.dims.resize(rank);
    for (std::uint8_t i = 0; i < rank; ++i)
      in.read(reinterpret_cast<char*>(&t.dims[i]), 8);
    const std::uint64_t nbytes = t.numel() * dtype_size(t.dtype);
    t.bytes.resize(nbytes);
    in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw ParseError(path + ": truncated data for '" + name + "'");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

/// Named views over live training state; serializes to and restores from
/// the record format above.
template <typename T>
class StateRegistry {
 public:
  void add_tensor(const std::string& name, Tensor<T>* t) {
    entries_.push_back({name, t, nullptr, nullptr, {}, {}});
  }
  void add_bytes(const std::string& name, std::vector<std::uint8_t>* v) {
    entries_.push_back({name, nullptr, v, nullptr, {}, {}});
  }
  void add_u64(const std::string& name, std::vector<std::uint64_t>* v) {
    entries_.push_back({name, nullptr, nullptr, v, {}, {}});
  }
  void add_scalars(const std::string& name, std::vector<T*> ptrs) {
    entries_.push_back({name, nullptr, nullptr, nullptr, std::move(ptrs), {}});
  }
  void add_f64(const std::string& name, std::vector<double*> ptrs) {
    entries_.push_back({name, nullptr, nullptr, nullptr, {}, std::move(ptrs)});
  }

  std::vector<std::pair<std::string, RawTensor>> snapshot() const {
    std::vector<std::pair<std::string, RawTensor>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
      RawTensor t;
      if (e.tensor) {
        t.dtype = dtype_of<T>();
        for (std::size_t d : e.tensor->shape()) t.dims.push_back(d);
        t.bytes.resize(e.tensor->numel() * sizeof(T));
        std::memcpy(t.bytes.data(), e.tensor->data(), t.bytes.size());
      } else if (e.bytes) {
        t.dtype = DType::U8;
        t.dims.push_back(e.bytes->size());
        t.bytes = *e.bytes;
      } else if (e.u64s) {
        t.dtype = DType::U64;
        t.dims.push_back(e.u64s->size());
        t.bytes.resize(e.u64s->size() * 8);
        std::memcpy(t.bytes.data(), e.u64s->data(), t.bytes.size());
      } else if (!e.f64s.empty()) {
        t.dtype = DType::F64;
        t.dims.push_back(e.f64s.size());
        t.bytes.resize(e.f64s.size() * 8);
        for (std::size_t i = 0; i < e.f64s.size(); ++i)
          std::memcpy(t.bytes.data() + i * 8, e.f64s[i], 8);
      } else {
        t.dtype = dtype_of<T>();
        t.dims.push_back(e.scalars.size());
        t.bytes.resize(e.scalars.size() * sizeof(T));
        for (std::size_t i = 0; i < e.scalars.size(); ++i)
          std::memcpy(t.bytes.data() + i * sizeof(T), e.scalars[i], sizeof(T));
      }
      out.emplace_back(e.name, std::move(t));
    }
    return out;
  }

  /// Every registered entry must be present with matching dtype and dims.
  void apply_strict(const std::map<std::string, RawTensor>& ckpt) {
    for (auto& e : entries_) {
      auto it = ckpt.find(e.name);
      if (it == ckpt.end())
        throw DimensionError("checkpoint is missing tensor '" + e.name + "'");
      apply_one(e, it->second);
    }
  }

  /// Load the intersection; returns the names that were applied.
  std::vector<std::string> apply_partial(const std::map<std::string, RawTensor>& ckpt) {
    std::vector<std::string> applied;
    for (auto& e : entries_) {
      auto it = ckpt.find(e.name);
      if (it == ckpt.end()) continue;
      apply_one(e, it->second);
      applied.push_back(e.name);
    }
    return applied;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T>* tensor;
    std::vector<std::uint8_t>* bytes;
    std::vector<std::uint64_t>* u64s;
    std::vector<T*> scalars;
    std::vector<double*> f64s;
  };

  static void shape_check(const Entry& e, const RawTensor& t, DType want,
                          const std::vector<std::uint64_t>& dims) {
    if (t.dtype != want)
      throw DimensionError("tensor '" + e.name + "': dtype code " +
                           std::to_string(int(t.dtype)) + " vs expected " +
                           std::to_string(int(want)));
    if (t.dims != dims) {
      std::string got, exp;
      for (auto d : t.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
      for (auto d : dims) exp += (exp.empty() ? "" : "x") + std::to_string(d);
      throw DimensionError("tensor '" + e.name + "': shape (" + got +
                           ") vs expected (" + exp + ")");
    }
  }

  void apply_one(Entry& e, const RawTensor& t) {
    if (e.tensor) {
      std::vector<std::uint64_t> dims;
      for (std::size_t d : e.tensor->shape()) dims.push_back(d);
      shape_check(e, t, dtype_of<T>(), dims);
      std::memcpy(e.tensor->data(), t.bytes.data(), t.bytes.size());
    } else if (e.bytes) {
      shape_check(e, t, DType::U8, {e.bytes->size()});
      *e.bytes = t.bytes;
    } else if (e.u64s) {
      shape_check(e, t, DType::U64, {e.u64s->size()});
      std::memcpy(e.u64s->data(), t.bytes.data(), t.bytes.size());
    } else if (!e.f64s.empty()) {
      shape_check(e, t, DType::F64, {e.f64s.size()});
      for (std::size_t i = 0; i < e.f64s.size(); ++i)
        std::memcpy(e.f64s[i], t.bytes.data() + i * 8, 8);
    } else {
      shape_check(e, t, dtype_of<T>(), {e.scalars.size()});
      for (std::size_t i = 0; i < e.scalars.size(); ++i)
        std::memcpy(e.scalars[i], t.bytes.data() + i * sizeof(T), sizeof(T));
    }
  }

  std::vector<Entry> entries_;
};

/// Register every tensor a resume needs: weights, biases, momentum, masks,
/// bounds, EMA state and BN statistics.
template <typename T>
void register_model_state(Model<T>& model, StateRegistry<T>& reg) {
  for (auto* layer : model.layers()) {
    const std::string& n = layer->name();
    if (auto* q = layer->quantized()) {
      reg.add_tensor(n + ".weight", &q->weight);
      reg.add_tensor(n + ".bias", &q->bias);
      reg.add_tensor(n + ".w_momentum", &q->w_mom);
      reg.add_tensor(n + ".b_momentum", &q->b_mom);
      reg.add_bytes(n + ".frozen_mask", &q->frozen_mask);
      if (q->quant_enabled) {
        reg.add_scalars(n + ".bounds_w", {&q->wbounds.bounds.l, &q->wbounds.bounds.u});
        reg.add_scalars(n + ".bounds_w_momentum", {&q->wbounds.v_l, &q->wbounds.v_u});
        reg.add_scalars(n + ".bounds_a", {&q->abounds.bounds.l, &q->abounds.bounds.u});
        reg.add_scalars(n + ".bounds_a_momentum", {&q->abounds.v_l, &q->abounds.v_u});
      }
      if (q->freeze.initialized()) {
        reg.add_tensor(n + ".ema_d", &q->freeze.ema_d);
        reg.add_bytes(n + ".q_prev", &q->freeze.q_prev);
        reg.add_bytes(n + ".q_frozen", &q->freeze.q_frozen);
      }
    } else if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(layer)) {
      reg.add_tensor(n + ".gamma", &bn->gamma());
      reg.add_tensor(n + ".beta", &bn->beta());
      reg.add_tensor(n + ".gamma_momentum", &bn->gamma_momentum());
      reg.add_tensor(n + ".beta_momentum", &bn->beta_momentum());
      reg.add_tensor(n + ".running_mean", &bn->running_mean());
      reg.add_tensor(n + ".running_var", &bn->running_var());
    }
  }
}

template <typename T>
void save_checkpoint(const std::string& path, StateRegistry<T>& reg) {
  write_records(path, kCheckpointMagic, reg.snapshot());
}

inline std::map<std::string, RawTensor> load_checkpoint(const std::string& path) {
  return read_records(path, kCheckpointMagic);
}

}  // namespace lts

#endif  // LTS_CHECKPOINT_HPP
