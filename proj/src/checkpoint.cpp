// SPDX-License-Identifier: Apache-2.0
#include "unipr/harness/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace unipr::harness {

namespace {

constexpr char kMagic[8] = {'U', 'N', 'I', 'P', 'R', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const uint64_t n = get<uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void put_tensor(std::ostream& out, const nn::Tensor& t) {
  put<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) put<int64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

nn::Tensor get_tensor(std::istream& in) {
  const uint32_t ndim = get<uint32_t>(in);
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = static_cast<int>(get<int64_t>(in));
  nn::Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.ptr()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor");
  return t;
}

}  // namespace

void save_checkpoint_raw(const std::string& path, const std::string& kind,
                         const std::string& config_json, uint64_t config_hash, int64_t step,
                         const std::map<std::string, nn::Tensor>& params,
                         const OptimizerState* optimizer) {
  namespace fs = std::filesystem;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
    out.write(kMagic, 8);
    put<uint32_t>(out, kCheckpointVersion);
    put_string(out, kind);
    put_string(out, config_json);
    put<uint64_t>(out, config_hash);
    put<int64_t>(out, step);
    put<uint64_t>(out, params.size());
    for (const auto& [name, value] : params) {
      put_string(out, name);
      put_tensor(out, value);
    }
    put<uint8_t>(out, optimizer ? 1 : 0);
    if (optimizer) {
      put<int64_t>(out, optimizer->step_count);
      put<uint64_t>(out, optimizer->m.size());
      for (const auto& t : optimizer->m) put_tensor(out, t);
      for (const auto& t : optimizer->v) put_tensor(out, t);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json, uint64_t config_hash, int64_t step,
                     const nn::ParamStore& params, const OptimizerState* optimizer) {
  std::map<std::string, nn::Tensor> map;
  for (const auto& p : params.items()) map[p->name] = p->value;
  save_checkpoint_raw(path, kind, config_json, config_hash, step, map, optimizer);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  Checkpoint ckpt;
  ckpt.kind = get_string(in);
  ckpt.config_json = get_string(in);
  ckpt.config_hash = get<uint64_t>(in);
  ckpt.step = get<int64_t>(in);
  const uint64_t count = get<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    ckpt.params[name] = get_tensor(in);
  }
  if (get<uint8_t>(in)) {
    OptimizerState opt;
    opt.step_count = static_cast<int>(get<int64_t>(in));
    const uint64_t n = get<uint64_t>(in);
    for (uint64_t i = 0; i < n; ++i) opt.m.push_back(get_tensor(in));
    for (uint64_t i = 0; i < n; ++i) opt.v.push_back(get_tensor(in));
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, nn::ParamStore& params) {
  // extra checkpoint entries are allowed (a detector checkpoint also carries
  // the frozen VAE weights); every store parameter must be covered
  for (auto& p : params.items()) {
    auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end())
      throw std::runtime_error("checkpoint: missing parameter " + p->name);
    if (it->second.shape != p->value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    *p->value.data = *it->second.data;
  }
}

void check_config_hash(const Checkpoint& ckpt, uint64_t expected, bool allow_mismatch) {
  if (ckpt.config_hash != expected && !allow_mismatch)
    throw std::runtime_error(
        "checkpoint: config hash mismatch (pass --allow-config-mismatch to override)");
}

}  // namespace unipr::harness
