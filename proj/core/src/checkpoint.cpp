// SPDX-License-Identifier: Apache-2.0
#include "dysi/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dysi/errors.hpp"

namespace dysi {

namespace {

constexpr char kMagic[4] = {'D', 'Y', 'S', 'I'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw StateError("checkpoint truncated");
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(
        (static_cast<unsigned char>(data[pos])) |
        (static_cast<std::uint16_t>(static_cast<unsigned char>(data[pos + 1])) << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data.substr(pos, n);
    pos += n;
    return out;
  }
};

void put_tensor(std::string& out, const NamedTensor& tensor) {
  if (tensor.name.size() > 0xffff) throw StateError("tensor name too long for the wire format");
  put_u16(out, static_cast<std::uint16_t>(tensor.name.size()));
  out += tensor.name;
  out.push_back(static_cast<char>(tensor.shape.size()));
  for (const int d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (const float v : tensor.values) put_f32(out, v);
}

NamedTensor read_tensor(Reader& r) {
  NamedTensor tensor;
  tensor.name = r.bytes(r.u16());
  const int rank = static_cast<unsigned char>(r.bytes(1)[0]);
  std::int64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const auto d = static_cast<int>(r.u32());
    tensor.shape.push_back(d);
    numel *= d;
  }
  tensor.values.reserve(static_cast<std::size_t>(numel));
  for (std::int64_t i = 0; i < numel; ++i) tensor.values.push_back(r.f32());
  return tensor;
}

}  // namespace

Checkpoint snapshot(const Transformer& model, const OptimizerState* optimizer,
                    std::uint64_t step, std::uint64_t digest) {
  Checkpoint out;
  out.config_digest = digest;
  out.step = step;
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.count(); ++i)
    out.params.push_back({params.name_at(i), params.at(i).shape(), params.at(i).values()});
  if (optimizer) {
    out.has_optimizer = true;
    out.optimizer_step = static_cast<std::uint64_t>(optimizer->step);
    out.beta1 = optimizer->beta1;
    out.beta2 = optimizer->beta2;
    out.epsilon = optimizer->epsilon;
    for (std::size_t i = 0; i < params.count(); ++i) {
      out.moments.push_back(
          {"m:" + params.name_at(i), params.at(i).shape(), optimizer->first_moment[i]});
      out.moments.push_back(
          {"v:" + params.name_at(i), params.at(i).shape(), optimizer->second_moment[i]});
    }
  }
  return out;
}

void restore(const Checkpoint& checkpoint, Transformer& model, OptimizerState* optimizer) {
  auto& params = model.params();
  if (checkpoint.params.size() != params.count())
    throw StateError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& t = checkpoint.params[i];
    if (t.name != params.name_at(i))
      throw StateError("checkpoint parameter " + t.name + " does not match " + params.name_at(i));
    if (t.shape != params.at(i).shape())
      throw ShapeError("checkpoint tensor " + t.name + " has mismatched shape");
    params.at(i).values_mut() = t.values;
  }
  if (optimizer) {
    if (!checkpoint.has_optimizer)
      throw StateError("checkpoint carries no optimizer state to restore");
    optimizer->init(params);
    optimizer->step = static_cast<std::int64_t>(checkpoint.optimizer_step);
    optimizer->beta1 = checkpoint.beta1;
    optimizer->beta2 = checkpoint.beta2;
    optimizer->epsilon = checkpoint.epsilon;
    if (checkpoint.moments.size() != 2 * params.count())
      throw StateError("checkpoint optimizer section is incomplete");
    for (std::size_t i = 0; i < params.count(); ++i) {
      const auto& m = checkpoint.moments[2 * i];
      const auto& v = checkpoint.moments[2 * i + 1];
      if (m.name != "m:" + params.name_at(i) || v.name != "v:" + params.name_at(i))
        throw StateError("checkpoint optimizer tensors are misaligned at " + params.name_at(i));
      optimizer->first_moment[i] = m.values;
      optimizer->second_moment[i] = v.values;
    }
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, checkpoint.version);
  put_u64(out, checkpoint.config_digest);
  put_u64(out, checkpoint.step);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.params.size()));
  for (const auto& t : checkpoint.params) put_tensor(out, t);
  out.push_back(checkpoint.has_optimizer ? 1 : 0);
  if (checkpoint.has_optimizer) {
    put_u64(out, checkpoint.optimizer_step);
    put_f64(out, checkpoint.beta1);
    put_f64(out, checkpoint.beta2);
    put_f64(out, checkpoint.epsilon);
    put_u32(out, static_cast<std::uint32_t>(checkpoint.moments.size()));
    for (const auto& t : checkpoint.moments) put_tensor(out, t);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write checkpoint: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader r{data};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw StateError("not a checkpoint file: " + path);
  Checkpoint out;
  out.version = r.u32();
  if (out.version != kCheckpointVersion)
    throw StateError("checkpoint version " + std::to_string(out.version) +
                     " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  out.config_digest = r.u64();
  out.step = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) out.params.push_back(read_tensor(r));
  out.has_optimizer = r.bytes(1)[0] != 0;
  if (out.has_optimizer) {
    out.optimizer_step = r.u64();
    out.beta1 = r.f64();
    out.beta2 = r.f64();
    out.epsilon = r.f64();
    const std::uint32_t moment_count = r.u32();
    for (std::uint32_t i = 0; i < moment_count; ++i) out.moments.push_back(read_tensor(r));
  }
  if (r.pos != data.size()) throw StateError("checkpoint has trailing bytes: " + path);
  return out;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw InputError("average_checkpoints: nothing to average");
  Checkpoint out;
  out.config_digest = checkpoints.front().config_digest;
  out.step = checkpoints.front().step;
  const auto& first = checkpoints.front().params;
  for (const auto& c : checkpoints) {
    if (c.params.size() != first.size())
      throw ShapeError("average_checkpoints: parameter counts differ");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (c.params[i].name != first[i].name || c.params[i].shape != first[i].shape)
        throw ShapeError("average_checkpoints: tensor " + first[i].name + " differs across inputs");
    }
  }
  for (std::size_t i = 0; i < first.size(); ++i) {
    NamedTensor mean{first[i].name, first[i].shape, {}};
    mean.values.resize(first[i].values.size());
    const double inv = 1.0 / static_cast<double>(checkpoints.size());
    for (std::size_t j = 0; j < mean.values.size(); ++j) {
      double sum = 0.0;
      for (const auto& c : checkpoints) sum += static_cast<double>(c.params[i].values[j]);
      mean.values[j] = static_cast<float>(sum * inv);
    }
    out.params.push_back(std::move(mean));
  }
  return out;
}

std::uint64_t config_digest(const ModelConfig& config, const Vocabulary& vocab) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed64 = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  feed64(static_cast<std::uint64_t>(config.vocab_size));
  feed64(static_cast<std::uint64_t>(config.d_model));
  feed64(static_cast<std::uint64_t>(config.n_heads));
  feed64(static_cast<std::uint64_t>(config.n_layers));
  feed64(static_cast<std::uint64_t>(config.ffn_dim));
  feed64(static_cast<std::uint64_t>(config.max_positions));
  feed64(config.mode == ModelConfig::Mode::kEncoderDecoder ? 1 : 2);
  feed64(vocab.digest());
  return h;
}

}  // namespace dysi
