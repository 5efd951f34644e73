#include "difrank/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace difrank {

namespace {

constexpr const char* kMagic = "difrank-sorter-checkpoint";

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_array(std::ostream& out, const std::string& name,
                 const CheckpointArray& array) {
  out << "array " << name << ' ' << array.shape.size();
  for (std::size_t d : array.shape) out << ' ' << d;
  out << '\n';
  std::vector<unsigned char> bytes(array.values.size() * 8);
  for (std::size_t i = 0; i < array.values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(array.values[i]);
    for (int b = 0; b < 8; ++b) {
      bytes[i * 8 + static_cast<std::size_t>(b)] =
          static_cast<unsigned char>(bits >> (8 * b));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw CheckpointTruncatedError(std::string("checkpoint ended before ") + what);
  }
  return line;
}

std::size_t parse_count(const std::string& token, const char* what) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CheckpointFormatError(std::string("bad ") + what + " '" + token + "'");
  }
}

}  // namespace

TrainingMetadata SorterCheckpoint::training() const {
  TrainingMetadata meta;
  if (auto it = metadata.find("epochs"); it != metadata.end()) {
    meta.epochs = parse_count(it->second, "epochs");
  }
  if (auto it = metadata.find("final_loss"); it != metadata.end()) {
    meta.final_loss = std::stod(it->second);
  }
  if (auto it = metadata.find("seed"); it != metadata.end()) {
    meta.seed = std::stoull(it->second);
  }
  return meta;
}

SorterCheckpoint make_checkpoint(Sorter& sorter, const TrainingMetadata& meta) {
  SorterCheckpoint ckpt;
  ckpt.kind = sorter.kind();
  ckpt.d = sorter.input_dim();
  ckpt.hyperparameters = sorter.hyperparameters();
  ckpt.metadata["epochs"] = std::to_string(meta.epochs);
  ckpt.metadata["final_loss"] = format_real(meta.final_loss);
  ckpt.metadata["seed"] = std::to_string(meta.seed);
  for (auto& p : sorter.parameters()) {
    ckpt.arrays[p.name] = {p.tensor.shape(),
                           {p.tensor.values().begin(), p.tensor.values().end()}};
  }
  for (auto& [name, buffer] : sorter.buffers()) {
    ckpt.arrays[name] = {{buffer->size()}, *buffer};
  }
  return ckpt;
}

void write_checkpoint(const SorterCheckpoint& ckpt,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << kMagic << ' ' << ckpt.version << '\n';
  out << "kind " << to_string(ckpt.kind) << '\n';
  out << "d " << ckpt.d << '\n';
  for (const auto& [k, v] : ckpt.hyperparameters) out << "hparam " << k << ' ' << v << '\n';
  for (const auto& [k, v] : ckpt.metadata) out << "meta " << k << ' ' << v << '\n';
  out << "arrays " << ckpt.arrays.size() << '\n';
  for (const auto& [name, array] : ckpt.arrays) write_array(out, name, array);
  out << "end\n";
  if (!out) throw CheckpointError("failed writing " + path.string());
}

void save_checkpoint(Sorter& sorter, const std::filesystem::path& path,
                     const TrainingMetadata& meta) {
  write_checkpoint(make_checkpoint(sorter, meta), path);
}

SorterCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());

  SorterCheckpoint ckpt;
  {
    std::istringstream first(read_line(in, "the header"));
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) {
      throw CheckpointFormatError(path.string() + " is not a sorter checkpoint");
    }
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint format version " +
                                   std::to_string(version) + ", expected " +
                                   std::to_string(kCheckpointVersion));
    }
    ckpt.version = version;
  }

  std::size_t array_count = 0;
  for (;;) {
    std::istringstream line(read_line(in, "the array table"));
    std::string key;
    line >> key;
    if (key == "kind") {
      std::string kind;
      line >> kind;
      try {
        ckpt.kind = parse_sorter_kind(kind);
      } catch (const std::invalid_argument& e) {
        throw CheckpointFormatError(e.what());
      }
    } else if (key == "d") {
      std::string v;
      line >> v;
      ckpt.d = parse_count(v, "d");
    } else if (key == "hparam" || key == "meta") {
      std::string k, v;
      line >> k >> v;
      (key == "hparam" ? ckpt.hyperparameters : ckpt.metadata)[k] = v;
    } else if (key == "arrays") {
      std::string v;
      line >> v;
      array_count = parse_count(v, "array count");
      break;
    } else {
      throw CheckpointFormatError("unexpected header line '" + key + "'");
    }
  }

  for (std::size_t a = 0; a < array_count; ++a) {
    std::istringstream line(read_line(in, "all arrays were read"));
    std::string key, name, ndim_token;
    line >> key >> name >> ndim_token;
    if (key != "array") throw CheckpointFormatError("expected an array record");
    CheckpointArray array;
    const std::size_t ndim = parse_count(ndim_token, "array rank");
    for (std::size_t i = 0; i < ndim; ++i) {
      std::string dim;
      line >> dim;
      array.shape.push_back(parse_count(dim, "array dimension"));
    }
    const std::size_t n = shape_size(array.shape);
    std::vector<unsigned char> bytes(n * 8);
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
      throw CheckpointTruncatedError("checkpoint array '" + name + "' is truncated");
    }
    array.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)])
                << (8 * b);
      }
      array.values[i] = std::bit_cast<double>(bits);
    }
    ckpt.arrays[name] = std::move(array);
  }
  if (read_line(in, "the end marker") != "end") {
    throw CheckpointFormatError("missing end marker");
  }
  return ckpt;
}

namespace {

std::string require(const std::map<std::string, std::string>& m,
                    const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) {
    throw CheckpointFormatError("checkpoint lacks hyperparameter '" + key + "'");
  }
  return it->second;
}

}  // namespace

std::unique_ptr<Sorter> make_sorter(const SorterCheckpoint& ckpt) {
  std::unique_ptr<Sorter> sorter;
  const auto& hp = ckpt.hyperparameters;
  switch (ckpt.kind) {
    case SorterKind::handcrafted:
      sorter = std::make_unique<HandcraftedSorter>(
          std::stod(require(hp, "lambda")), require(hp, "normalize") == "1");
      break;
    case SorterKind::cnn: {
      CnnOptions opts;
      opts.depth = parse_count(require(hp, "depth"), "depth");
      opts.kernel_width = parse_count(require(hp, "kernel_width"), "kernel width");
      sorter = std::make_unique<CnnSorter>(ckpt.d, opts, 0);
      break;
    }
    case SorterKind::lstm: {
      LstmOptions opts;
      opts.hidden_size = parse_count(require(hp, "hidden_size"), "hidden size");
      opts.forget_bias = std::stod(require(hp, "forget_bias"));
      sorter = std::make_unique<LstmSorter>(ckpt.d, opts, 0);
      break;
    }
  }
  for (auto& p : sorter->parameters()) {
    auto it = ckpt.arrays.find(p.name);
    if (it == ckpt.arrays.end()) {
      throw CheckpointFormatError("checkpoint lacks array '" + p.name + "'");
    }
    if (it->second.shape != p.tensor.shape()) {
      throw CheckpointFormatError("array '" + p.name + "' has shape " +
                                  shape_string(it->second.shape) + ", expected " +
                                  shape_string(p.tensor.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(),
              p.tensor.mutable_values().begin());
  }
  auto buffers = sorter->buffers();
  for (auto& [name, buffer] : buffers) {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end() || it->second.values.size() != buffer->size()) {
      throw CheckpointFormatError("checkpoint lacks buffer '" + name + "'");
    }
    *buffer = it->second.values;
  }
  if (!buffers.empty()) sorter->mark_statistics_loaded();
  return sorter;
}

std::unique_ptr<Sorter> load_sorter(const std::filesystem::path& path,
                                    std::optional<SorterKind> expected) {
  SorterCheckpoint ckpt = load_checkpoint(path);
  if (expected && *expected != ckpt.kind) {
    throw CheckpointKindError("checkpoint holds a " +
                              std::string(to_string(ckpt.kind)) +
                              " sorter, expected " +
                              std::string(to_string(*expected)));
  }
  return make_sorter(ckpt);
}

}  // namespace difrank
