#include "gns/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <type_traits>
#include <unistd.h>

#include "gns/errors.hpp"

namespace gns::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr std::string_view kDatasetMagic = "GNSD";
constexpr std::string_view kCheckpointMagic = "GNSC";

class Writer {
 public:
  template <class T>
    requires std::is_trivially_copyable_v<T>
  void put(T v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void raw(std::string_view s) { out_.append(s); }
  void doubles(std::span<const double> v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  void string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void vec(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    doubles(v);
  }
  void seal() { put<std::uint64_t>(fnv1a64(out_)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view what) : bytes_(bytes), what_(what) {}

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DimensionError(std::string(what_) + ": file is truncated");
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    const auto s = take(out.size() * sizeof(double));
    std::memcpy(out.data(), s.data(), s.size());
  }
  std::string string() { return std::string(take(get<std::uint32_t>())); }
  std::vector<double> vec(std::size_t limit) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw DimensionError(std::string(what_) + ": vector length " + std::to_string(n) + " is implausible");
    std::vector<double> v(n);
    doubles(v);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  /// Verifies the trailing checksum over everything before it, then strips it.
  void verify_seal() {
    if (bytes_.size() < sizeof(std::uint64_t)) throw DimensionError(std::string(what_) + ": file is truncated");
    const std::size_t body = bytes_.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes_.data() + body, sizeof stored);
    if (stored != fnv1a64(bytes_.substr(0, body))) throw ChecksumError(std::string(what_) + ": checksum mismatch");
    bytes_ = bytes_.substr(0, body);
  }
  void expect_end() {
    if (remaining() != 0) throw DimensionError(std::string(what_) + ": unexpected trailing bytes");
  }

 private:
  std::string_view bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, std::string_view magic, std::uint16_t version, std::string_view what) {
  if (r.take(magic.size()) != magic) throw InputError(std::string(what) + ": bad magic bytes");
  const auto v = r.get<std::uint16_t>();
  if (v != version) throw InputError(std::string(what) + ": unsupported version " + std::to_string(v));
}

void put_stats(Writer& w, const model::Stats& s) {
  w.vec(s.mean);
  w.vec(s.std);
}

model::Stats get_stats(Reader& r, std::size_t n) {
  model::Stats s;
  s.mean = r.vec(n);
  s.std = r.vec(n);
  if (s.mean.size() != n || s.std.size() != n) throw DimensionError("checkpoint: normalizer size mismatch");
  return s;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_dataset(const datagen::Dataset& ds) {
  ds.validate();
  Writer w;
  w.raw(kDatasetMagic);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.pde));
  w.put<std::uint32_t>(ds.grid.nx);
  w.put<std::uint32_t>(ds.grid.ny);
  w.put<std::uint32_t>(ds.nt);
  w.put<std::uint32_t>(ds.channels);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.put<std::uint8_t>(64);
  w.put<std::uint8_t>(0);  // little-endian
  w.put(ds.dt_coarse);
  w.put(ds.params.viscosity);
  w.put(ds.params.epsilon);
  w.put(ds.params.gravity);
  for (const auto& tr : ds.trajectories) w.doubles(tr.fields);
  for (const auto& tr : ds.trajectories) w.put<std::uint64_t>(tr.ic_seed);
  w.seal();
  return w.take();
}

datagen::Dataset decode_dataset(std::string_view bytes) {
  Reader r(bytes, "dataset");
  r.verify_seal();
  check_magic(r, kDatasetMagic, kDatasetVersion, "dataset");
  datagen::Dataset ds;
  const auto pde = r.get<std::uint16_t>();
  if (pde > static_cast<std::uint16_t>(datagen::PdeCase::swe)) throw InputError("dataset: unknown case id " + std::to_string(pde));
  ds.pde = static_cast<datagen::PdeCase>(pde);
  ds.grid.nx = static_cast<int>(r.get<std::uint32_t>());
  ds.grid.ny = static_cast<int>(r.get<std::uint32_t>());
  ds.nt = static_cast<int>(r.get<std::uint32_t>());
  ds.channels = static_cast<int>(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  if (r.get<std::uint8_t>() != 64) throw InputError("dataset: only 64-bit floats are supported");
  if (r.get<std::uint8_t>() != 0) throw InputError("dataset: only little-endian payloads are supported");
  ds.dt_coarse = r.get<double>();
  ds.params.viscosity = r.get<double>();
  ds.params.epsilon = r.get<double>();
  ds.params.gravity = r.get<double>();
  if (ds.channels != datagen::channel_count(ds.pde)) throw DimensionError("dataset: channel count does not match the case");

  const std::uint64_t per = static_cast<std::uint64_t>(ds.nt) * ds.grid.nx * ds.grid.ny * ds.channels;
  const std::uint64_t expected = per * count * sizeof(double) + count * sizeof(std::uint64_t);
  if (expected != r.remaining()) {
    throw DimensionError("dataset: header dimensions imply " + std::to_string(expected) + " payload bytes, found " +
                         std::to_string(r.remaining()));
  }
  ds.trajectories.resize(count);
  for (auto& tr : ds.trajectories) {
    tr.pde = ds.pde;
    tr.nt = ds.nt;
    tr.n_nodes = ds.grid.nodes();
    tr.channels = ds.channels;
    tr.dt_coarse = ds.dt_coarse;
    tr.fields.resize(per);
    r.doubles(tr.fields);
  }
  for (auto& tr : ds.trajectories) tr.ic_seed = r.get<std::uint64_t>();
  r.expect_end();
  return ds;
}

std::string encode_checkpoint(const training::TrainState& s, bool with_optimizer) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointVersion);
  for (int v : {s.model_cfg.channels, s.model_cfg.latent, s.model_cfg.hidden, s.model_cfg.layers}) w.put<std::int32_t>(v);
  w.put<std::int32_t>(s.normalizer.channels);
  put_stats(w, s.normalizer.field);
  put_stats(w, s.normalizer.edge_diff);
  put_stats(w, s.normalizer.edge_norm);
  put_stats(w, s.normalizer.target);

  const auto named = s.params.named();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
  for (const auto& nt : named) {
    w.string(nt.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor.shape().size()));
    for (auto d : nt.tensor.shape()) w.put<std::uint64_t>(d);
  }
  w.vec(model::flatten_values(s.params));

  const bool opt = with_optimizer && s.adam.first_moment.size() == named.size();
  w.put<std::uint8_t>(opt ? 1 : 0);
  if (opt) {
    w.put(s.adam.hyper.lr);
    w.put(s.adam.hyper.beta1);
    w.put(s.adam.hyper.beta2);
    w.put(s.adam.hyper.epsilon);
    w.put<std::int64_t>(s.adam.step);
    for (const auto& m : s.adam.first_moment) w.doubles(m);
    for (const auto& v : s.adam.second_moment) w.doubles(v);
  }
  w.put<std::int32_t>(s.epoch);
  w.put<std::uint64_t>(s.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.history.size()));
  for (const auto& h : s.history) {
    w.put<std::int32_t>(h.epoch);
    w.put(h.mean_loss);
    w.put(h.lr);
    w.put(h.wall_seconds);
  }
  w.seal();
  return w.take();
}

training::TrainState decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "checkpoint");
  r.verify_seal();
  check_magic(r, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  training::TrainState s;
  s.model_cfg.channels = r.get<std::int32_t>();
  s.model_cfg.latent = r.get<std::int32_t>();
  s.model_cfg.hidden = r.get<std::int32_t>();
  s.model_cfg.layers = r.get<std::int32_t>();
  try {
    s.model_cfg.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  const int C = r.get<std::int32_t>();
  if (C != s.model_cfg.channels) throw DimensionError("checkpoint: normalizer and model channel counts differ");
  s.normalizer.channels = C;
  s.normalizer.field = get_stats(r, C);
  s.normalizer.edge_diff = get_stats(r, C);
  s.normalizer.edge_norm = get_stats(r, 1);
  s.normalizer.target = get_stats(r, C);

  const auto reference = model::init_params(s.model_cfg, 0).named();
  const auto count = r.get<std::uint32_t>();
  if (count != reference.size()) throw DimensionError("checkpoint: manifest lists " + std::to_string(count) + " tensors");
  std::size_t total = 0;
  for (const auto& ref : reference) {
    const auto name = r.string();
    const auto ndim = r.get<std::uint32_t>();
    ad::Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (name != ref.name || shape != ref.tensor.shape()) {
      throw DimensionError("checkpoint: manifest entry '" + name + "' does not match the model layout");
    }
    total += ad::shape_numel(shape);
  }
  const auto flat = r.vec(total);
  if (flat.size() != total) throw DimensionError("checkpoint: parameter vector length does not match the manifest");
  s.params = model::params_from_values(s.model_cfg, flat);

  if (r.get<std::uint8_t>() != 0) {
    ad::AdamHyper h;
    h.lr = r.get<double>();
    h.beta1 = r.get<double>();
    h.beta2 = r.get<double>();
    h.epsilon = r.get<double>();
    const auto params = s.params.tensors();
    s.adam = ad::AdamState(h, params);
    s.adam.step = r.get<std::int64_t>();
    for (auto& m : s.adam.first_moment) r.doubles(m);
    for (auto& v : s.adam.second_moment) r.doubles(v);
  }
  s.epoch = r.get<std::int32_t>();
  s.seed = r.get<std::uint64_t>();
  const auto n_hist = r.get<std::uint32_t>();
  if (n_hist > r.remaining()) throw DimensionError("checkpoint: history length is implausible");
  s.history.resize(n_hist);
  for (auto& h : s.history) {
    h.epoch = r.get<std::int32_t>();
    h.mean_loss = r.get<double>();
    h.lr = r.get<double>();
    h.wall_seconds = r.get<double>();
  }
  r.expect_end();
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("error reading " + path.string());
  return data;
}

void check_writable(const std::filesystem::path& path, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path)) {
    throw ConfigError(path.string() + " already exists (pass --overwrite to replace it)");
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes, bool overwrite) {
  check_writable(path, overwrite);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw InputError("cannot write " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void save_dataset(const std::filesystem::path& path, const datagen::Dataset& ds, bool overwrite) {
  write_file_atomic(path, encode_dataset(ds), overwrite);
}

datagen::Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

void save_checkpoint(const std::filesystem::path& path, const training::TrainState& state, bool overwrite) {
  write_file_atomic(path, encode_checkpoint(state), overwrite);
}

training::TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  for (auto& h : header) cell(h);
  end_row();
}

CsvWriter& CsvWriter::cell(std::string_view s) {
  if (in_row_++ > 0) out_ += ',';
  out_ += s;
  return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(std::string_view(format_double(v))); }

CsvWriter& CsvWriter::cell(long long v) { return cell(std::string_view(std::to_string(v))); }

void CsvWriter::end_row() {
  if (in_row_ != columns_) throw ContractError("csv: row has " + std::to_string(in_row_) + " cells, expected " + std::to_string(columns_));
  out_ += '\n';
  in_row_ = 0;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw InputError("csv: missing column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  auto split = [](std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.emplace_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return cells;
  };
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (first) {
      t.header = split(line);
      first = false;
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw InputError("csv: ragged row");
    t.rows.push_back(std::move(cells));
  }
  if (first) throw InputError("csv: empty file");
  return t;
}

std::string loss_csv(const std::vector<training::EpochRecord>& history) {
  CsvWriter w({"epoch", "mean_loss", "lr", "wall_seconds"});
  for (const auto& h : history) {
    w.cell(h.epoch).cell(h.mean_loss).cell(h.lr).cell(h.wall_seconds);
    w.end_row();
  }
  return w.str();
}

}  // namespace gns::io
