#pragma once

// Binary containers for datasets and checkpoints, atomic file writes and CSV
// helpers. All binary data is little-endian with 64-bit floats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gns/datagen.hpp"
#include "gns/training.hpp"

namespace gns::io {

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// "GNSD" container. The trailing checksum covers every preceding byte.
std::string encode_dataset(const datagen::Dataset& ds);
/// Throws InputError (ChecksumError, DimensionError) on malformed input.
datagen::Dataset decode_dataset(std::string_view bytes);

/// "GNSC" container: model config, normalizer, named parameter manifest and
/// values, optional Adam state, epoch, seed and loss history.
std::string encode_checkpoint(const training::TrainState& state, bool with_optimizer = true);
training::TrainState decode_checkpoint(std::string_view bytes);

/// Throws InputError when the file cannot be read.
std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place. Refuses to replace
/// an existing file unless overwrite is set (ConfigError).
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes, bool overwrite);
/// ConfigError when path exists and overwrite is off.
void check_writable(const std::filesystem::path& path, bool overwrite);

void save_dataset(const std::filesystem::path& path, const datagen::Dataset& ds, bool overwrite);
datagen::Dataset load_dataset(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const training::TrainState& state, bool overwrite);
training::TrainState load_checkpoint(const std::filesystem::path& path);

/// Shortest representation that reads back to the same double.
std::string format_double(double v);

/// Rows of comma-separated cells with a header line.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& cell(std::string_view s);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
  void end_row();
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  std::size_t columns_ = 0, in_row_ = 0;
};

/// Header plus rows of string cells; throws InputError on ragged rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};
CsvTable parse_csv(std::string_view text);

std::string loss_csv(const std::vector<training::EpochRecord>& history);

}  // namespace gns::io
