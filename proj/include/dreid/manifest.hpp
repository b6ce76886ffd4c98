#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dreid {

/// One image of a re-identification dataset.
struct ManifestRecord {
  std::string image_id;
  std::string identity_id;
  std::string path;
  std::optional<std::int64_t> timestamp;  // epoch seconds
  std::optional<int> clarity;             // 1 (best) .. 4 (worst)
  std::string dataset;                    // optional stratum tag
};

using Manifest = std::vector<ManifestRecord>;

/// Unique image ids, clarity in 1..4. Throws ValidationError.
void validate_manifest(const Manifest& manifest);

/// Comma-separated with a header naming the columns
/// image_id,identity_id,path,timestamp,clarity[,dataset]; or JSON lines
/// (chosen by a .jsonl/.json extension). Empty fields are absent.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest_csv(const std::filesystem::path& path,
                        const Manifest& manifest);

}  // namespace dreid
