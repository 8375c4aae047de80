#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "musicnet/audio_io.hpp"

namespace musicnet {

enum class Category { music_only, music_clean, music_noisy, clean_only, noisy_only, noise_only };

/// "music_only", "music+clean", "music+noisy", "clean_only", "noisy_only", "noise_only"
std::string_view to_string(Category category);
Category parse_category(std::string_view text);
/// The label implied by a category.
Label category_label(Category category);

/// One JSON-lines record. Training manifests carry only path/label/source_id;
/// test manifests add category, tag and smr_db.
struct ManifestEntry {
  std::string path;
  Label label = Label::no_music;
  std::string source_id;
  std::optional<Category> category;
  std::string tag;  // instrument or genre
  std::optional<double> smr_db;

  bool operator==(const ManifestEntry&) const = default;
};

nlohmann::json to_json(const ManifestEntry& entry);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);

struct TestManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count(Category category) const;
  std::size_t count(Label label) const;
  std::map<std::string, std::size_t> category_counts() const;
  /// Throws ManifestError if any entry's category contradicts its label.
  void validate() const;
};

/// Reads JSON-lines. Blank lines are skipped; malformed lines raise
/// ManifestError with the line number.
TestManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const TestManifest& manifest);

/// Resolves an entry path relative to the manifest's directory.
std::filesystem::path resolve_entry_path(const std::filesystem::path& manifest_path,
                                         const ManifestEntry& entry);

}  // namespace musicnet
