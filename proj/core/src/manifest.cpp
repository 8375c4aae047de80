#include "musicnet/manifest.hpp"

#include <fstream>

#include "musicnet/errors.hpp"

namespace musicnet {

namespace {

struct CategoryName {
  Category category;
  std::string_view name;
};

constexpr CategoryName kCategoryNames[] = {
    {Category::music_only, "music_only"},   {Category::music_clean, "music+clean"},
    {Category::music_noisy, "music+noisy"}, {Category::clean_only, "clean_only"},
    {Category::noisy_only, "noisy_only"},   {Category::noise_only, "noise_only"},
};

}  // namespace

std::string_view to_string(Category category) {
  for (const auto& c : kCategoryNames) {
    if (c.category == category) return c.name;
  }
  return "unknown";
}

Category parse_category(std::string_view text) {
  for (const auto& c : kCategoryNames) {
    if (c.name == text) return c.category;
  }
  throw ManifestError("unknown category '" + std::string(text) + "'");
}

Label category_label(Category category) {
  switch (category) {
    case Category::music_only:
    case Category::music_clean:
    case Category::music_noisy:
      return Label::music;
    default:
      return Label::no_music;
  }
}

nlohmann::json to_json(const ManifestEntry& entry) {
  nlohmann::json j;
  j["path"] = entry.path;
  j["label"] = std::string(to_string(entry.label));
  j["source_id"] = entry.source_id;
  if (entry.category) j["category"] = std::string(to_string(*entry.category));
  if (!entry.tag.empty()) j["tag"] = entry.tag;
  if (entry.smr_db) j["smr_db"] = *entry.smr_db;
  return j;
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ManifestError("manifest record is not a JSON object");
  if (!j.contains("path") || !j["path"].is_string()) throw ManifestError("record lacks a string 'path'");
  if (!j.contains("label") || !j["label"].is_string()) throw ManifestError("record lacks a string 'label'");
  ManifestEntry e;
  e.path = j["path"].get<std::string>();
  try {
    e.label = parse_label(j["label"].get<std::string>());
  } catch (const ContractViolation& err) {
    throw ManifestError(err.what());
  }
  e.source_id = j.value("source_id", std::filesystem::path(e.path).stem().string());
  if (j.contains("category")) e.category = parse_category(j["category"].get<std::string>());
  e.tag = j.value("tag", std::string());
  if (j.contains("smr_db") && !j["smr_db"].is_null()) e.smr_db = j["smr_db"].get<double>();
  return e;
}

std::size_t TestManifest::count(Category category) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.category == category;
  return n;
}

std::size_t TestManifest::count(Label label) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.label == label;
  return n;
}

std::map<std::string, std::size_t> TestManifest::category_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& e : entries) {
    if (e.category) ++out[std::string(to_string(*e.category))];
  }
  return out;
}

void TestManifest::validate() const {
  for (const auto& e : entries) {
    if (e.category && category_label(*e.category) != e.label) {
      throw ManifestError("entry " + e.source_id + ": category " +
                          std::string(to_string(*e.category)) + " contradicts label " +
                          std::string(to_string(e.label)));
    }
  }
}

TestManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  TestManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.entries.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ManifestError& e) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const TestManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : manifest.entries) out << to_json(e).dump() << '\n';
}

std::filesystem::path resolve_entry_path(const std::filesystem::path& manifest_path,
                                         const ManifestEntry& entry) {
  const std::filesystem::path p(entry.path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace musicnet
