#pragma once

// Dataset manifests: which samples belong to which domain and split, and how
// long-exposure (B) entries pair with short-exposure (C) entries.
//
// On disk a manifest file is JSON holding one or more per-domain blocks:
//
//   {"manifests": [
//     {"domain": "B", "split": "train", "entries": [
//       {"id": "s01_long", "path": "b/s01.sgt", "kind": "image", "frame_count": 1,
//        "exposure_seconds": 10.0, "pair_id": "s01_short"}]},
//     {"domain": "C", "split": "train", "entries": [...]}]}
//
// A bare single block (an object with "domain") is accepted as well.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace sidgan::io {

enum class Domain { A, B, C };
enum class Split { Train, Val, Test };
enum class EntryKind { Video, Image };

std::string to_string(Domain d);
std::string to_string(Split s);
std::string to_string(EntryKind k);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);
EntryKind parse_entry_kind(const std::string& s);

struct ManifestEntry {
  std::string id;
  std::string path;
  EntryKind kind = EntryKind::Image;
  std::uint32_t frame_count = 1;
  std::optional<double> exposure_seconds;
  std::optional<std::string> pair_id;
  // Free-form string attributes, e.g. generator checkpoint ids of synthetic data.
  std::map<std::string, std::string> attributes;
};

struct DatasetManifest {
  Domain domain = Domain::A;
  Split split = Split::Train;
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& id) const;
  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// Index pair (into the B manifest, into the C manifest).
using PairLink = std::pair<std::size_t, std::size_t>;

struct ManifestSet {
  std::vector<DatasetManifest> manifests;
  // Directory relative entry paths are resolved against.
  std::filesystem::path base_dir;

  const DatasetManifest* get(Domain d, Split s) const;
  const DatasetManifest& at(Domain d, Split s) const;  // throws ManifestError if absent
  std::size_t count(Domain d) const;
  std::size_t count(Domain d, Split s) const;
  std::filesystem::path resolve(const ManifestEntry& e) const;
};

// Per-split sample counts: videos in A, long exposures in B, short exposures in C.
struct ManifestStats {
  std::size_t videos_a = 0;
  std::size_t long_b = 0;
  std::size_t short_c = 0;
  std::size_t resolved_pairs = 0;
};

// Throws ManifestError on the first violated invariant.
void validate(const DatasetManifest& m);
void validate(const ManifestSet& set);

// Resolves B.pair_id -> C.id and C.pair_id -> B.id. Every link must resolve to
// exactly one entry and links must be mutually consistent (one-to-one).
std::vector<PairLink> resolve_pairs(const DatasetManifest& b, const DatasetManifest& c);

ManifestStats stats(const ManifestSet& set, Split split);

ManifestSet parse_manifest(const nlohmann::json& j);
nlohmann::json to_json(const ManifestSet& set);

ManifestSet load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const ManifestSet& set);

}  // namespace sidgan::io
