#include "sidgan/manifest.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include "sidgan/error.hpp"

namespace sidgan::io {

using nlohmann::json;

std::string to_string(Domain d) {
  switch (d) {
    case Domain::A: return "A";
    case Domain::B: return "B";
    case Domain::C: return "C";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::string to_string(EntryKind k) { return k == EntryKind::Video ? "video" : "image"; }

Domain parse_domain(const std::string& s) {
  if (s == "A") return Domain::A;
  if (s == "B") return Domain::B;
  if (s == "C") return Domain::C;
  throw ManifestError("unknown domain '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ManifestError("unknown split '" + s + "'");
}

EntryKind parse_entry_kind(const std::string& s) {
  if (s == "video") return EntryKind::Video;
  if (s == "image") return EntryKind::Image;
  throw ManifestError("unknown entry kind '" + s + "'");
}

const ManifestEntry* DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

const DatasetManifest* ManifestSet::get(Domain d, Split s) const {
  for (const auto& m : manifests)
    if (m.domain == d && m.split == s) return &m;
  return nullptr;
}

const DatasetManifest& ManifestSet::at(Domain d, Split s) const {
  if (const auto* m = get(d, s)) return *m;
  throw ManifestError("manifest set has no " + to_string(d) + "/" + to_string(s) + " block");
}

std::size_t ManifestSet::count(Domain d) const {
  std::size_t n = 0;
  for (const auto& m : manifests)
    if (m.domain == d) n += m.size();
  return n;
}

std::size_t ManifestSet::count(Domain d, Split s) const {
  const auto* m = get(d, s);
  return m ? m->size() : 0;
}

std::filesystem::path ManifestSet::resolve(const ManifestEntry& e) const {
  std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

void validate(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (e.id.empty()) throw ManifestError("entry with empty id in domain " + to_string(m.domain));
    if (!ids.insert(e.id).second) throw ManifestError("duplicate id '" + e.id + "'");
    if (e.frame_count == 0) throw ManifestError("entry '" + e.id + "' has frame_count 0");
    if (e.kind == EntryKind::Image && e.frame_count != 1)
      throw ManifestError("image entry '" + e.id + "' must have frame_count 1");
    if (e.exposure_seconds) {
      if (!std::isfinite(*e.exposure_seconds) || *e.exposure_seconds < 0)
        throw ManifestError("entry '" + e.id + "' has invalid exposure_seconds");
    } else if (m.domain != Domain::A) {
      throw ManifestError("entry '" + e.id + "' in domain " + to_string(m.domain) +
                          " is missing exposure_seconds");
    }
    if (e.pair_id && m.domain == Domain::A)
      throw ManifestError("domain A entry '" + e.id + "' cannot carry a pair_id");
  }
}

std::vector<PairLink> resolve_pairs(const DatasetManifest& b, const DatasetManifest& c) {
  if (b.domain != Domain::B || c.domain != Domain::C)
    throw ManifestError("pair resolution needs a B manifest and a C manifest");
  std::unordered_map<std::string, std::size_t> b_index, c_index;
  for (std::size_t i = 0; i < b.entries.size(); ++i) b_index.emplace(b.entries[i].id, i);
  for (std::size_t i = 0; i < c.entries.size(); ++i) c_index.emplace(c.entries[i].id, i);

  std::vector<PairLink> links;
  std::vector<std::optional<std::size_t>> c_partner(c.entries.size());
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    const auto& e = b.entries[i];
    if (!e.pair_id) continue;
    auto it = c_index.find(*e.pair_id);
    if (it == c_index.end())
      throw ManifestError("dangling pair_id '" + *e.pair_id + "' on B entry '" + e.id + "'");
    if (c_partner[it->second])
      throw ManifestError("C entry '" + *e.pair_id + "' is claimed by more than one B entry");
    c_partner[it->second] = i;
    links.emplace_back(i, it->second);
  }
  for (std::size_t j = 0; j < c.entries.size(); ++j) {
    const auto& e = c.entries[j];
    if (!e.pair_id) continue;
    auto it = b_index.find(*e.pair_id);
    if (it == b_index.end())
      throw ManifestError("dangling pair_id '" + *e.pair_id + "' on C entry '" + e.id + "'");
    if (c_partner[j] && *c_partner[j] != it->second)
      throw ManifestError("inconsistent pairing for C entry '" + e.id + "'");
    if (!c_partner[j]) {
      const auto& partner = b.entries[it->second];
      if (partner.pair_id && *partner.pair_id != e.id)
        throw ManifestError("inconsistent pairing for C entry '" + e.id + "'");
      for (const auto& l : links)
        if (l.first == it->second)
          throw ManifestError("B entry '" + partner.id + "' is claimed by more than one C entry");
      c_partner[j] = it->second;
      links.emplace_back(it->second, j);
    }
  }
  return links;
}

void validate(const ManifestSet& set) {
  std::set<std::pair<Domain, Split>> seen;
  for (const auto& m : set.manifests) {
    if (!seen.insert({m.domain, m.split}).second)
      throw ManifestError("duplicate " + to_string(m.domain) + "/" + to_string(m.split) + " block");
    validate(m);
  }
  for (auto split : {Split::Train, Split::Val, Split::Test}) {
    const auto* b = set.get(Domain::B, split);
    const auto* c = set.get(Domain::C, split);
    const DatasetManifest empty_b{Domain::B, split, {}};
    const DatasetManifest empty_c{Domain::C, split, {}};
    if (!b && !c) continue;
    resolve_pairs(b ? *b : empty_b, c ? *c : empty_c);
  }
}

ManifestStats stats(const ManifestSet& set, Split split) {
  ManifestStats s;
  s.videos_a = set.count(Domain::A, split);
  s.long_b = set.count(Domain::B, split);
  s.short_c = set.count(Domain::C, split);
  const auto* b = set.get(Domain::B, split);
  const auto* c = set.get(Domain::C, split);
  if (b && c) s.resolved_pairs = resolve_pairs(*b, *c).size();
  return s;
}

namespace {

DatasetManifest parse_block(const json& j) {
  DatasetManifest m;
  m.domain = parse_domain(j.at("domain").get<std::string>());
  m.split = parse_split(j.at("split").get<std::string>());
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.path = je.at("path").get<std::string>();
    e.kind = parse_entry_kind(je.at("kind").get<std::string>());
    e.frame_count = je.at("frame_count").get<std::uint32_t>();
    if (je.contains("exposure_seconds") && !je["exposure_seconds"].is_null())
      e.exposure_seconds = je["exposure_seconds"].get<double>();
    if (je.contains("pair_id") && !je["pair_id"].is_null()) e.pair_id = je["pair_id"].get<std::string>();
    if (je.contains("attributes"))
      e.attributes = je["attributes"].get<std::map<std::string, std::string>>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

json block_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je = {{"id", e.id},
               {"path", e.path},
               {"kind", to_string(e.kind)},
               {"frame_count", e.frame_count}};
    if (e.exposure_seconds) je["exposure_seconds"] = *e.exposure_seconds;
    if (e.pair_id) je["pair_id"] = *e.pair_id;
    if (!e.attributes.empty()) je["attributes"] = e.attributes;
    entries.push_back(std::move(je));
  }
  return {{"domain", to_string(m.domain)}, {"split", to_string(m.split)}, {"entries", entries}};
}

}  // namespace

ManifestSet parse_manifest(const json& j) {
  ManifestSet set;
  try {
    if (j.contains("manifests")) {
      for (const auto& block : j.at("manifests")) set.manifests.push_back(parse_block(block));
    } else {
      set.manifests.push_back(parse_block(j));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest schema violation: ") + e.what());
  }
  validate(set);
  return set;
}

json to_json(const ManifestSet& set) {
  json blocks = json::array();
  for (const auto& m : set.manifests) blocks.push_back(block_to_json(m));
  return {{"manifests", blocks}};
}

ManifestSet load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  auto set = parse_manifest(j);
  set.base_dir = path.parent_path();
  return set;
}

void save_manifest(const std::filesystem::path& path, const ManifestSet& set) {
  validate(set);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << to_json(set).dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace sidgan::io
