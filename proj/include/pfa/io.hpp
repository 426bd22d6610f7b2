#pragma once

// On-disk formats: a JSON dataset bundle and little binary checkpoints for
// the backbone and the adapter. Binary headers use host-endian u64 words.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfa/adapter.hpp"
#include "pfa/backbone.hpp"
#include "pfa/data_model.hpp"

namespace pfa {

struct DatasetBundle {
  InteractionDataset ds;
  SplitAssignment split;
  GroupPartition part;
};

inline nlohmann::json bundle_to_json(const DatasetBundle& b) {
  nlohmann::json j;
  j["format"] = "pfa-bundle-1";
  j["num_users"] = b.ds.num_users;
  j["num_items"] = b.ds.num_items;
  j["num_providers"] = b.ds.num_providers;
  j["user_tokens"] = b.ds.user_tokens;
  j["item_tokens"] = b.ds.item_tokens;
  j["provider_tokens"] = b.ds.provider_tokens;
  j["item_provider"] = b.ds.item_provider;
  auto& inter = j["interactions"] = nlohmann::json::array();
  for (const auto& x : b.ds.interactions) inter.push_back({x.user, x.item});
  j["split"] = {{"seed", b.split.seed}, {"train", b.split.train}, {"val", b.split.val}, {"test", b.split.test}};
  j["partition"] = {{"num_groups", b.part.num_groups},
                    {"provider_group", b.part.provider_group},
                    {"members", b.part.members},
                    {"fractions", b.part.fractions}};
  return j;
}

inline DatasetBundle bundle_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pfa-bundle-1") throw Error("bundle: unknown format tag");
  DatasetBundle b;
  try {
    b.ds.num_users = j.at("num_users").get<std::size_t>();
    b.ds.num_items = j.at("num_items").get<std::size_t>();
    b.ds.num_providers = j.at("num_providers").get<std::size_t>();
    j.at("user_tokens").get_to(b.ds.user_tokens);
    j.at("item_tokens").get_to(b.ds.item_tokens);
    j.at("provider_tokens").get_to(b.ds.provider_tokens);
    j.at("item_provider").get_to(b.ds.item_provider);
    for (const auto& x : j.at("interactions"))
      b.ds.interactions.push_back({x.at(0).get<std::uint32_t>(), x.at(1).get<std::uint32_t>()});
    const auto& s = j.at("split");
    b.split.seed = s.at("seed").get<std::uint64_t>();
    s.at("train").get_to(b.split.train);
    s.at("val").get_to(b.split.val);
    s.at("test").get_to(b.split.test);
    const auto& p = j.at("partition");
    b.part.num_groups = p.at("num_groups").get<std::size_t>();
    p.at("provider_group").get_to(b.part.provider_group);
    p.at("members").get_to(b.part.members);
    p.at("fractions").get_to(b.part.fractions);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bundle: ") + e.what());
  }
  const auto& ds = b.ds;
  if (ds.item_provider.size() != ds.num_items || ds.user_tokens.size() != ds.num_users ||
      ds.item_tokens.size() != ds.num_items || ds.provider_tokens.size() != ds.num_providers)
    throw Error("bundle: table sizes do not match the declared counts");
  if (b.split.train.size() != ds.num_users || b.split.val.size() != ds.num_users || b.split.test.size() != ds.num_users)
    throw Error("bundle: split does not cover every user");
  if (b.part.provider_group.size() != ds.num_providers) throw Error("bundle: partition does not cover every provider");
  for (const auto& x : ds.interactions)
    if (x.user >= ds.num_users || x.item >= ds.num_items) throw Error("bundle: interaction id out of range");
  for (auto s : ds.item_provider)
    if (s >= ds.num_providers) throw Error("bundle: provider id out of range");
  return b;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& path) {
  write_text(path, bundle_to_json(b).dump() + "\n");
}

inline DatasetBundle load_bundle(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("bundle " + path.string() + ": " + e.what());
  }
  return bundle_from_json(j);
}

namespace detail {

constexpr char kEmbeddingMagic[8] = {'P', 'F', 'A', 'E', 'M', 'B', '0', '1'};
constexpr char kAdapterMagic[8] = {'P', 'F', 'A', 'A', 'D', 'P', '0', '1'};

inline void put_u64(std::ostream& out, std::uint64_t x) { out.write(reinterpret_cast<const char*>(&x), sizeof x); }

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
  std::uint64_t x = 0;
  if (!in.read(reinterpret_cast<char*>(&x), sizeof x)) throw Error(what + ": truncated header");
  return x;
}

inline void put_doubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void get_doubles(std::istream& in, std::span<double> v, const std::string& what) {
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
    throw Error(what + ": truncated payload");
}

inline void check_magic(std::istream& in, const char (&magic)[8], const std::string& what) {
  char buf[8] = {};
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw Error(what + ": bad magic");
}

// Guards against allocating absurd sizes from a corrupt header.
inline void check_size(std::uint64_t n, const std::string& what) {
  if (n > (std::uint64_t{1} << 32)) throw Error(what + ": implausible size in header");
}

}  // namespace detail

/// Header: magic, M, N, d, seed, checksum; then user then item matrices.
inline void save_embeddings(const EmbeddingTable& emb, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(detail::kEmbeddingMagic, 8);
  for (std::uint64_t x : {std::uint64_t{emb.num_users}, std::uint64_t{emb.num_items}, std::uint64_t{emb.dim}, emb.seed,
                          emb.checksum()})
    detail::put_u64(out, x);
  detail::put_doubles(out, emb.user.data);
  detail::put_doubles(out, emb.item.data);
  if (!out) throw Error("write failed: " + path.string());
}

/// Loads a frozen table and verifies its checksum.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  const std::string what = "embedding checkpoint " + path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  detail::check_magic(in, detail::kEmbeddingMagic, what);
  EmbeddingTable t;
  t.num_users = detail::get_u64(in, what);
  t.num_items = detail::get_u64(in, what);
  t.dim = detail::get_u64(in, what);
  t.seed = detail::get_u64(in, what);
  const auto checksum = detail::get_u64(in, what);
  detail::check_size(t.num_users * t.dim, what);
  detail::check_size(t.num_items * t.dim, what);
  t.user = Matrix(t.num_users, t.dim);
  t.item = Matrix(t.num_items, t.dim);
  detail::get_doubles(in, t.user.data, what);
  detail::get_doubles(in, t.item.data, what);
  if (t.checksum() != checksum) throw Error(what + ": checksum mismatch");
  t.frozen = true;
  return t;
}

/// Header: magic, d, h, layers, seed, parameter count; then the flat values.
inline void save_adapter(const AdapterParams& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(detail::kAdapterMagic, 8);
  for (std::uint64_t x : {std::uint64_t{p.shape.embed_dim}, std::uint64_t{p.shape.hidden},
                          std::uint64_t{p.shape.layers}, p.seed, std::uint64_t{p.values.size()}})
    detail::put_u64(out, x);
  detail::put_doubles(out, p.values);
  if (!out) throw Error("write failed: " + path.string());
}

inline AdapterParams load_adapter(const std::filesystem::path& path) {
  const std::string what = "adapter checkpoint " + path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  detail::check_magic(in, detail::kAdapterMagic, what);
  AdapterParams p;
  p.shape.embed_dim = detail::get_u64(in, what);
  p.shape.hidden = detail::get_u64(in, what);
  p.shape.layers = detail::get_u64(in, what);
  p.seed = detail::get_u64(in, what);
  const auto count = detail::get_u64(in, what);
  p.shape.validate();
  if (count != p.shape.param_count()) throw Error(what + ": parameter count does not match the shape");
  p.values.resize(count);
  detail::get_doubles(in, p.values, what);
  return p;
}

}  // namespace pfa
