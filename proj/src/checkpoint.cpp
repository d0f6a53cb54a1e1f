// SPDX-License-Identifier: Apache-2.0

#include "sslab/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"

namespace sslab {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'S', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void Checkpoint::capture(const ParamRefs& refs) {
  params.clear();
  for (const Param* p : refs) params.emplace_back(p->name, p->value);
}

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : params)
    if (n == name) return &m;
  return nullptr;
}

void Checkpoint::restore(const ParamRefs& refs, bool allow_missing) const {
  for (Param* p : refs) {
    const Matrix* m = find(p->name);
    if (!m) {
      if (allow_missing) continue;
      throw Error("checkpoint has no parameter '" + p->name + "'");
    }
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw Error("checkpoint parameter '" + p->name + "' has shape " + std::to_string(m->rows()) + "x" +
                  std::to_string(m->cols()) + ", model expects " + std::to_string(p->value.rows()) + "x" +
                  std::to_string(p->value.cols()));
    p->value = *m;
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, std::string>> sections;

  std::ostringstream meta;
  io::put_string(meta, ckpt.kind);
  io::put<std::int64_t>(meta, ckpt.step);
  io::put<std::uint64_t>(meta, ckpt.config_hash);
  sections.emplace_back("meta", meta.str());
  sections.emplace_back("config", ckpt.config_text);

  std::ostringstream params;
  io::put<std::uint32_t>(params, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, m] : ckpt.params) {
    io::put_string(params, name);
    io::put_matrix(params, m);
  }
  sections.emplace_back("params", params.str());
  sections.emplace_back("optimizer", ckpt.optimizer);
  sections.emplace_back("rng", ckpt.rng);
  if (!ckpt.tokenizer.empty()) sections.emplace_back("tokenizer", ckpt.tokenizer);

  std::ostringstream header;
  header.write(kMagic.data(), kMagic.size());
  io::put<std::uint32_t>(header, kVersion);
  io::put<std::uint32_t>(header, static_cast<std::uint32_t>(sections.size()));
  std::uint64_t table_size = 0;
  for (const auto& [name, body] : sections) table_size += 4 + name.size() + 16;
  std::uint64_t offset = static_cast<std::uint64_t>(header.str().size()) + table_size;
  for (const auto& [name, body] : sections) {
    io::put_string(header, name);
    io::put<std::uint64_t>(header, offset);
    io::put<std::uint64_t>(header, body.size());
    offset += body.size();
  }

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << header.str();
    for (const auto& [name, body] : sections) out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw Error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  std::istringstream is(data);

  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw Error(path.string() + " is not a checkpoint");
  if (io::get<std::uint32_t>(is) != kVersion) throw Error(path.string() + ": unsupported checkpoint version");
  const auto count = io::get<std::uint32_t>(is);
  std::map<std::string, std::string> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::get_string(is);
    const auto offset = io::get<std::uint64_t>(is);
    const auto size = io::get<std::uint64_t>(is);
    if (offset + size > data.size()) throw Error(path.string() + ": section '" + name + "' out of bounds");
    sections[name] = data.substr(offset, size);
  }
  auto section = [&](const std::string& name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end()) throw Error(path.string() + ": missing section '" + name + "'");
    return it->second;
  };

  Checkpoint ckpt;
  std::istringstream meta(section("meta"));
  ckpt.kind = io::get_string(meta);
  ckpt.step = static_cast<long>(io::get<std::int64_t>(meta));
  ckpt.config_hash = io::get<std::uint64_t>(meta);
  ckpt.config_text = section("config");

  std::istringstream params(section("params"));
  const auto n = io::get<std::uint32_t>(params);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = io::get_string(params);
    ckpt.params.emplace_back(std::move(name), io::get_matrix(params));
  }
  ckpt.optimizer = section("optimizer");
  ckpt.rng = section("rng");
  if (auto it = sections.find("tokenizer"); it != sections.end()) ckpt.tokenizer = it->second;
  return ckpt;
}

}  // namespace sslab
