// SPDX-License-Identifier: Apache-2.0
#include "iene/nets/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "iene/util/errors.hpp"

namespace iene::nets {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'E', 'N', 'E', 'P', 'G', '0', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in, const std::string& context) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CorruptionError("truncated checkpoint file: " + context);
  return v;
}

std::string group_filename(const std::string& name) { return name + ".bin"; }

}  // namespace

void save_checkpoint(const fs::path& dir, const ParameterSet& params) {
  fs::create_directories(dir);
  json manifest;
  manifest["groups"] = json::array();
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    const ParamGroup& g = params.at(gi);
    json entry;
    entry["name"] = g.name;
    entry["optim"] = g.optim.kind == OptimKind::kAdam ? "adam" : "sgd";
    entry["lr"] = g.optim.lr;
    json shapes = json::array();
    for (const auto& a : g.arrays) shapes.push_back({a.rows(), a.cols()});
    entry["shapes"] = shapes;
    manifest["groups"].push_back(entry);

    std::ofstream out(dir / group_filename(g.name), std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint group " + g.name);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, g.arrays.size());
    for (const auto& a : g.arrays) {
      write_u64(out, static_cast<std::uint64_t>(a.rows()));
      write_u64(out, static_cast<std::uint64_t>(a.cols()));
      out.write(reinterpret_cast<const char*>(a.data()),
                static_cast<std::streamsize>(sizeof(double) * a.size()));
    }
  }
  std::ofstream mout(dir / "params_manifest.json");
  if (!mout) throw InputError("cannot write checkpoint manifest");
  mout << manifest.dump(2) << "\n";
}

ParameterSet load_checkpoint(const fs::path& dir) {
  std::ifstream min(dir / "params_manifest.json");
  if (!min) throw CorruptionError("missing checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("unreadable checkpoint manifest: ") + e.what());
  }

  ParameterSet params;
  for (const auto& entry : manifest.at("groups")) {
    std::string name = entry.at("name").get<std::string>();
    OptimSpec optim;
    optim.kind = entry.at("optim").get<std::string>() == "adam" ? OptimKind::kAdam : OptimKind::kSgd;
    optim.lr = entry.at("lr").get<double>();
    ParamGroup& g = params.add_group(name, optim);

    fs::path file = dir / group_filename(name);
    std::ifstream in(file, std::ios::binary);
    if (!in) throw CorruptionError("missing checkpoint file for group " + name);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
      throw CorruptionError("bad header in checkpoint group " + name);
    std::uint64_t count = read_u64(in, name);
    if (count != entry.at("shapes").size())
      throw CorruptionError("array count mismatch in checkpoint group " + name);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t rows = read_u64(in, name);
      std::uint64_t cols = read_u64(in, name);
      const auto& shape = entry.at("shapes").at(i);
      if (rows != shape.at(0).get<std::uint64_t>() || cols != shape.at(1).get<std::uint64_t>())
        throw CorruptionError("shape mismatch in checkpoint group " + name);
      Eigen::MatrixXd a(rows, cols);
      in.read(reinterpret_cast<char*>(a.data()),
              static_cast<std::streamsize>(sizeof(double) * a.size()));
      if (!in) throw CorruptionError("truncated data in checkpoint group " + name);
      g.arrays.push_back(std::move(a));
    }
  }
  return params;
}

}  // namespace iene::nets
