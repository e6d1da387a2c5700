#pragma once

// Versioned binary container: a JSON header describing named double arrays,
// followed by the raw little-endian payload. Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sobbo/errors.hpp"
#include "sobbo/tensor.hpp"

namespace sobbo {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Container {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw config_error("container: missing array '" + name + "'");
  }
  bool has_array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

inline constexpr char kContainerMagic[8] = {'S', 'O', 'B', 'B', 'O', 'C', '1', '\n'};

inline void save_container(const std::string& path, const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    nlohmann::json e;
    e["name"] = a.name;
    e["shape"] = a.shape;
    arrays.push_back(e);
  }
  header["arrays"] = arrays;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw config_error("container: cannot open for write: " + path);
  f.write(kContainerMagic, sizeof(kContainerMagic));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& a : c.arrays)
    f.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  if (!f) throw config_error("container: write failed: " + path);
}

inline Container load_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("container: cannot open: " + path);
  char magic[sizeof(kContainerMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
    throw config_error("container: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw config_error("container: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  Container c;
  c.meta = header.at("meta");
  for (const auto& e : header.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<Shape>();
    a.data.resize(shape_numel(a.shape));
    f.read(reinterpret_cast<char*>(a.data.data()),
           static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!f) throw config_error("container: truncated payload in " + path);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace sobbo
