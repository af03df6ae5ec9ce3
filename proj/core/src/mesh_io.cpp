#include "hfmm/mesh_io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>

namespace hfmm::meshio {

std::vector<geom::CurvilinearPatch> SurfaceMesh::as_patches() const {
  std::vector<geom::CurvilinearPatch> out(elements.size());
  for (std::size_t i = 0; i < elements.size(); ++i) {
    out[i].node = elements[i].node;
    out[i].id = std::int32_t(i);
  }
  return out;
}

namespace {

struct LineReader {
  std::istream& in;
  std::size_t line = 0;
  bool next(std::string& s) {
    if (!std::getline(in, s)) return false;
    ++line;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return true;
  }
};

}  // namespace

SurfaceMesh parse_gmsh(std::istream& in) {
  LineReader rd{in};
  std::string line;
  std::unordered_map<long long, Vec3> nodes;
  SurfaceMesh mesh;
  bool saw_nodes = false, saw_elements = false;

  while (rd.next(line)) {
    if (line.empty()) continue;
    if (line[0] != '$') continue;  // stray tokens between sections are ignored

    if (line == "$MeshFormat") {
      if (!rd.next(line)) throw parse_error("unterminated $MeshFormat", rd.line);
      std::istringstream ss(line);
      double version = 0;
      int file_type = 0, data_size = 0;
      if (!(ss >> version >> file_type >> data_size))
        throw parse_error("malformed format line", rd.line);
      if (version < 2.0 || version >= 3.0 || file_type != 0)
        throw format_error("unsupported mesh format version " + line);
      if (!rd.next(line) || line != "$EndMeshFormat")
        throw parse_error("missing $EndMeshFormat", rd.line);
    } else if (line == "$Nodes") {
      if (!rd.next(line)) throw parse_error("unterminated $Nodes", rd.line);
      std::size_t count = 0;
      try {
        count = std::stoull(line);
      } catch (...) {
        throw parse_error("bad node count '" + line + "'", rd.line);
      }
      nodes.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (!rd.next(line)) throw parse_error("truncated $Nodes section", rd.line);
        std::istringstream ss(line);
        long long id;
        Vec3 p;
        if (!(ss >> id >> p.x >> p.y >> p.z)) throw parse_error("malformed node line", rd.line);
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
          throw parse_error("non-finite node coordinate", rd.line);
        nodes[id] = p;
      }
      if (!rd.next(line) || line != "$EndNodes")
        throw parse_error("missing $EndNodes", rd.line);
      saw_nodes = true;
    } else if (line == "$Elements") {
      if (!saw_nodes) throw parse_error("$Elements before $Nodes", rd.line);
      if (!rd.next(line)) throw parse_error("unterminated $Elements", rd.line);
      std::size_t count = 0;
      try {
        count = std::stoull(line);
      } catch (...) {
        throw parse_error("bad element count '" + line + "'", rd.line);
      }
      mesh.elements.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (!rd.next(line)) throw parse_error("truncated $Elements section", rd.line);
        std::istringstream ss(line);
        long long id;
        int type, ntags;
        if (!(ss >> id >> type >> ntags)) throw parse_error("malformed element line", rd.line);
        for (int t = 0; t < ntags; ++t) {
          long long tag;
          if (!(ss >> tag)) throw parse_error("malformed element tags", rd.line);
        }
        if (type != 9) {  // only 6-node second-order triangles become patches
          ++mesh.skipped;
          continue;
        }
        ElementRecord rec;
        for (int n = 0; n < 6; ++n) {
          long long nid;
          if (!(ss >> nid)) throw parse_error("element needs 6 node ids", rd.line);
          auto it = nodes.find(nid);
          if (it == nodes.end())
            throw structural_error("element " + std::to_string(id) +
                                   " references unknown node " + std::to_string(nid));
          rec.node[n] = it->second;
        }
        mesh.elements.push_back(rec);
      }
      if (!rd.next(line) || line != "$EndElements")
        throw parse_error("missing $EndElements", rd.line);
      saw_elements = true;
    } else {
      // unknown section: skip to its terminator
      std::string end = "$End" + line.substr(1);
      bool closed = false;
      while (rd.next(line))
        if (line == end) {
          closed = true;
          break;
        }
      if (!closed) throw parse_error("unterminated section " + end, rd.line);
    }
  }
  if (!saw_nodes || !saw_elements)
    throw parse_error("missing $Nodes or $Elements section", rd.line);
  if (mesh.elements.empty()) throw format_error("mesh contains no usable curved triangles");
  return mesh;
}

void write_gmsh(const SurfaceMesh& mesh, std::ostream& out) {
  // deduplicate nodes by exact coordinate bits so shared corners/midsides
  // keep a single id; downstream sample matching relies on bit equality
  struct Key {
    std::array<double, 3> c;
    bool operator<(const Key& o) const {
      return std::memcmp(c.data(), o.c.data(), sizeof c) < 0;
    }
  };
  std::map<Key, std::size_t> ids;
  std::vector<Vec3> unique;
  std::vector<std::array<std::size_t, 6>> conn(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e)
    for (int n = 0; n < 6; ++n) {
      const Vec3& p = mesh.elements[e].node[n];
      Key k{{p.x, p.y, p.z}};
      auto [it, fresh] = ids.try_emplace(k, unique.size());
      if (fresh) unique.push_back(p);
      conn[e][n] = it->second + 1;
    }
  out << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n" << unique.size() << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < unique.size(); ++i)
    out << (i + 1) << ' ' << unique[i].x << ' ' << unique[i].y << ' ' << unique[i].z << "\n";
  out << "$EndNodes\n$Elements\n" << mesh.elements.size() << "\n";
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    out << (e + 1) << " 9 2 0 0";
    for (int n = 0; n < 6; ++n) out << ' ' << conn[e][n];
    out << "\n";
  }
  out << "$EndElements\n";
  if (!out) throw io_error("mesh write failed");
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (56 - 8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw io_error("truncated mesh file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

std::size_t write_binary(const SurfaceMesh& mesh, std::ostream& out) {
  out.write(kBinaryMagic, 8);
  put_u64(out, kBinaryVersion);
  put_u64(out, mesh.elements.size());
  put_u64(out, 6);
  for (const auto& el : mesh.elements)
    for (const auto& p : el.node) {
      put_f64(out, p.x);
      put_f64(out, p.y);
      put_f64(out, p.z);
    }
  if (!out) throw io_error("binary mesh write failed");
  return 32 + 144 * mesh.elements.size();
}

SurfaceMesh read_block(std::istream& in, std::size_t rank, std::size_t nranks) {
  if (nranks == 0 || rank >= nranks)
    throw config_error("read_block: rank " + std::to_string(rank) + " of " +
                       std::to_string(nranks) + " out of range");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kBinaryMagic, 8) != 0)
    throw format_error("read_block: bad magic");
  std::uint64_t version = get_u64(in);
  if (version != kBinaryVersion)
    throw format_error("read_block: unsupported version " + std::to_string(version));
  std::uint64_t count = get_u64(in);
  std::uint64_t ppe = get_u64(in);
  if (ppe != 6) throw format_error("read_block: expected 6 points per element");

  std::size_t begin = std::size_t(rank * count / nranks);
  std::size_t end = std::size_t((rank + 1) * count / nranks);
  in.seekg(std::streamoff(32 + 144 * begin), std::ios::beg);
  if (!in) throw io_error("read_block: seek failed");
  SurfaceMesh mesh;
  mesh.elements.resize(end - begin);
  for (auto& el : mesh.elements)
    for (auto& p : el.node) {
      p.x = get_f64(in);
      p.y = get_f64(in);
      p.z = get_f64(in);
    }
  return mesh;
}

}  // namespace hfmm::meshio
