#include "avatar/template.hpp"

#include <cmath>
#include <cstring>

#include "avatar/binary_io.hpp"
#include "avatar/geometry.hpp"

namespace avatar {

namespace {
constexpr char kMeshMagic[8] = {'A', 'V', 'M', 'E', 'S', 'H', '\r', '\n'};
constexpr char kSkinMagic[8] = {'A', 'V', 'S', 'K', 'I', 'N', '\r', '\n'};

void check_magic(ByteReader& r, const char (&magic)[8], const char* what) {
  char m[8];
  r.raw(m, 8);
  if (std::memcmp(m, magic, 8) != 0) throw DataError(std::string("bad magic in ") + what + " file");
  if (r.u32() != 1) throw DataError(std::string("unsupported ") + what + " file version");
}

void put3(ByteWriter& w, const Vec3d& v) {
  for (int i = 0; i < 3; ++i) w.f64(v[i]);
}
Vec3d get3(ByteReader& r) {
  Vec3d v;
  for (int i = 0; i < 3; ++i) v[i] = r.f64();
  return v;
}
}  // namespace

void TexturedTemplate::validate() const {
  const auto nv = vertices.size();
  if (colors.size() != nv || normals.size() != nv) throw DataError("template attribute arrays differ in length");
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k)
      if (f[k] < 0 || f[k] >= static_cast<int>(nv)) throw DataError("template face index out of range");
  for (size_t i = 0; i < nv; ++i) {
    if (!vertices[i].allFinite() || !colors[i].allFinite()) throw DataError("non-finite template vertex");
    if (std::abs(normals[i].norm() - 1.0) > 1e-6) throw DataError("template normal is not unit length");
  }
}

double triangle_area(const Vec3d& a, const Vec3d& b, const Vec3d& c) { return 0.5 * (b - a).cross(c - a).norm(); }

std::vector<Vec3d> compute_vertex_normals(const std::vector<Vec3d>& vertices,
                                          const std::vector<Eigen::Vector3i>& faces) {
  std::vector<Vec3d> n(vertices.size(), Vec3d::Zero());
  for (const auto& f : faces) {
    // Unnormalized cross product is already area weighted.
    const Vec3d c = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    for (int k = 0; k < 3; ++k) n[f[k]] += c;
  }
  for (auto& v : n) {
    const double len = v.norm();
    v = len > 1e-300 ? Vec3d(v / len) : Vec3d::UnitZ();
  }
  return n;
}

TexturedTemplate normalize_template(const TexturedTemplate& tmpl, const Skeleton& skel, const SkinningOptions& opts) {
  std::vector<double> beta = tmpl.bone_scale;
  if (beta.empty()) beta.assign(skel.size(), 1.0);
  return normalize_template(tmpl, skel, beta, opts);
}

TexturedTemplate normalize_template(const TexturedTemplate& tmpl, const Skeleton& skel,
                                    const std::vector<double>& subject_beta, const SkinningOptions& opts) {
  if (static_cast<int>(subject_beta.size()) != skel.size()) throw ShapeError("bone scale count does not match skeleton");
  TexturedTemplate out = tmpl;
  out.bone_scale.assign(skel.size(), 1.0);
  bool average = true;
  for (double b : subject_beta) average = average && b == 1.0;
  if (average) return out;

  const auto field = diffuse_skinning(tmpl.vertices, skel, subject_beta, opts);
  const auto norm = bone_transforms(skel, PoseParams::canonical(skel), subject_beta);
  parallel_for(tmpl.vertex_count(), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const Mat4d t = lbs_blend(field.weights.row(i).transpose(), norm);
      out.vertices[i] = deform_point<double>(tmpl.vertices[i], t);
      const Mat3d a = t.topLeftCorner<3, 3>();
      out.normals[i] = (a.inverse().transpose() * tmpl.normals[i]).normalized();
    }
  });
  return out;
}

std::vector<unsigned char> encode_template(const TexturedTemplate& tmpl) {
  ByteWriter w;
  w.raw(kMeshMagic, 8);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(tmpl.vertices.size()));
  w.u32(static_cast<std::uint32_t>(tmpl.faces.size()));
  w.u32(static_cast<std::uint32_t>(tmpl.bone_scale.size()));
  for (size_t i = 0; i < tmpl.vertices.size(); ++i) {
    put3(w, tmpl.vertices[i]);
    put3(w, tmpl.colors[i]);
    put3(w, tmpl.normals[i]);
  }
  for (const auto& f : tmpl.faces)
    for (int k = 0; k < 3; ++k) w.u32(static_cast<std::uint32_t>(f[k]));
  for (double b : tmpl.bone_scale) w.f64(b);
  return std::move(w.bytes);
}

TexturedTemplate decode_template(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes);
  check_magic(r, kMeshMagic, "template");
  const auto nv = r.u32(), nf = r.u32(), nb = r.u32();
  TexturedTemplate t;
  t.vertices.resize(nv);
  t.colors.resize(nv);
  t.normals.resize(nv);
  for (std::uint32_t i = 0; i < nv; ++i) {
    t.vertices[i] = get3(r);
    t.colors[i] = get3(r);
    t.normals[i] = get3(r);
  }
  t.faces.resize(nf);
  for (auto& f : t.faces)
    for (int k = 0; k < 3; ++k) f[k] = static_cast<int>(r.u32());
  t.bone_scale.resize(nb);
  for (auto& b : t.bone_scale) b = r.f64();
  if (!r.done()) throw DataError("trailing bytes in template file");
  t.validate();
  return t;
}

void save_template(const std::filesystem::path& path, const TexturedTemplate& tmpl) {
  write_file_bytes(path, encode_template(tmpl));
}

TexturedTemplate load_template(const std::filesystem::path& path) { return decode_template(read_file_bytes(path)); }

void save_skinning(const std::filesystem::path& path, const SkinningField& field) {
  ByteWriter w;
  w.raw(kSkinMagic, 8);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(field.vertices.size()));
  w.u32(static_cast<std::uint32_t>(field.bones()));
  w.u32(static_cast<std::uint32_t>(field.nearest_vertices));
  for (const auto& v : field.vertices) put3(w, v);
  for (Eigen::Index i = 0; i < field.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < field.weights.cols(); ++j) w.f64(field.weights(i, j));
  write_file_bytes(path, w.bytes);
}

SkinningField load_skinning(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  check_magic(r, kSkinMagic, "skinning");
  const auto nv = r.u32(), nb = r.u32();
  SkinningField f;
  f.nearest_vertices = static_cast<int>(r.u32());
  f.vertices.resize(nv);
  for (auto& v : f.vertices) v = get3(r);
  f.weights.resize(nv, nb);
  for (std::uint32_t i = 0; i < nv; ++i)
    for (std::uint32_t j = 0; j < nb; ++j) f.weights(i, j) = r.f64();
  if (!r.done()) throw DataError("trailing bytes in skinning file");
  return f;
}

}  // namespace avatar
