#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

#include "avl/errors.hpp"
#include "avl/geom.hpp"

namespace avl {

inline nlohmann::json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json quat_to_json(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

inline Quat quat_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw SchemaError("expected a 4-element quaternion [w,x,y,z]");
  return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline void write_json_file(const nlohmann::json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << doc.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline void check_schema(const nlohmann::json& doc, const std::string& name, int version) {
  if (!doc.is_object() || doc.value("schema", std::string()) != name) {
    throw SchemaError("document is not a " + name);
  }
  if (doc.value("version", -1) != version) {
    throw SchemaError(name + ": unsupported version");
  }
}

}  // namespace avl
