#include "dreid/manifest.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dreid/errors.hpp"

namespace dreid {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

template <typename T>
std::optional<T> parse_optional_number(const std::string& text,
                                       const std::string& where) {
  if (text.empty()) return std::nullopt;
  std::istringstream is(text);
  T v;
  if (!(is >> v) || !is.eof()) {
    throw ValidationError("bad number '" + text + "' at " + where);
  }
  return v;
}

Manifest read_csv(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(name + ": empty manifest");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"image_id", "identity_id"}) {
    if (!col.contains(required)) {
      throw ValidationError(name + ": missing column '" + required + "'");
    }
  }
  auto field = [&col](const std::vector<std::string>& f, const char* key) {
    auto it = col.find(key);
    return it != col.end() && it->second < f.size() ? f[it->second]
                                                    : std::string();
  };
  Manifest manifest;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = name + ":" + std::to_string(line_no);
    ManifestRecord r;
    r.image_id = field(f, "image_id");
    r.identity_id = field(f, "identity_id");
    r.path = field(f, "path");
    r.timestamp = parse_optional_number<std::int64_t>(field(f, "timestamp"), where);
    r.clarity = parse_optional_number<int>(field(f, "clarity"), where);
    r.dataset = field(f, "dataset");
    if (r.image_id.empty() || r.identity_id.empty()) {
      throw ValidationError(where + ": image_id and identity_id are required");
    }
    manifest.push_back(std::move(r));
  }
  return manifest;
}

Manifest read_jsonl(std::istream& in, const std::string& name) {
  Manifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.image_id = j.at("image_id").get<std::string>();
      r.identity_id = j.at("identity_id").get<std::string>();
      r.path = j.value("path", "");
      if (j.contains("timestamp") && !j["timestamp"].is_null()) {
        r.timestamp = j["timestamp"].get<std::int64_t>();
      }
      if (j.contains("clarity") && !j["clarity"].is_null()) {
        r.clarity = j["clarity"].get<int>();
      }
      r.dataset = j.value("dataset", "");
      manifest.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
  }
  return manifest;
}

}  // namespace

void validate_manifest(const Manifest& manifest) {
  std::set<std::string> seen;
  for (const auto& r : manifest) {
    if (!seen.insert(r.image_id).second) {
      throw ValidationError("duplicate image_id '" + r.image_id + "'");
    }
    if (r.clarity && (*r.clarity < 1 || *r.clarity > 4)) {
      throw ValidationError("clarity of '" + r.image_id + "' must be 1..4");
    }
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto ext = path.extension().string();
  Manifest m = ext == ".jsonl" || ext == ".json" ? read_jsonl(in, path.string())
                                                 : read_csv(in, path.string());
  validate_manifest(m);
  return m;
}

void write_manifest_csv(const std::filesystem::path& path,
                        const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "image_id,identity_id,path,timestamp,clarity,dataset\n";
  for (const auto& r : manifest) {
    out << csv_escape(r.image_id) << ',' << csv_escape(r.identity_id) << ','
        << csv_escape(r.path) << ',';
    if (r.timestamp) out << *r.timestamp;
    out << ',';
    if (r.clarity) out << *r.clarity;
    out << ',' << csv_escape(r.dataset) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dreid
