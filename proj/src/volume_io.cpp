#include "imbal/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace imbal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::U8: return 1;
    case ElementType::I16: return 2;
    case ElementType::F32: return 4;
  }
  return 1;
}

std::string dtype_name(ElementType t) {
  switch (t) {
    case ElementType::U8: return "u8";
    case ElementType::I16: return "i16";
    case ElementType::F32: return "f32";
  }
  return "u8";
}

std::string met_name(ElementType t) {
  switch (t) {
    case ElementType::U8: return "MET_UCHAR";
    case ElementType::I16: return "MET_SHORT";
    case ElementType::F32: return "MET_FLOAT";
  }
  return "MET_UCHAR";
}

template <typename T>
T read_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename T>
void write_le(std::string& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

/// Element k of a payload as double.
double element(const std::string& payload, ElementType t, std::size_t k) {
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + k * element_size(t);
  switch (t) {
    case ElementType::U8: return *p;
    case ElementType::I16: return read_le<std::int16_t>(p);
    case ElementType::F32: return read_le<float>(p);
  }
  return 0.0;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct RawVolume {
  VolumeHeader header;
  std::string payload;
};

// ---------------------------------------------------------------- JSON + raw

fs::path json_header_path(const fs::path& path) {
  fs::path p = path;
  if (p.extension() == ".raw") p.replace_extension(".json");
  return p;
}

VolumeHeader parse_json_header(const fs::path& header_path) {
  json j;
  try {
    j = json::parse(read_file(header_path));
  } catch (const json::parse_error& e) {
    throw IoError("'" + header_path.string() + "': invalid JSON header: " + e.what());
  }
  VolumeHeader h;
  try {
    const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) throw IoError("'" + header_path.string() + "': field 'dims' must have 3 entries");
    h.dims = {dims[0], dims[1], dims[2]};
    const auto sp = j.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw IoError("'" + header_path.string() + "': field 'spacing' must have 3 entries");
    h.spacing = {sp[0], sp[1], sp[2]};
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "u8") h.type = ElementType::U8;
    else if (dtype == "i16") h.type = ElementType::I16;
    else if (dtype == "f32") h.type = ElementType::F32;
    else throw IoError("'" + header_path.string() + "': unsupported dtype '" + dtype + "'");
    h.channels = j.value("channels", 1);
    if (j.contains("class_names")) h.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError("'" + header_path.string() + "': bad header field: " + e.what());
  }
  if (h.dims.nx < 1 || h.dims.ny < 1 || h.dims.nz < 1)
    throw IoError("'" + header_path.string() + "': field 'dims' must be >= 1");
  if (!(h.spacing.sx > 0 && h.spacing.sy > 0 && h.spacing.sz > 0))
    throw IoError("'" + header_path.string() + "': field 'spacing' must be positive");
  if (h.channels < 1) throw IoError("'" + header_path.string() + "': field 'channels' must be >= 1");
  return h;
}

RawVolume read_json_raw(const fs::path& path) {
  const fs::path header_path = json_header_path(path);
  RawVolume rv{parse_json_header(header_path), {}};
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  rv.payload = read_file(raw_path);
  const auto expected = static_cast<std::size_t>(rv.header.dims.voxels()) *
                        static_cast<std::size_t>(rv.header.channels) * element_size(rv.header.type);
  if (rv.payload.size() != expected)
    throw IoError("'" + raw_path.string() + "': payload has " + std::to_string(rv.payload.size()) +
                  " bytes but header fields 'dims'/'channels'/'dtype' require " + std::to_string(expected));
  return rv;
}

void write_json_raw(const fs::path& path, const VolumeHeader& h, const std::string& payload) {
  const fs::path header_path = json_header_path(path);
  fs::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  json j;
  j["dims"] = {h.dims.nx, h.dims.ny, h.dims.nz};
  j["spacing"] = {h.spacing.sx, h.spacing.sy, h.spacing.sz};
  j["dtype"] = dtype_name(h.type);
  j["channels"] = h.channels;
  j["class_names"] = h.class_names;
  write_file(header_path, j.dump(2) + "\n");
  write_file(raw_path, payload);
}

// ---------------------------------------------------------------- MetaImage

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool is_true(const std::string& v) {
  std::string lower;
  for (char c : v) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "true" || lower == "1";
}

RawVolume read_metaimage(const fs::path& path) {
  const std::string text = read_file(path);
  std::map<std::string, std::string> fields;
  std::size_t pos = 0;
  std::size_t data_offset = std::string::npos;
  const std::string where = "'" + path.string() + "': ";
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (trim(line).empty()) continue;
      throw IoError(where + "malformed header line '" + trim(line) + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    fields[key] = trim(line.substr(eq + 1));
    if (key == "ElementDataFile") {
      data_offset = std::min(pos, text.size());
      break;
    }
  }
  if (!fields.contains("ElementDataFile")) throw IoError(where + "missing header field ElementDataFile");

  if (fields.contains("ObjectType") && fields["ObjectType"] != "Image")
    throw IoError(where + "ObjectType '" + fields["ObjectType"] + "' is not Image");
  if (fields.contains("CompressedData") && is_true(fields["CompressedData"]))
    throw IoError(where + "CompressedData = True is not supported");
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
    if (fields.contains(key) && is_true(fields[key])) throw IoError(where + std::string(key) + " = True is not supported");

  int ndims = 3;
  if (fields.contains("NDims")) {
    try {
      ndims = std::stoi(fields["NDims"]);
    } catch (const std::exception&) {
      throw IoError(where + "NDims is not an integer");
    }
  }
  if (ndims != 3) throw IoError(where + "NDims = " + std::to_string(ndims) + " (only 3D volumes are supported)");

  auto parse_list = [&](const std::string& key) {
    std::vector<double> values;
    std::istringstream ss(fields[key]);
    std::string token;
    while (ss >> token) {
      try {
        values.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw IoError(where + key + " has non-numeric entry '" + token + "'");
      }
    }
    return values;
  };

  VolumeHeader h;
  if (!fields.contains("DimSize")) throw IoError(where + "missing header field DimSize");
  const auto dims = parse_list("DimSize");
  if (static_cast<int>(dims.size()) != ndims)
    throw IoError(where + "DimSize arity: NDims = " + std::to_string(ndims) + " but " +
                  std::to_string(dims.size()) + " sizes listed");
  for (double d : dims)
    if (d < 1 || d != std::floor(d)) throw IoError(where + "DimSize entries must be positive integers");
  h.dims = {static_cast<std::int64_t>(dims[0]), static_cast<std::int64_t>(dims[1]), static_cast<std::int64_t>(dims[2])};

  const std::string spacing_key = fields.contains("ElementSpacing") ? "ElementSpacing"
                                  : fields.contains("ElementSize")  ? "ElementSize"
                                                                    : "";
  if (!spacing_key.empty()) {
    const auto sp = parse_list(spacing_key);
    if (static_cast<int>(sp.size()) != ndims)
      throw IoError(where + spacing_key + " arity: NDims = " + std::to_string(ndims) + " but " +
                    std::to_string(sp.size()) + " values listed");
    h.spacing = {sp[0], sp[1], sp[2]};
    if (!(h.spacing.sx > 0 && h.spacing.sy > 0 && h.spacing.sz > 0))
      throw IoError(where + spacing_key + " entries must be positive");
  }

  if (!fields.contains("ElementType")) throw IoError(where + "missing header field ElementType");
  const std::string& et = fields["ElementType"];
  if (et == "MET_UCHAR") h.type = ElementType::U8;
  else if (et == "MET_SHORT") h.type = ElementType::I16;
  else if (et == "MET_FLOAT") h.type = ElementType::F32;
  else throw IoError(where + "ElementType '" + et + "' is not supported (MET_UCHAR, MET_SHORT, MET_FLOAT)");

  if (fields.contains("ElementNumberOfChannels")) {
    h.channels = std::stoi(fields["ElementNumberOfChannels"]);
    if (h.channels < 1) throw IoError(where + "ElementNumberOfChannels must be >= 1");
  }

  RawVolume rv{h, {}};
  const std::string& data_file = fields["ElementDataFile"];
  if (data_file == "LOCAL") {
    rv.payload = text.substr(data_offset);
  } else {
    if (data_file.find(' ') != std::string::npos || data_file == "LIST")
      throw IoError(where + "ElementDataFile '" + data_file + "' (file lists are not supported)");
    fs::path raw = fs::path(data_file);
    if (raw.is_relative()) raw = path.parent_path() / raw;
    rv.payload = read_file(raw);
  }
  const auto expected = static_cast<std::size_t>(h.dims.voxels()) * static_cast<std::size_t>(h.channels) *
                        element_size(h.type);
  if (rv.payload.size() != expected)
    throw IoError(where + "payload has " + std::to_string(rv.payload.size()) + " bytes but DimSize/ElementType require " +
                  std::to_string(expected));

  // MetaImage interleaves channels per voxel; reorder to channel-outermost.
  if (h.channels > 1) {
    const std::size_t es = element_size(h.type);
    const auto nv = static_cast<std::size_t>(h.dims.voxels());
    const auto nc = static_cast<std::size_t>(h.channels);
    std::string planar(rv.payload.size(), '\0');
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t c = 0; c < nc; ++c)
        std::memcpy(&planar[(c * nv + v) * es], &rv.payload[(v * nc + c) * es], es);
    rv.payload = std::move(planar);
  }
  return rv;
}

void write_metaimage(const fs::path& path, const VolumeHeader& h, const std::string& planar) {
  std::string payload = planar;
  if (h.channels > 1) {
    const std::size_t es = element_size(h.type);
    const auto nv = static_cast<std::size_t>(h.dims.voxels());
    const auto nc = static_cast<std::size_t>(h.channels);
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t c = 0; c < nc; ++c)
        std::memcpy(&payload[(v * nc + c) * es], &planar[(c * nv + v) * es], es);
  }
  const bool local = path.extension() == ".mha";
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "DimSize = " << h.dims.nx << ' ' << h.dims.ny << ' ' << h.dims.nz << '\n'
      << "ElementSpacing = " << h.spacing.sx << ' ' << h.spacing.sy << ' ' << h.spacing.sz << '\n';
  if (h.channels > 1) hdr << "ElementNumberOfChannels = " << h.channels << '\n';
  hdr << "ElementType = " << met_name(h.type) << '\n';
  if (local) {
    hdr << "ElementDataFile = LOCAL\n";
    write_file(path, hdr.str() + payload);
  } else {
    fs::path raw = path;
    raw.replace_extension(".raw");
    hdr << "ElementDataFile = " << raw.filename().string() << '\n';
    write_file(path, hdr.str());
    write_file(raw, payload);
  }
}

RawVolume read_any(const fs::path& path) {
  return format_from_path(path) == VolumeFormat::JsonRaw ? read_json_raw(path) : read_metaimage(path);
}

void write_any(const fs::path& path, const VolumeHeader& h, const std::string& payload) {
  if (format_from_path(path) == VolumeFormat::JsonRaw)
    write_json_raw(path, h, payload);
  else
    write_metaimage(path, h, payload);
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".json" || ext == ".raw") return VolumeFormat::JsonRaw;
  if (ext == ".mhd" || ext == ".mha") return VolumeFormat::MetaImage;
  throw IoError("'" + path.string() + "': unknown volume extension (expected .json, .mhd or .mha)");
}

VolumeHeader read_volume_header(const fs::path& path) {
  if (format_from_path(path) == VolumeFormat::JsonRaw) return parse_json_header(json_header_path(path));
  return read_metaimage(path).header;
}

LabelVolume load_label_volume(const fs::path& path) {
  RawVolume rv = read_any(path);
  if (rv.header.channels != 1)
    throw IoError("'" + path.string() + "': label volume must have exactly one channel, header says " +
                  std::to_string(rv.header.channels));
  const auto n = static_cast<std::size_t>(rv.header.dims.voxels());
  std::vector<Label> data(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = element(rv.payload, rv.header.type, k);
    if (v < 0 || v != std::floor(v) || v > std::numeric_limits<Label>::max())
      throw IoError("'" + path.string() + "': voxel " + std::to_string(k) + " holds " + std::to_string(v) +
                    ", not a valid class id");
    data[k] = static_cast<Label>(v);
  }
  try {
    return LabelVolume(rv.header.dims, rv.header.spacing, std::move(data), rv.header.class_names);
  } catch (const Error& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

ProbVolume load_prob_volume(const fs::path& path) {
  RawVolume rv = read_any(path);
  const auto n = static_cast<std::size_t>(rv.header.dims.voxels()) * static_cast<std::size_t>(rv.header.channels);
  std::vector<float> data(n);
  for (std::size_t k = 0; k < n; ++k) data[k] = static_cast<float>(element(rv.payload, rv.header.type, k));
  return ProbVolume(rv.header.dims, rv.header.spacing, rv.header.channels, std::move(data));
}

std::variant<LabelVolume, ProbVolume> load_volume(const fs::path& path, VolumeKind kind) {
  if (kind == VolumeKind::Label) return load_label_volume(path);
  return load_prob_volume(path);
}

void save_volume(const fs::path& path, const LabelVolume& volume, std::optional<ElementType> type) {
  const Label max_label = volume.max_label();
  const ElementType t = type.value_or(max_label <= 255 ? ElementType::U8 : ElementType::I16);
  if (t == ElementType::U8 && max_label > 255) throw Error("label " + std::to_string(max_label) + " does not fit u8");
  if (t == ElementType::I16 && max_label > 32767) throw Error("label " + std::to_string(max_label) + " does not fit i16");
  VolumeHeader h{volume.dims(), volume.spacing(), t, 1, volume.class_names()};
  std::string payload;
  payload.reserve(static_cast<std::size_t>(volume.dims().voxels()) * element_size(t));
  for (Label v : volume.data()) {
    switch (t) {
      case ElementType::U8: payload.push_back(static_cast<char>(v)); break;
      case ElementType::I16: write_le(payload, static_cast<std::int16_t>(v)); break;
      case ElementType::F32: write_le(payload, static_cast<float>(v)); break;
    }
  }
  write_any(path, h, payload);
}

void save_volume(const fs::path& path, const ProbVolume& volume) {
  VolumeHeader h{volume.dims(), volume.spacing(), ElementType::F32, volume.channels(), {}};
  std::string payload;
  payload.reserve(volume.data().size() * 4);
  for (float v : volume.data()) write_le(payload, v);
  write_any(path, h, payload);
}

}  // namespace imbal
