#include "featclust/manifest.hpp"

#include <set>
#include <sstream>
#include <utility>

#include "featclust/error.hpp"
#include "featclust/keyvalue.hpp"
#include "featclust/tensor_io.hpp"

namespace featclust {

namespace fs = std::filesystem;

std::string to_string(LabelSource source) {
  switch (source) {
    case LabelSource::kModelPrediction:
      return "model_prediction";
    case LabelSource::kAnnotation:
      return "annotation";
    case LabelSource::kNone:
      return "none";
  }
  return "none";
}

LabelSource parse_label_source(const std::string& text) {
  if (text == "model_prediction") return LabelSource::kModelPrediction;
  if (text == "annotation") return LabelSource::kAnnotation;
  if (text == "none") return LabelSource::kNone;
  throw FormatError("unknown label_source '" + text + "'");
}

void validate_geometry(const SlideManifest& m) {
  const std::string where = "manifest '" + m.slide_id + "'";
  if (m.slide_id.empty()) throw ValidationError("manifest: empty slide_id");
  if (m.tile_size_px <= 0 || m.stride_px <= 0 || m.cell_size_px <= 0) {
    throw ValidationError(where + ": tile_size_px, stride_px and cell_size_px must be positive");
  }
  if (m.tile_size_px % m.stride_px != 0) {
    throw ValidationError(where + ": stride_px " + std::to_string(m.stride_px) +
                          " does not divide tile_size_px " + std::to_string(m.tile_size_px));
  }
  if (m.tile_size_px % m.cell_size_px != 0) {
    throw ValidationError(where + ": cell_size_px " + std::to_string(m.cell_size_px) +
                          " does not divide tile_size_px " + std::to_string(m.tile_size_px));
  }
  if (m.stride_px % m.cell_size_px != 0) {
    throw ValidationError(where + ": stride_px must be a multiple of cell_size_px");
  }
  if (!(m.level_downsample > 0.0)) throw ValidationError(where + ": level_downsample must be > 0");

  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (const auto& t : m.tiles) {
    const std::string tile = "tile (" + std::to_string(t.origin_x_px) + ", " +
                             std::to_string(t.origin_y_px) + ")";
    if (t.origin_x_px < 0 || t.origin_y_px < 0 || t.origin_x_px % m.stride_px != 0 ||
        t.origin_y_px % m.stride_px != 0) {
      throw ValidationError(where + ": " + tile + " is off the stride lattice (stride " +
                            std::to_string(m.stride_px) + ")");
    }
    if (!seen.emplace(t.origin_x_px, t.origin_y_px).second) {
      throw ValidationError(where + ": duplicate " + tile);
    }
    if (t.label && *t.label != 0 && *t.label != 1) {
      throw ValidationError(where + ": " + tile + " label must be 0 or 1");
    }
    if (t.prediction_score && (*t.prediction_score < 0.0 || *t.prediction_score > 1.0)) {
      throw ValidationError(where + ": " + tile + " prediction score outside [0, 1]");
    }
  }
}

namespace {

std::optional<std::string> optional_field(const std::vector<std::string>& fields, std::size_t i) {
  if (i >= fields.size() || fields[i] == "-") return std::nullopt;
  return fields[i];
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void check_shapes(SlideManifest& m) {
  const std::int64_t cells = m.cells_per_tile();
  std::optional<TensorShape> shape;
  for (const auto& t : m.tiles) {
    if (!fs::exists(t.tensor_path)) {
      throw ValidationError("manifest '" + m.slide_id + "': missing tensor file " +
                            t.tensor_path.string());
    }
    const TensorHeader header = read_tensor_header(t.tensor_path);
    if (header.dtype != DType::kNonNegative) {
      throw ValidationError(t.tensor_path.string() + ": feature tensor must use dtype 0");
    }
    if (header.shape.height != cells || header.shape.width != cells) {
      throw ValidationError(t.tensor_path.string() + ": spatial shape " +
                            std::to_string(header.shape.height) + "x" +
                            std::to_string(header.shape.width) + " does not match tile_size_px / "
                            "cell_size_px = " + std::to_string(cells));
    }
    if (shape && header.shape != *shape) {
      throw ValidationError(t.tensor_path.string() + ": channel count differs from other tiles");
    }
    shape = header.shape;
    if (t.gradient_path) {
      if (!fs::exists(*t.gradient_path)) {
        throw ValidationError("manifest '" + m.slide_id + "': missing gradient file " +
                              t.gradient_path->string());
      }
      if (read_tensor_header(*t.gradient_path).shape != header.shape) {
        throw ValidationError(t.gradient_path->string() +
                              ": gradient shape differs from its activation tensor");
      }
    }
    if (t.image_path && !fs::exists(*t.image_path)) {
      throw ValidationError("manifest '" + m.slide_id + "': missing image file " +
                            t.image_path->string());
    }
  }
  if (shape) m.tensor_shape = *shape;
}

}  // namespace

SlideManifest parse_manifest(const std::string& text, const fs::path& base_dir,
                             const std::string& origin) {
  // Header block ends at the first blank line.
  std::size_t split = std::string::npos;
  {
    std::size_t pos = 0;
    bool seen_content = false;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
      const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (blank && seen_content) {
        split = nl == std::string::npos ? text.size() : nl + 1;
        break;
      }
      if (!blank) seen_content = true;
      if (nl == std::string::npos) break;
      pos = nl + 1;
    }
  }
  const std::string header_text = text.substr(0, split);
  const std::string body = split == std::string::npos ? std::string{} : text.substr(split);

  const KeyValues header = KeyValues::parse(header_text, origin);
  SlideManifest m;
  m.slide_id = header.get("slide_id");
  m.tile_size_px = header.get_int("tile_size_px");
  m.stride_px = header.get_int("stride_px");
  m.cell_size_px = header.get_int("cell_size_px");
  m.level_downsample =
      parse_double(header.get_or("level_downsample", "1"), origin + ": level_downsample");
  const bool explicit_source = header.contains("label_source");
  if (explicit_source) m.label_source = parse_label_source(header.get("label_source"));

  std::istringstream lines(body);
  std::string line;
  std::size_t line_no = 0;
  bool any_label = false;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line.front() == '#') continue;
    std::istringstream fields_in(line);
    std::vector<std::string> fields;
    for (std::string f; fields_in >> f;) fields.push_back(f);
    const std::string where = origin + ": tile line " + std::to_string(line_no);
    if (fields.size() < 3 || fields.size() > 7) {
      throw FormatError(where + ": expected 3 to 7 fields, got " + std::to_string(fields.size()));
    }
    TileRecord t;
    t.origin_x_px = parse_int(fields[0], where + " origin_x");
    t.origin_y_px = parse_int(fields[1], where + " origin_y");
    t.tensor_path = resolve(base_dir, fields[2]);
    if (auto v = optional_field(fields, 3)) {
      t.label = static_cast<int>(parse_int(*v, where + " label"));
      any_label = true;
    }
    if (auto v = optional_field(fields, 4)) t.prediction_score = parse_double(*v, where + " score");
    if (auto v = optional_field(fields, 5)) t.gradient_path = resolve(base_dir, *v);
    if (auto v = optional_field(fields, 6)) t.image_path = resolve(base_dir, *v);
    m.tiles.push_back(std::move(t));
  }
  if (!explicit_source && any_label) m.label_source = LabelSource::kModelPrediction;

  validate_geometry(m);
  return m;
}

SlideManifest load_manifest(const fs::path& path) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  SlideManifest m = parse_manifest(read_text_file(path), base, path.string());
  check_shapes(m);
  return m;
}

void save_manifest(const SlideManifest& m, const fs::path& path) {
  validate_geometry(m);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  std::ostringstream out;
  out << "slide_id = " << m.slide_id << '\n'
      << "tile_size_px = " << m.tile_size_px << '\n'
      << "stride_px = " << m.stride_px << '\n'
      << "cell_size_px = " << m.cell_size_px << '\n'
      << "level_downsample = " << format_double(m.level_downsample) << '\n'
      << "label_source = " << to_string(m.label_source) << "\n\n";
  for (const auto& t : m.tiles) {
    out << t.origin_x_px << ' ' << t.origin_y_px << ' ' << rel(t.tensor_path) << ' '
        << (t.label ? std::to_string(*t.label) : "-") << ' '
        << (t.prediction_score ? format_double(*t.prediction_score) : "-") << ' '
        << (t.gradient_path ? rel(*t.gradient_path) : "-") << ' '
        << (t.image_path ? rel(*t.image_path) : "-") << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace featclust
