#include "cyclestain/pipeline/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <tuple>

#include "cyclestain/core/error.hpp"
#include "json.hpp"

namespace cyclestain {
namespace {

using nlohmann::json;

constexpr const char* kManifestFormat = "cyclestain-manifest";
constexpr int kManifestVersion = 1;

json record_json(const PatchRecord& r, int patch) {
  return {{"slide_id", r.slide_id},
          {"y", r.origin.y},
          {"x", r.origin.x},
          {"slide_height", r.slide_height},
          {"slide_width", r.slide_width},
          {"patch", patch},
          {"domain", to_string(r.domain)},
          {"path", r.path},
          {"magnification", r.magnification}};
}

void check_record(const PatchRecord& r, int patch, const std::string& where) {
  if (r.slide_id.empty()) throw DataError(where + "empty slide_id");
  if (r.path.empty()) throw DataError(where + "empty path");
  if (r.origin.y < 0 || r.origin.x < 0 || r.origin.y + patch > r.slide_height ||
      r.origin.x + patch > r.slide_width)
    throw DataError(where + "origin (" + std::to_string(r.origin.y) + "," +
                    std::to_string(r.origin.x) + ") outside slide " + r.slide_id);
}

}  // namespace

std::string_view to_string(Domain d) { return d == Domain::FF ? "FF" : "FFPE"; }

Domain parse_domain(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "FF") return Domain::FF;
  if (up == "FFPE") return Domain::FFPE;
  throw ConfigError("unknown domain '" + std::string(s) + "' (expected FF or FFPE)");
}

void ExtractOptions::validate() const {
  if (patch < 1) throw ConfigError("patch must be >= 1");
  if (stride < 1 || stride > patch) throw ConfigError("stride must be in [1, patch]");
  if (!(tissue_threshold >= 0.0 && tissue_threshold <= 1.0))
    throw ConfigError("tissue threshold must be in [0, 1]");
  if (!(background_cutoff > 0.0 && background_cutoff <= 1.0))
    throw ConfigError("background cutoff must be in (0, 1]");
}

double tissue_fraction(const Image& img, double cutoff) {
  if (img.empty()) throw ContractError("tissue_fraction: empty image");
  const Image unit = img.range() == ValueRange::Unit ? img : normalize(img, ValueRange::Unit);
  const std::vector<float> lum = luminance(unit);
  const auto dark = std::count_if(lum.begin(), lum.end(), [&](float v) { return v < cutoff; });
  return static_cast<double>(dark) / static_cast<double>(lum.size());
}

std::vector<ExtractedPatch> extract_patches(const Image& slide, const ExtractOptions& opt) {
  opt.validate();
  if (opt.patch > slide.height() || opt.patch > slide.width())
    throw ContractError("extract_patches: patch " + std::to_string(opt.patch) +
                        " exceeds slide extent " + std::to_string(slide.height()) + "x" +
                        std::to_string(slide.width()));
  const PatchGrid grid = plan_grid_stride(slide.height(), slide.width(), opt.patch, opt.stride);
  std::vector<ExtractedPatch> out;
  for (const TileOrigin& o : grid.origins) {
    Image tile = slide.crop(o.y, o.x, opt.patch, opt.patch);
    const double frac = tissue_fraction(tile, opt.background_cutoff);
    if (frac >= opt.tissue_threshold)
      out.push_back({o, frac, std::move(tile)});
  }
  return out;
}

void Manifest::validate() const {
  if (patch_size < 1) throw DataError("manifest: patch size must be >= 1");
  std::set<std::tuple<std::string, int, int>> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PatchRecord& r = records[i];
    const std::string where = "manifest record " + std::to_string(i) + ": ";
    check_record(r, patch_size, where);
    if (!seen.emplace(r.slide_id, r.origin.y, r.origin.x).second)
      throw DataError(where + "duplicate (slide, origin) for " + r.slide_id);
  }
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  m.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const json header = {{"format", kManifestFormat},
                       {"version", kManifestVersion},
                       {"patch_size", m.patch_size},
                       {"seed", m.seed},
                       {"tissue_threshold", m.tissue_threshold},
                       {"background_cutoff", m.background_cutoff},
                       {"count", m.records.size()}};
  out << header.dump() << '\n';
  for (const PatchRecord& r : m.records) out << record_json(r, m.patch_size).dump() << '\n';
  if (!out) throw DataError("failed writing manifest " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const std::string prefix = path.string() + ":";
  std::string line;
  if (!std::getline(in, line)) throw DataError(prefix + "1: missing header line");
  Manifest m;
  try {
    const json h = json::parse(line);
    if (h.value("format", "") != kManifestFormat) throw DataError(prefix + "1: not a manifest header");
    if (h.at("version").get<int>() != kManifestVersion)
      throw DataError(prefix + "1: unsupported manifest version");
    m.patch_size = h.at("patch_size").get<int>();
    m.seed = h.at("seed").get<std::uint64_t>();
    m.tissue_threshold = h.at("tissue_threshold").get<double>();
    m.background_cutoff = h.at("background_cutoff").get<double>();
  } catch (const json::exception& e) {
    throw DataError(prefix + "1: malformed header: " + e.what());
  }

  std::set<std::tuple<std::string, int, int>> seen;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = prefix + std::to_string(lineno) + ": ";
    if (line.empty()) continue;
    PatchRecord r;
    int patch = 0;
    try {
      const json j = json::parse(line);
      r.slide_id = j.at("slide_id").get<std::string>();
      r.origin = {j.at("y").get<int>(), j.at("x").get<int>()};
      r.slide_height = j.at("slide_height").get<int>();
      r.slide_width = j.at("slide_width").get<int>();
      patch = j.at("patch").get<int>();
      r.domain = parse_domain(j.at("domain").get<std::string>());
      r.path = j.at("path").get<std::string>();
      r.magnification = j.at("magnification").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(where + e.what());
    }
    if (patch != m.patch_size)
      throw DataError(where + "patch size " + std::to_string(patch) + " differs from manifest size " +
                      std::to_string(m.patch_size));
    check_record(r, patch, where);
    if (!seen.emplace(r.slide_id, r.origin.y, r.origin.x).second)
      throw DataError(where + "duplicate (slide, origin) for " + r.slide_id);
    m.records.push_back(std::move(r));
  }
  return m;
}

std::filesystem::path resolve_patch(const std::filesystem::path& manifest_path, const PatchRecord& r) {
  std::filesystem::path p(r.path);
  if (p.is_relative()) p = manifest_path.parent_path() / p;
  if (!std::filesystem::exists(p))
    throw DataError("patch image not found: " + p.string() + " (slide " + r.slide_id + ")");
  return p;
}

}  // namespace cyclestain
