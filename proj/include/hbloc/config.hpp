#pragma once

// Experiment configuration: JSON documents validated against a fixed schema.
// Every violation is reported with the file position of the offending value
// and its JSON pointer, e.g. "run.json:12:18: /hypermodel/beta: must be > 0".

#include "hbloc/fem/sphere.hpp"
#include "hbloc/hypermodel.hpp"
#include "hbloc/ias.hpp"
#include "hbloc/mcmc.hpp"
#include "hbloc/planar.hpp"

#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace hbloc {

/// Invalid configuration; exit status 2 in the command line tool.
class ConfigError : public DomainError {
 public:
  using DomainError::DomainError;
};

using JsonPath = std::vector<std::variant<std::string, std::size_t>>;

inline std::string to_pointer(const JsonPath& path) {
  if (path.empty()) return "/";
  std::string out;
  for (const auto& p : path) {
    out += '/';
    if (const auto* s = std::get_if<std::string>(&p))
      out += *s;
    else
      out += std::to_string(std::get<std::size_t>(p));
  }
  return out;
}

namespace detail {

/// Finds the byte offset of the value at `path` in JSON text. Returns the
/// offset of the deepest enclosing value that exists.
class JsonLocator {
 public:
  explicit JsonLocator(const std::string& text) : s_(text) {}

  std::size_t locate(const JsonPath& path) {
    i_ = 0;
    ws();
    std::size_t found = i_;
    for (const auto& step : path) {
      if (i_ >= s_.size()) break;
      found = i_;
      if (const auto* key = std::get_if<std::string>(&step)) {
        if (s_[i_] != '{') return found;
        ++i_;
        bool hit = false;
        while (true) {
          ws();
          if (i_ >= s_.size() || s_[i_] == '}') break;
          const std::string k = read_string();
          ws();
          if (i_ < s_.size() && s_[i_] == ':') ++i_;
          ws();
          if (k == *key) {
            hit = true;
            break;
          }
          skip_value();
          ws();
          if (i_ < s_.size() && s_[i_] == ',') ++i_;
        }
        if (!hit) return found;
      } else {
        const std::size_t idx = std::get<std::size_t>(step);
        if (s_[i_] != '[') return found;
        ++i_;
        for (std::size_t n = 0; n < idx; ++n) {
          ws();
          if (i_ >= s_.size() || s_[i_] == ']') return found;
          skip_value();
          ws();
          if (i_ < s_.size() && s_[i_] == ',') ++i_;
        }
        ws();
        if (i_ >= s_.size() || s_[i_] == ']') return found;
      }
    }
    return i_ < s_.size() ? i_ : found;
  }

  std::pair<std::size_t, std::size_t> line_col(std::size_t offset) const {
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k < offset && k < s_.size(); ++k) {
      if (s_[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    return {line, col};
  }

 private:
  void ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  std::string read_string() {
    std::string out;
    if (i_ >= s_.size() || s_[i_] != '"') return out;
    ++i_;
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\' && i_ + 1 < s_.size()) ++i_;
      out += s_[i_++];
    }
    ++i_;
    return out;
  }
  void skip_value() {
    if (i_ >= s_.size()) return;
    const char c = s_[i_];
    if (c == '"') {
      read_string();
    } else if (c == '{' || c == '[') {
      int depth = 0;
      while (i_ < s_.size()) {
        const char d = s_[i_];
        if (d == '"') {
          read_string();
          continue;
        }
        if (d == '{' || d == '[') ++depth;
        if (d == '}' || d == ']') --depth;
        ++i_;
        if (depth == 0) break;
      }
    } else {
      while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != '}' && s_[i_] != ']' && !std::isspace(static_cast<unsigned char>(s_[i_])))
        ++i_;
    }
  }

  const std::string& s_;
  std::size_t i_ = 0;
};

/// Schema walker: typed accessors that know their JSON path.
class Node {
 public:
  Node(const nlohmann::json& j, JsonPath path) : j_(&j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const { throw PathError{path_, msg}; }

  struct PathError {
    JsonPath path;
    std::string message;
  };

  const nlohmann::json& json() const { return *j_; }
  const JsonPath& path() const { return path_; }
  bool has(const std::string& key) const { return j_->contains(key); }

  Node at(const std::string& key) const {
    JsonPath p = path_;
    p.emplace_back(key);
    if (!j_->contains(key)) fail("missing required key '" + key + "'");
    return {(*j_)[key], p};
  }
  Node at(std::size_t i) const {
    JsonPath p = path_;
    p.emplace_back(i);
    return {(*j_)[i], p};
  }

  void object(const std::set<std::string>& allowed) const {
    if (!j_->is_object()) fail("expected an object");
    for (const auto& [k, v] : j_->items()) {
      (void)v;
      if (!allowed.count(k)) {
        JsonPath p = path_;
        p.emplace_back(k);
        throw PathError{p, "unknown key '" + k + "'"};
      }
    }
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }
  double number(double lo, double hi, const std::string& range) const {
    const double v = number();
    if (!(v >= lo && v <= hi)) fail("must be " + range);
    return v;
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0) || !std::isfinite(v)) fail("must be > 0");
    return v;
  }
  long long integer(long long lo, long long hi) const {
    if (!j_->is_number_integer()) fail("expected an integer");
    const long long v = j_->get<long long>();
    if (v < lo || v > hi) fail("must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  std::string choice(const std::set<std::string>& options) const {
    const std::string v = string();
    if (!options.count(v)) {
      std::string list;
      for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
      fail("must be one of: " + list);
    }
    return v;
  }
  std::vector<double> numbers(std::size_t min_size, std::size_t exact = 0) const {
    if (!j_->is_array()) fail("expected an array of numbers");
    if (exact && j_->size() != exact) fail("expected exactly " + std::to_string(exact) + " numbers");
    if (j_->size() < min_size) fail("expected at least " + std::to_string(min_size) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j_->size(); ++i) out.push_back(at(i).number());
    return out;
  }
  std::vector<std::string> strings() const {
    if (!j_->is_array()) fail("expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j_->size(); ++i) out.push_back(at(i).string());
    return out;
  }

 private:
  const nlohmann::json* j_;
  JsonPath path_;
};

}  // namespace detail

enum class ForwardKind { planar, sphere, mesh };
enum class Modality { eeg, meg };

struct FemSourceSpec {
  Vec3 position{0.0, 0.02, 0.04};
  Vec3 moment{1e-6, 0.0, 0.0};
  double support_radius = 0.016;
};

struct ExperimentConfig {
  nlohmann::json document;  ///< as read, after command line overrides
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string output = "runs/experiment";

  ForwardKind kind = ForwardKind::planar;
  PlanarOptions planar;
  fem::SphereOptions sphere;
  int reference_resolution = 0;  ///< sphere data mesh; 0 means the inverse mesh
  std::filesystem::path mesh_path;
  Modality modality = Modality::eeg;
  FemSourceSpec source;
  double roi_radius = 0.015;

  HyperModel hm = HyperModel::gamma(3.0, 1e-7);
  std::string family = "gamma";
  double noise_fraction = 0.05;
  bool add_noise = false;

  int ias_iterations = 15;
  bool ias_exact = false;
  int ias_max_inner = 0;  ///< 0 means the problem-size default
  double ias_tolerance = 1e-6;

  ChainConfig chain;
  bool chain_csv = true;
  std::string mcmc_init = "theta0";
};

namespace detail {

inline Vec3 vec3_of(const Node& n) {
  const auto v = n.numbers(3, 3);
  return {v[0], v[1], v[2]};
}

inline ExperimentConfig read_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.document = doc;
  const Node root(doc, {});
  root.object({"name", "description", "seed", "output", "forward", "hypermodel", "noise", "ias", "mcmc"});
  if (root.has("name")) c.name = root.at("name").string();
  if (root.has("seed")) c.seed = static_cast<std::uint64_t>(root.at("seed").integer(0, std::numeric_limits<long long>::max()));
  if (root.has("output")) c.output = root.at("output").string();

  const Node fw = root.at("forward");
  fw.object({"kind", "planar", "sphere", "mesh", "modality", "source", "roi_radius"});
  const std::string kind = fw.at("kind").choice({"planar", "sphere", "mesh"});
  c.kind = kind == "planar" ? ForwardKind::planar : kind == "sphere" ? ForwardKind::sphere : ForwardKind::mesh;
  if (c.kind == ForwardKind::planar) {
    if (fw.has("sphere") || fw.has("mesh") || fw.has("modality") || fw.has("source") || fw.has("roi_radius"))
      fw.fail("planar forward model takes only 'kind' and 'planar'");
    if (fw.has("planar")) {
      const Node p = fw.at("planar");
      p.object({"nx", "ny", "spacing", "sensor_height", "layers", "layer_step", "true_depth", "true_offset", "true_moment",
                "roi_half_width"});
      auto& o = c.planar;
      if (p.has("nx")) o.nx = static_cast<int>(p.at("nx").integer(1, 1000));
      if (p.has("ny")) o.ny = static_cast<int>(p.at("ny").integer(1, 1000));
      if (p.has("spacing")) o.spacing = p.at("spacing").positive();
      if (p.has("sensor_height")) o.sensor_height = p.at("sensor_height").positive();
      if (p.has("layers")) o.layers = static_cast<int>(p.at("layers").integer(1, 100));
      if (p.has("layer_step")) o.layer_step = p.at("layer_step").positive();
      if (p.has("true_depth")) o.true_depth = p.at("true_depth").number(0.0, 1.0, "in [0, 1] m");
      if (p.has("true_offset")) o.true_offset = vec3_of(p.at("true_offset"));
      if (p.has("true_moment")) {
        const auto m = p.at("true_moment").numbers(2, 2);
        o.true_moment = (Vector(2) << m[0], m[1]).finished();
      }
      if (p.has("roi_half_width")) o.roi_half_width = static_cast<int>(p.at("roi_half_width").integer(1, 1000));
    }
  } else {
    if (fw.has("planar")) fw.at("planar").fail("only valid with kind 'planar'");
    if (c.kind == ForwardKind::sphere) {
      if (fw.has("mesh")) fw.at("mesh").fail("only valid with kind 'mesh'");
      const Node s = fw.at("sphere");
      s.object({"radii", "conductivities", "names", "resolution", "reference_resolution", "electrodes", "electrode_angle",
                "impedance", "sensors", "sensor_radius"});
      auto& o = c.sphere;
      o.radii = s.at("radii").numbers(1);
      o.conductivities = s.at("conductivities").numbers(1);
      if (o.conductivities.size() != o.radii.size()) s.at("conductivities").fail("one conductivity per radius required");
      for (std::size_t i = 0; i < o.conductivities.size(); ++i) s.at("conductivities").at(i).positive();
      for (std::size_t i = 0; i < o.radii.size(); ++i) {
        s.at("radii").at(i).positive();
        if (i > 0 && !(o.radii[i] > o.radii[i - 1])) s.at("radii").at(i).fail("radii must be increasing");
      }
      o.names = s.has("names") ? s.at("names").strings() : std::vector<std::string>{};
      if (!o.names.empty() && o.names.size() != o.radii.size()) s.at("names").fail("one name per radius required");
      if (s.has("resolution")) o.resolution = static_cast<int>(s.at("resolution").integer(1, 10));
      if (s.has("reference_resolution"))
        c.reference_resolution = static_cast<int>(s.at("reference_resolution").integer(1, 10));
      if (s.has("electrodes")) o.electrodes = static_cast<int>(s.at("electrodes").integer(2, 512));
      if (s.has("electrode_angle")) o.electrode_angle = s.at("electrode_angle").number(1e-3, 1.0, "in [0.001, 1] rad");
      if (s.has("impedance")) o.impedance = s.at("impedance").positive();
      if (s.has("sensors")) o.sensors = static_cast<int>(s.at("sensors").integer(0, 4096));
      if (s.has("sensor_radius")) o.sensor_radius = s.at("sensor_radius").positive();
      if (o.sensors > 0 && !(o.sensor_radius > o.radii.back())) s.at("sensor_radius").fail("must exceed the outer radius");
      try {
        fem::sphere_layer_cells(o);
      } catch (const DomainError& e) {
        s.fail(e.what());
      }
    } else {
      if (fw.has("sphere")) fw.at("sphere").fail("only valid with kind 'sphere'");
      const Node m = fw.at("mesh");
      std::filesystem::path p = m.string();
      if (p.is_relative()) p = base_dir / p;
      if (!std::filesystem::exists(p)) m.fail("mesh file not found: " + p.string());
      c.mesh_path = p;
    }
    if (fw.has("modality")) c.modality = fw.at("modality").choice({"eeg", "meg"}) == "eeg" ? Modality::eeg : Modality::meg;
    if (c.kind == ForwardKind::sphere && c.modality == Modality::meg && c.sphere.sensors == 0)
      fw.at("modality").fail("meg needs sensors > 0");
    if (fw.has("source")) {
      const Node s = fw.at("source");
      s.object({"position", "moment", "support_radius"});
      if (s.has("position")) c.source.position = vec3_of(s.at("position"));
      if (s.has("moment")) c.source.moment = vec3_of(s.at("moment"));
      if (s.has("support_radius")) c.source.support_radius = s.at("support_radius").number(0.0, 1.0, "in [0, 1] m");
      if (c.kind == ForwardKind::sphere && !(c.source.position.norm() < c.sphere.radii.front()))
        s.at("position").fail("source must lie inside the innermost layer");
    }
    if (fw.has("roi_radius")) c.roi_radius = fw.at("roi_radius").positive();
  }

  const Node h = root.at("hypermodel");
  h.object({"family", "r", "beta", "theta0", "unit_group_normalization"});
  c.family = h.at("family").choice({"gamma", "inverse_gamma", "generalized"});
  double r = c.family == "gamma" ? 1.0 : c.family == "inverse_gamma" ? -1.0 : 0.0;
  if (c.family == "generalized") {
    r = h.at("r").number();
    if (r == 0.0 || !std::isfinite(r)) h.at("r").fail("must be nonzero and finite");
  } else if (h.has("r")) {
    h.at("r").fail("only valid with family 'generalized'");
  }
  const double beta = h.at("beta").positive();
  const double theta0 = h.at("theta0").positive();
  const bool exact = h.has("unit_group_normalization") ? h.at("unit_group_normalization").boolean() : false;
  c.hm = HyperModel(r, beta, theta0, exact);

  if (root.has("noise")) {
    const Node n = root.at("noise");
    n.object({"fraction", "add_noise"});
    if (n.has("fraction")) c.noise_fraction = n.at("fraction").number(0.0, 10.0, "in [0, 10]");
    if (n.has("add_noise")) c.add_noise = n.at("add_noise").boolean();
  }
  if (!(c.noise_fraction > 0.0)) root.at("noise").at("fraction").fail("must be > 0 (it sets the noise level sigma)");

  if (root.has("ias")) {
    const Node n = root.at("ias");
    n.object({"iterations", "exact", "max_inner_iterations", "tolerance"});
    if (n.has("iterations")) c.ias_iterations = static_cast<int>(n.at("iterations").integer(1, 100000));
    if (n.has("exact")) c.ias_exact = n.at("exact").boolean();
    if (n.has("max_inner_iterations")) c.ias_max_inner = static_cast<int>(n.at("max_inner_iterations").integer(1, 1000000));
    if (n.has("tolerance")) c.ias_tolerance = n.at("tolerance").number(1e-16, 1.0, "in [1e-16, 1]");
  }

  if (root.has("mcmc")) {
    const Node n = root.at("mcmc");
    n.object({"sample_size", "thinning", "discard", "chain_csv", "store_alpha", "init"});
    if (n.has("sample_size")) c.chain.sample_size = static_cast<int>(n.at("sample_size").integer(1, 100000000));
    if (n.has("thinning")) c.chain.thinning = static_cast<int>(n.at("thinning").integer(1, 100000000));
    if (n.has("discard")) {
      c.chain.discard = static_cast<int>(n.at("discard").integer(0, 100000000));
      if (c.chain.discard >= c.chain.sample_size) n.at("discard").fail("must be smaller than sample_size");
    }
    if (n.has("chain_csv")) c.chain_csv = n.at("chain_csv").boolean();
    if (n.has("store_alpha")) c.chain.store_alpha = n.at("store_alpha").boolean();
    if (n.has("init")) c.mcmc_init = n.at("init").choice({"theta0", "map"});
  }
  c.chain.seed = c.seed;
  return c;
}

}  // namespace detail

/// Parses and validates a configuration document. `source` names the file in
/// error messages; relative mesh paths resolve against `base_dir`.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>",
                                     const std::filesystem::path& base_dir = ".", const nlohmann::json& overrides = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    detail::JsonLocator loc(text);
    const auto [line, col] = loc.line_col(e.byte > 0 ? e.byte - 1 : 0);
    std::string what = e.what();
    const auto p = what.find(": ");
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON" +
                      (p != std::string::npos ? what.substr(p) : ": " + what));
  }
  if (!overrides.is_null()) doc.merge_patch(overrides);
  try {
    return detail::read_config(doc, base_dir);
  } catch (const detail::Node::PathError& e) {
    detail::JsonLocator loc(text);
    const auto [line, col] = loc.line_col(loc.locate(e.path));
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + to_pointer(e.path) + ": " +
                      e.message);
  } catch (const DomainError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string(), path.has_parent_path() ? path.parent_path() : ".", overrides);
}

}  // namespace hbloc
