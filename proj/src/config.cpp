#include "avk/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "avk/io.hpp"

namespace avk {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

struct Binder {
  std::map<std::string, std::function<void(const std::string&)>> set;
  std::map<std::string, std::function<std::string()>> get;
  std::vector<std::string> order;

  static double to_double(const std::string& v, const std::string& key) {
    try {
      size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw InputError("config: bad numeric value '" + v + "' for " + key);
    }
  }

  void num(const std::string& key, double& ref) {
    order.push_back(key);
    set[key] = [&ref, key](const std::string& v) { ref = to_double(v, key); };
    get[key] = [&ref] { return fmt(ref); };
  }
  void num(const std::string& key, int& ref) {
    order.push_back(key);
    set[key] = [&ref, key](const std::string& v) {
      const double d = to_double(v, key);
      if (d != static_cast<int>(d))
        throw InputError("config: " + key + " must be an integer");
      ref = static_cast<int>(d);
    };
    get[key] = [&ref] { return std::to_string(ref); };
  }
  void num(const std::string& key, uint64_t& ref) {
    order.push_back(key);
    set[key] = [&ref, key](const std::string& v) {
      uint64_t out = 0;
      const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
      if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw InputError("config: bad unsigned value '" + v + "' for " + key);
      ref = out;
    };
    get[key] = [&ref] { return std::to_string(ref); };
  }
  void boolean(const std::string& key, bool& ref) {
    order.push_back(key);
    set[key] = [&ref, key](const std::string& v) {
      if (v == "true") ref = true;
      else if (v == "false") ref = false;
      else throw InputError("config: " + key + " must be true or false");
    };
    get[key] = [&ref] { return ref ? std::string("true") : std::string("false"); };
  }
};

std::map<std::string, Binder> make_binders(RunConfig& c) {
  std::map<std::string, Binder> out;
  Binder& synth = out["synth"];
  synth.num("frame_count", c.frame_count);
  synth.num("pose_amplitude", c.pose_amplitude);
  synth.num("image_size", c.image_size);
  synth.num("grid_resolution", c.body.grid_resolution);
  synth.num("smoothing_length", c.body.smoothing_length);
  synth.num("cloth_offset", c.body.cloth_offset);
  synth.num("radius_scale", c.body.radius_scale);
  synth.num("depth_sigma_m", c.noise.depth_sigma_m);
  synth.num("latent_sigma", c.noise.latent_sigma);
  synth.num("pose_sigma_deg", c.noise.pose_sigma_deg);
  synth.num("noise_seed", c.noise.seed);
  synth.num("seed", c.seed);

  Binder& codec = out["codec"];
  codec.num("samples", c.codec_samples);
  codec.num("latent_dim", c.codec.latent_dim);
  codec.num("gaussian_sigma", c.codec.gaussian_sigma);
  codec.num("lambda_l1", c.codec.lambda_l1);
  codec.num("lambda_nz", c.codec.lambda_nz);
  codec.num("lambda_kl", c.codec.lambda_kl);
  codec.num("learning_rate", c.codec.learning_rate);
  codec.num("batch_size", c.codec.batch_size);
  codec.num("epochs", c.codec.epochs);

  Binder& canonical = out["canonical"];
  canonical.num("stretch_factor", c.stretch_factor);
  canonical.num("tau", c.tau);
  canonical.num("fuse_resolution", c.fuse_resolution);

  Binder& refine = out["refine"];
  refine.num("lambda1", c.refine.lambda1);
  refine.num("lambda2", c.refine.lambda2);
  refine.num("lambda3", c.refine.lambda3);
  refine.num("lambda4", c.refine.lambda4);
  refine.num("lambda5", c.refine.lambda5);
  refine.num("lambda6", c.refine.lambda6);
  refine.num("schedule_interval", c.refine.schedule_interval);
  refine.num("schedule_total", c.refine.schedule_total);
  refine.num("upsample_factor", c.refine.upsample_factor);
  refine.num("lambda_multiplier", c.refine.lambda_multiplier);
  refine.num("color_stage_lambda6", c.refine.color_stage_lambda6);
  refine.num("color_stage_iterations", c.refine.color_stage_iterations);
  refine.num("beta1", c.refine.beta1);
  refine.num("beta2", c.refine.beta2);
  refine.num("step_vertices", c.refine.step_vertices);
  refine.num("step_pose", c.refine.step_pose);
  refine.num("step_colors", c.refine.step_colors);
  refine.num("downsample_divisor", c.refine.downsample_divisor);
  refine.num("chamfer_max_points", c.refine.chamfer_max_points);
  refine.boolean("freeze_geometry_in_color_stage",
                 c.refine.freeze_geometry_in_color_stage);
  refine.num("soft_kappa_px", c.refine.soft.kappa_px);
  refine.num("soft_band_px", c.refine.soft.band_px);
  return out;
}

const std::vector<std::string> kSectionOrder = {"synth", "codec", "canonical",
                                                "refine"};

}  // namespace

void RunConfig::validate() const {
  if (frame_count < 1) throw InputError("config: frame_count must be >= 1");
  if (image_size < 8) throw InputError("config: image_size must be >= 8");
  if (pose_amplitude < 0) throw InputError("config: pose_amplitude must be >= 0");
  if (codec_samples < 1) throw InputError("config: codec samples must be >= 1");
  if (stretch_factor <= 1) throw InputError("config: stretch_factor must be > 1");
  if (tau <= 0) throw InputError("config: tau must be positive");
  if (fuse_resolution < 8) throw InputError("config: fuse_resolution must be >= 8");
  refine.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open " + path.string());
  RunConfig cfg;
  auto binders = make_binders(cfg);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError("config: bad section at " + where);
      section = trim(line.substr(1, line.size() - 2));
      if (!binders.count(section))
        throw InputError("config: unknown section [" + section + "] at " + where);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("config: expected key = value at " + where);
    if (section.empty())
      throw InputError("config: key outside any section at " + where);
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    auto& binder = binders.at(section);
    const auto it = binder.set.find(key);
    if (it == binder.set.end())
      throw InputError("config: unknown key '" + key + "' in [" + section +
                       "] at " + where);
    it->second(value);
  }
  cfg.validate();
  return cfg;
}

std::string serialize_run_config(const RunConfig& config) {
  RunConfig copy = config;
  auto binders = make_binders(copy);
  std::ostringstream out;
  for (const auto& section : kSectionOrder) {
    out << '[' << section << "]\n";
    const auto& binder = binders.at(section);
    for (const auto& key : binder.order)
      out << key << " = " << binder.get.at(key)() << '\n';
    out << '\n';
  }
  return out.str();
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  io::write_text_file(path, serialize_run_config(config));
}

std::string hash_bytes(const std::string& bytes) {
  uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

std::string hash_file(const std::filesystem::path& path) {
  return hash_bytes(io::read_text_file(path));
}

std::string config_hash(const RunConfig& config) {
  return hash_bytes(serialize_run_config(config));
}

}  // namespace avk
