#include "glims/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "glims/tensor.hpp"

namespace glims {

namespace {

namespace pt = boost::property_tree;

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("config: cannot parse '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: expected true or false for " + key + ", got '" + s + "'");
}

std::vector<std::int64_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::int64_t> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(parse_number<std::int64_t>(key, item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::string fmt_list(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// One entry per field: how to read it and how to print it.
struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Get>
Field number(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& s) { get(c) = parse_number<T>(k, s); },
          [get](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt(get(c));
            else
              return std::to_string(get(c));
          }};
}

template <class Get>
Field list(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& s) { get(c) = parse_list(k, s); },
          [get](const RunConfig& c) { return fmt_list(get(c)); }};
}

template <class Get>
Field flag(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& s) { get(c) = parse_bool(k, s); },
          [get](const RunConfig& c) { return std::string(get(c) ? "true" : "false"); }};
}

template <class Get>
Field extent(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& s) {
            const auto v = parse_list(k, s);
            if (v.size() != 3) throw ConfigError("config: " + k + " needs three values");
            get(c) = {v[0], v[1], v[2]};
          },
          [get](const RunConfig& c) {
            const auto& e = get(c);
            return fmt_list({e[0], e[1], e[2]});
          }};
}

template <class Get>
Field range(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& s) {
            const auto comma = s.find(',');
            if (comma == std::string::npos) throw ConfigError("config: " + k + " needs two values");
            get(c) = {parse_number<double>(k, s.substr(0, comma)), parse_number<double>(k, s.substr(comma + 1))};
          },
          [get](const RunConfig& c) {
            const auto& r = get(c);
            return fmt(r.first) + "," + fmt(r.second);
          }};
}

using Section = std::vector<std::pair<std::string, Field>>;

const std::vector<std::pair<std::string, Section>>& schema() {
#define F(expr) [](auto& c) -> auto& { return c.expr; }
  static const std::vector<std::pair<std::string, Section>> s{
      {"model",
       {{"in_channels", number<std::int64_t>(F(model.in_channels))},
        {"num_classes", number<std::int64_t>(F(model.num_classes))},
        {"base_channels", number<std::int64_t>(F(model.base_channels))},
        {"num_levels", number<std::int64_t>(F(model.num_levels))},
        {"cnn_levels", number<std::int64_t>(F(model.cnn_levels))},
        {"transformer_depths", list(F(model.transformer_depths))},
        {"bottleneck_depth", number<std::int64_t>(F(model.bottleneck_depth))},
        {"dilations", list(F(model.dilations))},
        {"window", number<std::int64_t>(F(model.window))},
        {"mlp_ratio", number<double>(F(model.mlp_ratio))},
        {"head_dim", number<std::int64_t>(F(model.head_dim))},
        {"csab_reduction", number<std::int64_t>(F(model.csab_reduction))},
        {"patch_size", number<std::int64_t>(F(model.patch_size))},
        {"deep_supervision_levels", number<std::int64_t>(F(model.deep_supervision_levels))},
        {"leaky_slope", number<double>(F(model.leaky_slope))}}},
      {"train",
       {{"epochs", number<std::int64_t>(F(train.epochs))},
        {"batch_size", number<std::int64_t>(F(train.batch_size))},
        {"max_steps", number<std::int64_t>(F(train.max_steps))},
        {"lr_max", number<double>(F(train.adamw.lr_max))},
        {"lr_min", number<double>(F(train.lr_min))},
        {"weight_decay", number<double>(F(train.adamw.weight_decay))},
        {"beta1", number<double>(F(train.adamw.beta1))},
        {"beta2", number<double>(F(train.adamw.beta2))},
        {"adam_eps", number<double>(F(train.adamw.eps))},
        {"loss_eps", number<double>(F(train.loss.eps))},
        {"normalize_ce", flag(F(train.loss.normalize_ce))},
        {"dice_only", flag(F(train.loss.dice_only))},
        {"flip_probability", number<double>(F(train.flip_probability))},
        {"overlap", number<double>(F(train.overlap))},
        {"validate_every", number<std::int64_t>(F(train.validate_every))},
        {"seed", number<std::uint64_t>(F(train.seed))},
        {"init_seed", number<std::uint64_t>(F(init_seed))}}},
      {"data",
       {{"seed", number<std::uint64_t>(F(data.seed))},
        {"cases", number<std::int64_t>(F(dataset_cases))},
        {"train_fraction", number<double>(F(train_fraction))},
        {"extent", extent(F(data.extent))},
        {"num_classes", number<int>(F(data.num_classes))},
        {"channels", number<std::int64_t>(F(data.channels))},
        {"outer_radius", range(F(data.outer_radius))},
        {"inner_scale", range(F(data.inner_scale))},
        {"center_jitter", number<double>(F(data.center_jitter))},
        {"class_mean", number<double>(F(data.class_mean))},
        {"channel_step", number<double>(F(data.channel_step))},
        {"channel_offset", number<double>(F(data.channel_offset))},
        {"noise_sigma", number<double>(F(data.noise_sigma))}}},
      {"runtime", {{"threads", number<int>(F(threads))}}},
  };
#undef F
  return s;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& [name, fields] : schema()) {
    if (name != section) continue;
    for (const auto& [k, f] : fields)
      if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError("config: unknown key [" + section + "] " + key);
      f->set(base, section + "." + key, value.data());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), std::move(base));
}

std::string to_ini(const RunConfig& config) {
  std::string out;
  for (const auto& [section, fields] : schema()) {
    out += (out.empty() ? "[" : "\n[") + section + "]\n";
    for (const auto& [key, f] : fields) out += key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace glims
