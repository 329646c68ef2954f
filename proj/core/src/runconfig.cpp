#include "pnet/runconfig.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include "pnet/errors.hpp"

namespace pnet {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  if (parts.empty()) parts.push_back("");
  return parts;
}

std::size_t parse_size(const std::string& v, std::size_t line) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(line, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, std::size_t line) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(line, "expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, std::size_t line) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) fail(line, "expected a number, got '" + v + "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "expected true or false, got '" + v + "'");
}

PoolMode parse_pool(const std::string& v, std::size_t line) {
  if (v == "none") return PoolMode::none;
  if (v == "floor") return PoolMode::floor;
  if (v == "ceil") return PoolMode::ceil;
  fail(line, "expected none, floor or ceil, got '" + v + "'");
}

const char* pool_name(PoolMode m) {
  switch (m) {
    case PoolMode::none: return "none";
    case PoolMode::floor: return "floor";
    case PoolMode::ceil: return "ceil";
  }
  return "none";
}

// Conv stacks arrive as three parallel comma lists; lengths are
// reconciled after all lines are read.
struct ConvListState {
  std::vector<std::size_t> channels, filters;
  std::vector<PoolMode> pools;
  bool channels_set = false, filters_set = false, pools_set = false;
};

void apply_conv_lists(std::vector<ConvLayerSpec>& layers, const ConvListState& st,
                      const std::string& which) {
  if (st.channels_set) {
    layers.resize(st.channels.size());
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].channels = st.channels[i];
  }
  if (st.filters_set) {
    if (st.filters.size() != layers.size()) {
      throw ConfigError("network." + which + "_filters has " + std::to_string(st.filters.size()) +
                        " entries but the stack has " + std::to_string(layers.size()) + " layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].filter = st.filters[i];
  }
  if (st.pools_set) {
    if (st.pools.size() != layers.size()) {
      throw ConfigError("network." + which + "_pools has " + std::to_string(st.pools.size()) +
                        " entries but the stack has " + std::to_string(layers.size()) + " layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].pool = st.pools[i];
  }
}

using Setter = std::function<void(const std::string&, std::size_t)>;

struct ParseState {
  RunConfig cfg;
  ConvListState trunk, tail;
};

std::unordered_map<std::string, Setter> make_setters(ParseState& st) {
  RunConfig& cfg = st.cfg;
  std::unordered_map<std::string, Setter> m;

  m["network.input_height"] = [&](const std::string& v, std::size_t l) { cfg.network.input_height = parse_size(v, l); };
  m["network.input_width"] = [&](const std::string& v, std::size_t l) { cfg.network.input_width = parse_size(v, l); };
  m["network.input_channels"] = [&](const std::string& v, std::size_t l) { cfg.network.input_channels = parse_size(v, l); };
  m["network.trunk_channels"] = [&](const std::string& v, std::size_t l) {
    st.trunk.channels.clear();
    for (const auto& p : split_list(v)) st.trunk.channels.push_back(parse_size(p, l));
    st.trunk.channels_set = true;
  };
  m["network.trunk_filters"] = [&](const std::string& v, std::size_t l) {
    st.trunk.filters.clear();
    for (const auto& p : split_list(v)) st.trunk.filters.push_back(parse_size(p, l));
    st.trunk.filters_set = true;
  };
  m["network.trunk_pools"] = [&](const std::string& v, std::size_t l) {
    st.trunk.pools.clear();
    for (const auto& p : split_list(v)) st.trunk.pools.push_back(parse_pool(p, l));
    st.trunk.pools_set = true;
  };
  m["network.neighborhood"] = [&](const std::string& v, std::size_t l) { cfg.network.neighborhood = parse_size(v, l); };
  m["network.summary_channels"] = [&](const std::string& v, std::size_t l) { cfg.network.summary_channels = parse_size(v, l); };
  m["network.tail_channels"] = [&](const std::string& v, std::size_t l) {
    st.tail.channels.clear();
    for (const auto& p : split_list(v)) st.tail.channels.push_back(parse_size(p, l));
    st.tail.channels_set = true;
  };
  m["network.tail_filters"] = [&](const std::string& v, std::size_t l) {
    st.tail.filters.clear();
    for (const auto& p : split_list(v)) st.tail.filters.push_back(parse_size(p, l));
    st.tail.filters_set = true;
  };
  m["network.tail_pools"] = [&](const std::string& v, std::size_t l) {
    st.tail.pools.clear();
    for (const auto& p : split_list(v)) st.tail.pools.push_back(parse_pool(p, l));
    st.tail.pools_set = true;
  };
  m["network.fc_sizes"] = [&](const std::string& v, std::size_t l) {
    cfg.network.fc_sizes.clear();
    for (const auto& p : split_list(v)) cfg.network.fc_sizes.push_back(parse_size(p, l));
  };
  m["network.activation_scale"] = [&](const std::string& v, std::size_t l) { cfg.network.activation_scale = parse_double(v, l); };
  m["network.dropout"] = [&](const std::string& v, std::size_t l) { cfg.network.dropout_rate = parse_double(v, l); };

  m["optimizer.algorithm"] = [&](const std::string& v, std::size_t l) {
    if (v != "rmsprop" && v != "sgd") fail(l, "expected rmsprop or sgd, got '" + v + "'");
    cfg.optimizer = v;
  };
  m["optimizer.learning_rate"] = [&](const std::string& v, std::size_t l) { cfg.lr.rate = parse_double(v, l); };
  m["optimizer.mu"] = [&](const std::string& v, std::size_t l) { cfg.rmsprop_mu = parse_double(v, l); };
  m["optimizer.weight_decay"] = [&](const std::string& v, std::size_t l) { cfg.weight_decay = parse_double(v, l); };
  m["optimizer.lr_drop_factor"] = [&](const std::string& v, std::size_t l) { cfg.lr.drop_factor = parse_double(v, l); };
  m["optimizer.lr_patience"] = [&](const std::string& v, std::size_t l) { cfg.lr.patience = parse_size(v, l); };
  m["optimizer.min_lr"] = [&](const std::string& v, std::size_t l) { cfg.lr.min_rate = parse_double(v, l); };

  m["training.iterations"] = [&](const std::string& v, std::size_t l) { cfg.iterations = parse_size(v, l); };
  m["training.batch_pairs"] = [&](const std::string& v, std::size_t l) { cfg.batch_pairs = parse_size(v, l); };
  m["training.log_every"] = [&](const std::string& v, std::size_t l) { cfg.log_every = parse_size(v, l); };
  m["training.checkpoint_every"] = [&](const std::string& v, std::size_t l) { cfg.checkpoint_every = parse_size(v, l); };
  m["training.validation_fraction"] = [&](const std::string& v, std::size_t l) { cfg.validation_fraction = parse_double(v, l); };
  m["training.validation_every"] = [&](const std::string& v, std::size_t l) { cfg.validation_every = parse_size(v, l); };
  m["training.validation_trials"] = [&](const std::string& v, std::size_t l) { cfg.validation_trials = parse_size(v, l); };
  m["training.early_stop"] = [&](const std::string& v, std::size_t l) { cfg.early_stop = parse_bool(v, l); };
  m["training.early_stop_patience"] = [&](const std::string& v, std::size_t l) { cfg.early_stop_patience = parse_size(v, l); };
  m["training.seed"] = [&](const std::string& v, std::size_t l) { cfg.seed = parse_u64(v, l); };

  m["data.manifest"] = [&](const std::string& v, std::size_t) { cfg.manifest = v; };
  m["data.augment_translate"] = [&](const std::string& v, std::size_t l) { cfg.augment_translate = parse_bool(v, l); };
  m["data.translate_fraction"] = [&](const std::string& v, std::size_t l) { cfg.translate_fraction = parse_double(v, l); };
  m["data.augment_reflect"] = [&](const std::string& v, std::size_t l) { cfg.augment_reflect = parse_bool(v, l); };

  return m;
}

void parse_lines(const std::string& text, const std::unordered_map<std::string, Setter>& setters,
                 bool network_only) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (network_only && !key.starts_with("network.")) {
      fail(line_no, "only network.* keys are allowed here, got '" + key + "'");
    }
    auto it = setters.find(key);
    if (it == setters.end()) fail(line_no, "unknown key '" + key + "'");
    it->second(value, line_no);
  }
}

void finish(ParseState& st) {
  apply_conv_lists(st.cfg.network.trunk, st.trunk, "trunk");
  apply_conv_lists(st.cfg.network.tail, st.tail, "tail");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void append_network(std::ostream& out, const NetworkConfig& n) {
  out << "network.input_height = " << n.input_height << "\n";
  out << "network.input_width = " << n.input_width << "\n";
  out << "network.input_channels = " << n.input_channels << "\n";
  auto list = [&out](const char* key, auto&& field) {
    out << key << " = ";
    bool first = true;
    for (const auto& v : field) {
      if (!first) out << ",";
      out << v;
      first = false;
    }
    out << "\n";
  };
  std::vector<std::size_t> ch, fl;
  std::vector<std::string> pl;
  for (const auto& s : n.trunk) {
    ch.push_back(s.channels);
    fl.push_back(s.filter);
    pl.push_back(pool_name(s.pool));
  }
  list("network.trunk_channels", ch);
  list("network.trunk_filters", fl);
  list("network.trunk_pools", pl);
  out << "network.neighborhood = " << n.neighborhood << "\n";
  out << "network.summary_channels = " << n.summary_channels << "\n";
  ch.clear();
  fl.clear();
  pl.clear();
  for (const auto& s : n.tail) {
    ch.push_back(s.channels);
    fl.push_back(s.filter);
    pl.push_back(pool_name(s.pool));
  }
  list("network.tail_channels", ch);
  list("network.tail_filters", fl);
  list("network.tail_pools", pl);
  list("network.fc_sizes", n.fc_sizes);
  out << "network.activation_scale = " << format_double(n.activation_scale) << "\n";
  out << "network.dropout = " << format_double(n.dropout_rate) << "\n";
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  ParseState st;
  const auto setters = make_setters(st);
  parse_lines(text, setters, false);
  finish(st);
  return st.cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

std::string run_config_text(const RunConfig& cfg) {
  std::ostringstream out;
  append_network(out, cfg.network);
  out << "optimizer.algorithm = " << cfg.optimizer << "\n";
  out << "optimizer.learning_rate = " << format_double(cfg.lr.rate) << "\n";
  out << "optimizer.mu = " << format_double(cfg.rmsprop_mu) << "\n";
  out << "optimizer.weight_decay = " << format_double(cfg.weight_decay) << "\n";
  out << "optimizer.lr_drop_factor = " << format_double(cfg.lr.drop_factor) << "\n";
  out << "optimizer.lr_patience = " << cfg.lr.patience << "\n";
  out << "optimizer.min_lr = " << format_double(cfg.lr.min_rate) << "\n";
  out << "training.iterations = " << cfg.iterations << "\n";
  out << "training.batch_pairs = " << cfg.batch_pairs << "\n";
  out << "training.log_every = " << cfg.log_every << "\n";
  out << "training.checkpoint_every = " << cfg.checkpoint_every << "\n";
  out << "training.validation_fraction = " << format_double(cfg.validation_fraction) << "\n";
  out << "training.validation_every = " << cfg.validation_every << "\n";
  out << "training.validation_trials = " << cfg.validation_trials << "\n";
  out << "training.early_stop = " << (cfg.early_stop ? "true" : "false") << "\n";
  out << "training.early_stop_patience = " << cfg.early_stop_patience << "\n";
  out << "training.seed = " << cfg.seed << "\n";
  if (!cfg.manifest.empty()) out << "data.manifest = " << cfg.manifest << "\n";
  out << "data.augment_translate = " << (cfg.augment_translate ? "true" : "false") << "\n";
  out << "data.translate_fraction = " << format_double(cfg.translate_fraction) << "\n";
  out << "data.augment_reflect = " << (cfg.augment_reflect ? "true" : "false") << "\n";
  return out.str();
}

std::string network_config_text(const NetworkConfig& cfg) {
  std::ostringstream out;
  append_network(out, cfg);
  return out.str();
}

NetworkConfig parse_network_config_text(const std::string& text) {
  ParseState st;
  const auto setters = make_setters(st);
  parse_lines(text, setters, true);
  finish(st);
  return st.cfg.network;
}

}  // namespace pnet
