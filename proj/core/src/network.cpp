#include "pnet/network.hpp"

#include <string>

#include "pnet/errors.hpp"

namespace pnet {

NetworkConfig NetworkConfig::canonical() {
  NetworkConfig cfg;
  cfg.input_height = 160;
  cfg.input_width = 60;
  cfg.input_channels = 3;
  cfg.trunk = {
      {32, 4, PoolMode::ceil},
      {32, 4, PoolMode::ceil},
      {32, 4, PoolMode::none},
      {32, 4, PoolMode::none},
  };
  cfg.neighborhood = 3;
  cfg.summary_channels = 32;
  cfg.tail = {{32, 3, PoolMode::floor}};
  cfg.fc_sizes = {4096, 4096, 512};
  return cfg;
}

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig cfg;
  cfg.input_height = 40;
  cfg.input_width = 20;
  cfg.input_channels = 3;
  cfg.trunk = {
      {8, 3, PoolMode::floor},
      {8, 3, PoolMode::none},
  };
  cfg.neighborhood = 3;
  cfg.summary_channels = 8;
  cfg.tail = {{8, 3, PoolMode::floor}};
  cfg.fc_sizes = {32, 32, 16};
  return cfg;
}

namespace {

std::size_t conv_shrink(std::size_t in, std::size_t filter, const std::string& layer,
                        const char* axis) {
  if (in < filter) {
    throw ConfigError("layer '" + layer + "': " + axis + " extent " + std::to_string(in) +
                      " smaller than its " + std::to_string(filter) + "-wide filter");
  }
  return in - filter + 1;
}

std::size_t pool_shrink(std::size_t in, PoolMode mode, const std::string& layer, const char* axis) {
  const std::size_t out = mode == PoolMode::ceil ? (in + 1) / 2 : in / 2;
  if (out == 0) {
    throw ConfigError("layer '" + layer + "': " + axis + " extent " + std::to_string(in) +
                      " collapses under 2x2 pooling");
  }
  return out;
}

}  // namespace

ShapePlan plan_shapes(const NetworkConfig& cfg) {
  if (cfg.neighborhood == 0 || cfg.neighborhood % 2 == 0) {
    throw ConfigError("neighborhood must be odd, got " + std::to_string(cfg.neighborhood));
  }
  if (cfg.input_height == 0 || cfg.input_width == 0 || cfg.input_channels == 0) {
    throw ConfigError("input extents must be positive");
  }

  ShapePlan plan;
  plan.push_back({"input", {cfg.input_height, cfg.input_width, cfg.input_channels}});

  std::size_t h = cfg.input_height, w = cfg.input_width, c = cfg.input_channels;
  auto conv_step = [&](const ConvLayerSpec& spec, const std::string& name) {
    h = conv_shrink(h, spec.filter, name, "height");
    w = conv_shrink(w, spec.filter, name, "width");
    c = spec.channels;
    plan.push_back({name, {h, w, c}});
    if (spec.pool != PoolMode::none) {
      const std::string pool_name = "pool" + name.substr(4);
      h = pool_shrink(h, spec.pool, pool_name, "height");
      w = pool_shrink(w, spec.pool, pool_name, "width");
      plan.push_back({pool_name, {h, w, c}});
    }
  };

  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    conv_step(cfg.trunk[i], detail::trunk_conv_name(i));
  }

  const std::size_t n = cfg.neighborhood;
  plan.push_back({"difference", {h * n, w * n, c}});
  c = cfg.summary_channels;
  plan.push_back({"summary", {h, w, c}});

  for (std::size_t i = 0; i < cfg.tail.size(); ++i) {
    conv_step(cfg.tail[i], detail::tail_conv_name(cfg, i));
  }

  plan.push_back({"flatten", {h * w * c}});
  std::size_t width = h * w * c;
  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    if (cfg.fc_sizes[i] == 0) {
      throw ConfigError("layer '" + detail::fc_name(i) + "': zero width");
    }
    width = cfg.fc_sizes[i];
    plan.push_back({detail::fc_name(i), {width}});
  }
  plan.push_back({"head", {2}});
  return plan;
}

std::vector<std::pair<std::string, Shape>> plan_parameters(const NetworkConfig& cfg) {
  const ShapePlan plan = plan_shapes(cfg);  // rejects impossible configs up front

  std::vector<std::pair<std::string, Shape>> out;
  std::size_t c = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const auto& spec = cfg.trunk[i];
    const std::string name = detail::trunk_conv_name(i);
    out.emplace_back(name + ".weights", Shape{spec.channels, c, spec.filter, spec.filter});
    out.emplace_back(name + ".bias", Shape{spec.channels});
    c = spec.channels;
  }

  out.emplace_back("summary.weights",
                   Shape{cfg.summary_channels, c, cfg.neighborhood, cfg.neighborhood});
  out.emplace_back("summary.bias", Shape{cfg.summary_channels});
  c = cfg.summary_channels;

  for (std::size_t i = 0; i < cfg.tail.size(); ++i) {
    const auto& spec = cfg.tail[i];
    const std::string name = detail::tail_conv_name(cfg, i);
    out.emplace_back(name + ".weights", Shape{spec.channels, c, spec.filter, spec.filter});
    out.emplace_back(name + ".bias", Shape{spec.channels});
    c = spec.channels;
  }

  std::size_t width = 0;
  for (const auto& e : plan) {
    if (e.name == "flatten") width = e.extents[0];
  }
  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    const std::string name = detail::fc_name(i);
    out.emplace_back(name + ".weights", Shape{cfg.fc_sizes[i], width});
    out.emplace_back(name + ".bias", Shape{cfg.fc_sizes[i]});
    width = cfg.fc_sizes[i];
  }
  out.emplace_back("head.weights", Shape{2, width});
  out.emplace_back("head.bias", Shape{2});
  return out;
}

}  // namespace pnet
