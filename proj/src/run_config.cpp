// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "zq/error.hpp"

namespace zq {

PrecisionConfig make_precision(const std::string& scheme, std::size_t groups, bool static_act, bool attn_input_full) {
  PrecisionConfig p = PrecisionConfig::from_scheme(scheme, groups);
  if (attn_input_full) {
    if (!p.quantizes_activations()) throw UsageError("attention-input-full needs an A8 scheme, got " + scheme);
    p.activations = ActivationScheme::AttnInputFull;
  }
  p.activation_static = static_act;
  p.validate();
  return p;
}

PrecisionConfig RunConfig::precision(std::size_t dim) const {
  return make_precision(scheme, groups.value_or(default_group_count(dim)), static_act, attn_input_full);
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct LineContext {
  const std::string& source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + what);
  }
};

template <typename T>
T parse_number(const std::string& key, const std::string& v, const LineContext& ctx) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) ctx.fail("'" + v + "' is not a valid value for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v, const LineContext& ctx) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  ctx.fail("'" + v + "' is not a boolean for " + key);
}

}  // namespace

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig c;
  std::string data_source = "random";
  std::size_t data_source_line = 0;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const LineContext ctx{source, line_no};
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) ctx.fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) ctx.fail("missing key");
    if (value.empty()) ctx.fail("missing value for " + key);
    if (!seen.insert(key).second) ctx.fail("duplicate key '" + key + "'");

    if (key == "scheme") {
      c.scheme = value;
    } else if (key == "groups") {
      c.groups = parse_number<std::size_t>(key, value, ctx);
      if (*c.groups == 0) ctx.fail("groups must be >= 1");
    } else if (key == "static_act") {
      c.static_act = parse_bool(key, value, ctx);
    } else if (key == "attn_input_full") {
      c.attn_input_full = parse_bool(key, value, ctx);
    } else if (key == "calib") {
      c.calib_path = value;
    } else if (key == "learning_rate") {
      c.lkd.learning_rate = parse_number<float>(key, value, ctx);
    } else if (key == "iterations") {
      c.lkd.iterations = parse_number<std::size_t>(key, value, ctx);
    } else if (key == "batch_size") {
      c.lkd.batch_size = parse_number<std::size_t>(key, value, ctx);
    } else if (key == "seq_len") {
      c.lkd.seq_len = parse_number<std::size_t>(key, value, ctx);
    } else if (key == "optimizer") {
      if (value == "adam") {
        c.lkd.optimizer = OptimizerKind::Adam;
      } else if (value == "sgd") {
        c.lkd.optimizer = OptimizerKind::Sgd;
      } else {
        ctx.fail("optimizer must be adam or sgd");
      }
    } else if (key == "beta1") {
      c.lkd.beta1 = parse_number<double>(key, value, ctx);
    } else if (key == "beta2") {
      c.lkd.beta2 = parse_number<double>(key, value, ctx);
    } else if (key == "adam_eps") {
      c.lkd.adam_eps = parse_number<double>(key, value, ctx);
    } else if (key == "loss") {
      if (value == "mse") {
        c.lkd.loss = LossKind::Mse;
      } else if (value == "kl") {
        c.lkd.loss = LossKind::Kl;
      } else {
        ctx.fail("loss must be mse or kl");
      }
    } else if (key == "data_source") {
      if (value != "random" && value != "original" && value != "corpus") {
        ctx.fail("data_source must be random, original or corpus");
      }
      data_source = value;
      data_source_line = line_no;
    } else if (key == "data") {
      c.data_path = value;
    } else if (key == "seed") {
      c.lkd.seed = parse_number<std::uint64_t>(key, value, ctx);
    } else if (key == "out") {
      c.out_path = value;
    } else if (key == "loss_csv") {
      c.loss_csv_path = value;
    } else {
      ctx.fail("unknown key '" + key + "'");
    }
  }
  if (data_source == "random") {
    c.lkd.data_source = RandomTokens{c.lkd.seed};
  } else {
    if (c.data_path.empty()) LineContext{source, data_source_line}.fail("data_source " + data_source + " needs data");
    if (data_source == "original") {
      c.lkd.data_source = OriginalData{c.data_path};
    } else {
      c.lkd.data_source = AltCorpus{c.data_path};
    }
  }
  try {
    c.lkd.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  return parse_run_config(in, path);
}

}  // namespace zq
