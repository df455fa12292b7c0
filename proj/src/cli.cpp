// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "zq/checkpoint.hpp"
#include "zq/error.hpp"
#include "zq/eval.hpp"
#include "zq/lkd.hpp"
#include "zq/run_config.hpp"
#include "zq/token_data.hpp"

namespace zq {

void write_calibration_csv(std::ostream& out, const SiteRanges& ranges) {
  out << "layer,site,x_max,x_min,scale\n";
  for (std::size_t l = 0; l < ranges.size(); ++l) {
    for (Site s : kAllSites) {
      const SiteRange& r = ranges[l][static_cast<std::size_t>(s)];
      out << l << ',' << site_name(s) << ',' << format_number(r.x_max) << ',' << format_number(r.x_min) << ','
          << format_number(r.scale) << '\n';
    }
  }
}

SiteRanges read_calibration_csv(const std::string& path, std::size_t layers) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open calibration file '" + path + "'");
  SiteRanges ranges(layers);
  std::vector<std::array<bool, kNumSites>> seen(layers, {false, false, false, false});
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw InputError(path + ":" + std::to_string(line_no) + ": " + what);
  };
  if (!std::getline(in, line) || line != "layer,site,x_max,x_min,scale") {
    line_no = 1;
    fail("expected header layer,site,x_max,x_min,scale");
  }
  line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) fail("expected 5 fields");
    std::size_t layer = 0;
    float vals[3] = {};
    try {
      std::size_t used = 0;
      layer = std::stoul(cells[0], &used);
      if (used != cells[0].size()) fail("bad layer index");
      for (int i = 0; i < 3; ++i) {
        vals[i] = std::stof(cells[2 + i], &used);
        if (used != cells[2 + i].size()) fail("bad number");
      }
    } catch (const std::logic_error&) {
      fail("bad number");
    }
    const auto site = parse_site(cells[1]);
    if (!site) fail("unknown site '" + cells[1] + "'");
    if (layer >= layers) fail("layer " + std::to_string(layer) + " does not exist in a " + std::to_string(layers) + "-layer model");
    if (!(vals[2] > 0.0f)) fail("scale must be positive");
    const auto idx = static_cast<std::size_t>(*site);
    if (seen[layer][idx]) fail("duplicate entry");
    seen[layer][idx] = true;
    ranges[layer][idx] = {vals[0], vals[1], vals[2]};
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t s = 0; s < kNumSites; ++s) {
      if (!seen[l][s]) throw InputError(path + ": missing entry for layer " + std::to_string(l));
    }
  }
  return ranges;
}

namespace {

struct TableFormat {
  bool csv = false;
  void write(std::ostream& out, const Table& t) const {
    if (csv) {
      write_csv(out, t);
    } else {
      write_aligned(out, t);
    }
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

TokenBatch eval_batch(const std::string& data, std::size_t vocab, std::size_t sequences, std::size_t seq_len,
                      std::uint64_t seed) {
  if (data.empty()) {
    Rng rng(seed);
    return random_token_batch(vocab, sequences, seq_len, rng);
  }
  const TokenStream stream = TokenStream::from_file(data);
  stream.check_vocab(vocab);
  return stream.sequential_batch(0, sequences, seq_len);
}

void require_float(const ToyModel& m, const std::string& path) {
  if (m.quantized_prefix() != 0) throw UsageError("'" + path + "' holds a quantized model; a float model is needed");
}

std::optional<CalibrationTable> load_calibration(const std::string& path, std::size_t layers) {
  if (path.empty()) return std::nullopt;
  return to_calibration_table(read_calibration_csv(path, layers));
}

void check_hw_aligned(const ToyModel& model) {
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const auto& qb = std::get<QuantizedBlock>(model.blocks[l]);
    for (const LinearWeight* w : {&qb.w_q, &qb.w_k, &qb.w_v, &qb.w_o, &qb.w_h4h, &qb.w_4hh}) {
      if (const auto* q = std::get_if<QuantizedMatrix>(w); q && !is_hw_aligned(q->group_layout)) {
        throw UsageError("group layout of layer " + std::to_string(l) +
                         " is not hardware aligned (rows per group must be a multiple of 16); choose another --groups");
      }
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-training quantization toolkit for toy transformers"};
  app.name("zq");
  app.require_subcommand(1);
  std::function<void()> action;

  // gen-model
  ToyConfig toy;
  std::string gm_out;
  bool non_causal = false;
  auto* gen_model = app.add_subcommand("gen-model", "Generate a seeded float toy model");
  gen_model->add_option("--dim", toy.dim, "Hidden size")->capture_default_str();
  gen_model->add_option("--heads", toy.heads, "Attention heads")->capture_default_str();
  gen_model->add_option("--layers", toy.layers, "Transformer blocks")->capture_default_str();
  gen_model->add_option("--vocab", toy.vocab, "Vocabulary size")->capture_default_str();
  gen_model->add_option("--seed", toy.seed, "Random seed")->capture_default_str();
  gen_model->add_option("--init-std", toy.init_std, "Block weight standard deviation")->capture_default_str();
  gen_model->add_option("--embed-std", toy.embed_std, "Embedding standard deviation")->capture_default_str();
  gen_model->add_flag("--hetero-knob", toy.hetero_knob, "Scale 25% of the w_o rows by 10");
  gen_model->add_flag("--non-causal", non_causal, "Bidirectional attention");
  gen_model->add_option("--out", gm_out, "Output checkpoint")->required();
  gen_model->callback([&] {
    action = [&] {
      toy.causal = !non_causal;
      save_checkpoint(gm_out, {make_toy_model(toy), std::nullopt});
      out << "wrote " << gm_out << '\n';
    };
  });

  // gen-data
  std::string gd_model, gd_out;
  std::size_t gd_vocab = 512, gd_sequences = 64, gd_seq_len = 32;
  std::uint64_t gd_seed = 0;
  auto* gen_data = app.add_subcommand("gen-data", "Write a token file, sampled from a model or uniform");
  gen_data->add_option("--model", gd_model, "Sample sequences from this float causal model");
  gen_data->add_option("--vocab", gd_vocab, "Vocabulary for uniform ids")->capture_default_str();
  gen_data->add_option("--sequences", gd_sequences, "Number of sequences")->capture_default_str();
  gen_data->add_option("--seq-len", gd_seq_len, "Ids per sequence")->capture_default_str();
  gen_data->add_option("--seed", gd_seed, "Random seed")->capture_default_str();
  gen_data->add_option("--out", gd_out, "Output token file")->required();
  gen_data->callback([&] {
    action = [&] {
      if (gd_sequences == 0 || gd_seq_len == 0) throw UsageError("--sequences and --seq-len must be >= 1");
      Rng rng(gd_seed);
      TokenBatch b;
      if (!gd_model.empty()) {
        const ToyModel m = load_checkpoint(gd_model).model;
        require_float(m, gd_model);
        b = sample_from_model(m, gd_sequences, gd_seq_len, rng);
      } else {
        b = random_token_batch(gd_vocab, gd_sequences, gd_seq_len, rng);
      }
      write_token_file(gd_out, b);
      out << "wrote " << gd_out << '\n';
    };
  });

  // calibrate
  std::string cal_model, cal_data, cal_out;
  std::size_t cal_iterations = 100, cal_batch = 8, cal_seq_len = 32;
  float cal_momentum = 0.95f;
  auto* calibrate = app.add_subcommand("calibrate", "Momentum range calibration of every GeMM input");
  calibrate->add_option("--model", cal_model, "Float model checkpoint")->required();
  calibrate->add_option("--data", cal_data, "Token file")->required();
  calibrate->add_option("--iterations", cal_iterations, "Calibration batches")->capture_default_str();
  calibrate->add_option("--momentum", cal_momentum, "Running range momentum")->capture_default_str();
  calibrate->add_option("--batch-size", cal_batch, "Sequences per batch")->capture_default_str();
  calibrate->add_option("--seq-len", cal_seq_len, "Ids per sequence")->capture_default_str();
  calibrate->add_option("--out", cal_out, "Output CSV (stdout if omitted)");
  calibrate->callback([&] {
    action = [&] {
      if (cal_iterations == 0) throw UsageError("--iterations must be >= 1");
      const ToyModel m = load_checkpoint(cal_model).model;
      require_float(m, cal_model);
      const TokenStream stream = TokenStream::from_file(cal_data);
      stream.check_vocab(m.vocab());
      std::vector<TokenBatch> batches;
      for (std::size_t i = 0; i < cal_iterations; ++i) batches.push_back(stream.sequential_batch(i, cal_batch, cal_seq_len));
      const SiteRanges ranges = calibrate_sites(m, batches, cal_momentum, kActivationBits);
      if (cal_out.empty()) {
        write_calibration_csv(out, ranges);
      } else {
        std::ofstream f(cal_out);
        if (!f) throw InputError("cannot write '" + cal_out + "'");
        write_calibration_csv(f, ranges);
        out << "wrote " << cal_out << '\n';
      }
    };
  });

  // quantize
  std::string q_model, q_scheme, q_calib, q_out;
  std::optional<std::size_t> q_groups;
  bool q_static = false, q_hw = false, q_attn_full = false;
  auto* quantize = app.add_subcommand("quantize", "Quantize a float model without distillation");
  quantize->add_option("--model", q_model, "Float model checkpoint")->required();
  quantize->add_option("--scheme", q_scheme, "W8A8, W8A16, W4/8A8, W4/8A16, ...")->required();
  quantize->add_option("--groups", q_groups, "Row groups per weight matrix (default keyed by hidden size)");
  quantize->add_option("--calib", q_calib, "Calibration CSV for static activation scales");
  quantize->add_flag("--static-act", q_static, "Use calibrated static activation scales");
  quantize->add_flag("--hw-aligned", q_hw, "Require 16-row aligned groups");
  quantize->add_flag("--attn-input-full", q_attn_full, "Keep the q/k/v input in full precision");
  quantize->add_option("--out", q_out, "Output checkpoint")->required();
  quantize->callback([&] {
    action = [&] {
      const ToyModel m = load_checkpoint(q_model).model;
      require_float(m, q_model);
      const PrecisionConfig p =
          make_precision(q_scheme, q_groups.value_or(default_group_count(m.dim())), q_static, q_attn_full);
      if (p.activation_static && q_calib.empty()) throw UsageError("--static-act requires --calib");
      const auto calib = load_calibration(q_calib, m.num_layers());
      const ToyModel qm = quantize_model(m, p, calib ? &*calib : nullptr);
      if (q_hw) check_hw_aligned(qm);
      save_checkpoint(q_out, {qm, p});
      out << "scheme " << p.label() << "\nfootprint_ratio " << format_number(footprint(qm, p).ratio()) << '\n';
    };
  });

  // distill
  std::string d_model, d_config, d_out, d_loss_csv;
  auto* distill = app.add_subcommand("distill", "Layer-by-layer distillation into a quantized model");
  distill->add_option("--model", d_model, "Float model checkpoint")->required();
  distill->add_option("--config", d_config, "Run configuration file")->required();
  distill->add_option("--out", d_out, "Output checkpoint (overrides the config)");
  distill->add_option("--loss-csv", d_loss_csv, "Loss CSV (overrides the config)");
  distill->callback([&] {
    action = [&] {
      RunConfig rc = load_run_config(d_config);
      if (!d_out.empty()) rc.out_path = d_out;
      if (!d_loss_csv.empty()) rc.loss_csv_path = d_loss_csv;
      if (rc.out_path.empty()) throw UsageError("no output path: pass --out or set out in the config");
      ToyModel m = load_checkpoint(d_model).model;
      require_float(m, d_model);
      const PrecisionConfig p = rc.precision(m.dim());
      if (p.activation_static && rc.calib_path.empty()) throw UsageError("static_act requires calib in the config");
      const auto calib = load_calibration(rc.calib_path, m.num_layers());
      std::vector<LkdProgress> progress;
      lkd_quantize_model(m, rc.lkd, p, calib ? &*calib : nullptr,
                         [&](const LkdProgress& pr) { progress.push_back(pr); });
      save_checkpoint(rc.out_path, {m, p});
      if (!rc.loss_csv_path.empty()) {
        std::ofstream f(rc.loss_csv_path);
        if (!f) throw InputError("cannot write '" + rc.loss_csv_path + "'");
        f << "iteration,layer,loss\n";
        for (const auto& pr : progress) f << pr.iteration << ',' << pr.layer << ',' << format_number(pr.loss) << '\n';
      }
      out << "scheme " << p.label() << "\nfootprint_ratio " << format_number(footprint(m, p).ratio()) << '\n';
    };
  });

  // eval
  std::string e_model, e_reference, e_data, e_scheme, e_calib;
  std::optional<std::size_t> e_groups;
  std::size_t e_sequences = 8, e_seq_len = 32;
  std::uint64_t e_seed = 0;
  TableFormat e_fmt;
  auto* eval = app.add_subcommand("eval", "Compare a model with its float reference");
  eval->add_option("--model", e_model, "Model checkpoint, float or quantized")->required();
  eval->add_option("--reference", e_reference, "Float reference (defaults to --model when it is float)");
  eval->add_option("--data", e_data, "Token file (uniform random ids if omitted)");
  eval->add_option("--scheme", e_scheme, "Scheme applied to a float model");
  eval->add_option("--groups", e_groups, "Row groups when --scheme is given");
  eval->add_option("--calib", e_calib, "Calibration CSV for static schemes");
  eval->add_option("--sequences", e_sequences, "Evaluation sequences")->capture_default_str();
  eval->add_option("--seq-len", e_seq_len, "Ids per sequence")->capture_default_str();
  eval->add_option("--seed", e_seed, "Seed for random evaluation ids")->capture_default_str();
  eval->add_flag("--csv", e_fmt.csv, "CSV output");
  eval->callback([&] {
    action = [&] {
      const Checkpoint ck = load_checkpoint(e_model);
      ToyModel candidate = ck.model;
      ToyModel reference;
      if (!e_reference.empty()) {
        reference = load_checkpoint(e_reference).model;
        require_float(reference, e_reference);
      } else if (candidate.quantized_prefix() == 0) {
        reference = candidate;
      } else {
        throw UsageError("a quantized --model needs --reference");
      }
      PrecisionConfig p = ck.precision.value_or(PrecisionConfig::full());
      if (!e_scheme.empty()) {
        if (candidate.quantized_prefix() != 0) throw UsageError("--scheme applies to float models only");
        p = make_precision(e_scheme, e_groups.value_or(default_group_count(candidate.dim())), !e_calib.empty(), false);
      }
      const auto calib = load_calibration(e_calib, candidate.num_layers());
      if (candidate.quantized_prefix() == 0) candidate = quantize_model(candidate, p, calib ? &*calib : nullptr);
      const TokenBatch batch = eval_batch(e_data, reference.vocab(), e_sequences, e_seq_len, e_seed);
      const SchemeReport r = evaluate_model(reference, candidate, p, batch, calib ? &*calib : nullptr);
      e_fmt.write(out, scheme_table(std::span(&r, 1)));
    };
  });

  // report
  std::string r_model, r_data, r_schemes = "W8A8,W8A16,W4/8A16,W4/8A8", r_calib;
  std::optional<std::size_t> r_groups;
  std::size_t r_sequences = 1, r_seq_len = 32;
  std::uint64_t r_seed = 0;
  TableFormat r_fmt;
  auto* report = app.add_subcommand("report", "Activation and weight ranges plus a scheme comparison");
  report->add_option("--model", r_model, "Float model checkpoint")->required();
  report->add_option("--data", r_data, "Token file (uniform random ids if omitted)");
  report->add_option("--schemes", r_schemes, "Comma-separated schemes to compare")->capture_default_str();
  report->add_option("--groups", r_groups, "Row groups per weight matrix");
  report->add_option("--calib", r_calib, "Calibration CSV; switches schemes to static activations");
  report->add_option("--sequences", r_sequences, "Sequences")->capture_default_str();
  report->add_option("--seq-len", r_seq_len, "Ids per sequence")->capture_default_str();
  report->add_option("--seed", r_seed, "Seed for random ids")->capture_default_str();
  report->add_flag("--csv", r_fmt.csv, "CSV output");
  report->callback([&] {
    action = [&] {
      const ToyModel m = load_checkpoint(r_model).model;
      require_float(m, r_model);
      const TokenBatch batch = eval_batch(r_data, m.vocab(), r_sequences, r_seq_len, r_seed);
      const RangeReport rr = range_report(m, batch);
      out << "# token ranges\n";
      r_fmt.write(out, token_range_table(rr));
      out << "# w_o row ranges\n";
      r_fmt.write(out, weight_range_table(rr));
      out << "# w_o row spread\n";
      Table spread{{"layer", "max_over_min_row_magnitude"}, {}};
      for (std::size_t l = 0; l < m.num_layers(); ++l) {
        spread.rows.push_back({std::to_string(l), format_number(rr.w_o_row_spread(l))});
      }
      r_fmt.write(out, spread);
      const auto calib = load_calibration(r_calib, m.num_layers());
      std::vector<PrecisionConfig> schemes;
      for (const std::string& s : split_list(r_schemes)) {
        PrecisionConfig p = make_precision(s, r_groups.value_or(default_group_count(m.dim())), false, false);
        if (calib && p.quantizes_activations()) p.activation_static = true;
        schemes.push_back(p);
      }
      out << "# schemes\n";
      const auto reports = scheme_compare(m, schemes, batch, calib ? &*calib : nullptr);
      r_fmt.write(out, scheme_table(reports));
    };
  });

  // bench
  std::string b_shapes = "16x64x64,32x256x256,64x256x1024";
  std::size_t b_runs = 20;
  TableFormat b_fmt;
  auto* bench_cmd = app.add_subcommand("bench", "INT8 vs float GeMM timings (informational)");
  bench_cmd->add_option("--shapes", b_shapes, "Comma-separated MxKxN shapes")->capture_default_str();
  bench_cmd->add_option("--runs", b_runs, "Timed runs per shape (>= 20)")->capture_default_str();
  bench_cmd->add_flag("--csv", b_fmt.csv, "CSV output");
  bench_cmd->callback([&] {
    action = [&] {
      std::vector<GemmShape> shapes;
      for (const std::string& s : split_list(b_shapes)) {
        GemmShape g;
        char x1 = 0, x2 = 0;
        std::istringstream ss(s);
        if (!(ss >> g.m >> x1 >> g.k >> x2 >> g.n) || x1 != 'x' || x2 != 'x' || !ss.eof()) {
          throw UsageError("bad shape '" + s + "', expected MxKxN");
        }
        shapes.push_back(g);
      }
      out << "# informational: CPU timings, not representative of accelerator speedups\n";
      b_fmt.write(out, bench_table(bench(shapes, b_runs)));
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    action();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace zq
