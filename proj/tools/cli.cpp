#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "mmfusion/error.hpp"
#include "mmfusion/feature_io.hpp"
#include "mmfusion/gradcheck.hpp"
#include "mmfusion/synth.hpp"
#include "mmfusion/training.hpp"

namespace mmfusion::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string features;
  std::string checkpoint;
  std::string out;
  std::string arch = "standard";
  std::string grad_arch = "compact";
  std::size_t epochs = TrainConfig{}.epochs;
  std::size_t batch_size = TrainConfig{}.batch_size;
  double lr = TrainConfig{}.learning_rate;
  double dropout = TrainConfig{}.dropout;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double separation = 4.0;
  std::uint64_t sample_id = 0;
  double threshold = 0.5;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::configuration: return 3;
    case ErrorKind::dimension: return 4;
    case ErrorKind::format: return 5;
    case ErrorKind::corruption: return 6;
    case ErrorKind::io: return 7;
    case ErrorKind::lookup: return 8;
  }
  return 1;
}

ModelDims dims_for(const std::string& arch) {
  return arch == "compact" ? ModelDims::compact() : ModelDims::standard();
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.learning_rate = o.lr;
  c.dropout = o.dropout;
  c.seed = o.seed;
  validate(c);
  return c;
}

std::string format_float(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return f;
}

void write_csv(const fs::path& path, const Tensor<float>& m, std::size_t rows, std::size_t cols) {
  std::ofstream f = open_text(path);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) f << ',';
      f << format_float(m[r * cols + c]);
    }
    f << '\n';
  }
  if (!f) fail(ErrorKind::io, "write failed for " + path.string());
}

void same_file_guard(const fs::path& input, const fs::path& output) {
  std::error_code ec;
  if (fs::exists(output) && fs::equivalent(input, output, ec)) {
    fail(ErrorKind::usage, "output " + output.string() + " would overwrite input " + input.string());
  }
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig config = train_config(o);
  const ModelDims dims = dims_for(o.arch);
  const fs::path out_dir(o.out);
  const fs::path checkpoint = o.checkpoint.empty() ? out_dir / "checkpoint.mmck" : fs::path(o.checkpoint);
  same_file_guard(o.features, checkpoint);

  const std::vector<SampleFeatures> data = read_features(o.features, dims);
  fs::create_directories(out_dir);
  if (!checkpoint.parent_path().empty()) fs::create_directories(checkpoint.parent_path());

  const fs::path history_path = out_dir / "history.csv";
  same_file_guard(o.features, history_path);
  std::ofstream history = open_text(history_path);
  TrainResult result = train(data, config, dims, [&](const EpochStats& s) {
    const std::string line = format_history_line(s);
    history << line << '\n';
    out << line << '\n' << std::flush;
  });
  if (!history) fail(ErrorKind::io, "write failed for " + history_path.string());
  save_checkpoint(checkpoint, result.params);
  out << format_metrics(evaluate(result.params, data));
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const ModelDims dims = dims_for(o.arch);
  const ModelParams<float> params = load_checkpoint(o.checkpoint, dims);
  const std::vector<SampleFeatures> data = read_features(o.features, dims);
  out << format_metrics(evaluate(params, data, o.threshold));
  return 0;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthConfig config;
  config.seed = o.seed;
  config.n = o.n == 0 ? SynthConfig{}.n : o.n;
  config.separation = o.separation;
  const ModelDims dims = dims_for(o.arch);
  const auto records = synth_generate(config, dims);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  const std::size_t bytes = write_features(o.out, records, dims);
  out << "wrote " << records.size() << " records (" << bytes << " bytes) to " << o.out << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const ModelDims dims = dims_for(o.grad_arch);
  const std::size_t seeds = o.n == 0 ? 20 : o.n;
  constexpr double kFloatTol = 1e-3;
  constexpr double kDoubleTol = 1e-5;
  bool ok = true;
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = o.seed + i;
    const auto samples = synth_generate(seed, 2, o.separation, dims);
    const auto params = gradcheck_point(seed, dims);
    ModelGradCheckOptions options;
    options.seed = seed;
    options.dropout = o.dropout;
    const auto report = [&](const char* precision, const std::vector<ParameterGradCheck>& checks, double tol) {
      const auto worst = std::max_element(checks.begin(), checks.end(), [](const auto& a, const auto& b) {
        return a.result.max_rel_error < b.result.max_rel_error;
      });
      const double err = worst->result.max_rel_error;
      ok = ok && err < tol;
      out << "seed=" << seed << " precision=" << precision << " max_rel_error=" << format_double(err)
          << " worst=" << worst->name << '\n';
    };
    report("double", check_model_gradients<double>(params, samples, options), kDoubleTol);
    report("float", check_model_gradients<float>(params.cast<float>(), samples, options), kFloatTol);
  }
  out << (ok ? "gradcheck: PASS" : "gradcheck: FAIL") << '\n';
  return ok ? 0 : 1;
}

int cmd_export(const Options& o, std::ostream& out) {
  const ModelDims dims = dims_for(o.arch);
  const ModelParams<float> params = load_checkpoint(o.checkpoint, dims);
  FeatureReader reader(o.features, dims);
  std::optional<SampleFeatures> sample;
  while (auto s = reader.next()) {
    if (s->id == o.sample_id) {
      sample = std::move(s);
      break;
    }
  }
  if (!sample) fail(ErrorKind::lookup, "sample id " + std::to_string(o.sample_id) + " not found in " + o.features);

  RngStream unused(0);
  const ForwardTrace<float> trace = forward<float>(*sample, params, Mode::eval, unused);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_csv(dir / "t2i.csv", trace.attn_text_image, 1, dims.n_regions);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dims.n_regions))));
  if (side * side == dims.n_regions) write_csv(dir / "t2i_grid.csv", trace.attn_text_image, side, side);
  write_csv(dir / "i2t.csv", trace.attn_image_text, 1, dims.text_positions());
  write_csv(dir / "self.csv", trace.attn_image_image, dims.n_regions, dims.n_regions);
  out << "sample " << o.sample_id << " probability=" << format_float(trace.probability) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal fake-news fusion network: training, evaluation and attention export", "mmfusion"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Options o;
  auto add_arch = [&](CLI::App* cmd, std::string& target) {
    cmd->add_option("--arch", target, "Layer widths: standard or compact (toy widths for quick runs)")
        ->check(CLI::IsMember({"standard", "compact"}))
        ->capture_default_str();
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", o.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--dropout", o.dropout, "Dropout rate after hidden FC layers")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
  };

  auto* train_cmd = app.add_subcommand("train", "Train on a feature file; writes a checkpoint and history.csv");
  train_cmd->add_option("--features", o.features, "MMFF feature file")->required();
  train_cmd->add_option("--out", o.out, "Output directory")->required();
  train_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <out>/checkpoint.mmck)");
  add_train_flags(train_cmd);
  add_arch(train_cmd, o.arch);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print accuracy and per-class P/R/F1");
  eval_cmd->add_option("--features", o.features, "MMFF feature file")->required();
  eval_cmd->add_option("--checkpoint", o.checkpoint, "MMCK checkpoint")->required();
  eval_cmd->add_option("--threshold", o.threshold, "Predict fake when p >= threshold")->capture_default_str();
  add_arch(eval_cmd, o.arch);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  grad_cmd->add_option("--seed", o.seed, "First seed")->capture_default_str();
  grad_cmd->add_option("--n", o.n, "Number of seeds (default 20)");
  grad_cmd->add_option("--dropout", o.dropout, "Dropout rate replayed during the check")->capture_default_str();
  grad_cmd->add_option("--separation", o.separation, "Class separation of the probe samples")
      ->capture_default_str();
  add_arch(grad_cmd, o.grad_arch);

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic MMFF feature file");
  synth_cmd->add_option("--out", o.out, "Output feature file")->required();
  synth_cmd->add_option("--n", o.n, "Number of posts (default 128)");
  synth_cmd->add_option("--separation", o.separation, "Distance between class means")->capture_default_str();
  synth_cmd->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
  add_arch(synth_cmd, o.arch);

  auto* export_cmd = app.add_subcommand("export-attention", "Write the three attention maps of one post as CSV");
  export_cmd->add_option("--features", o.features, "MMFF feature file")->required();
  export_cmd->add_option("--checkpoint", o.checkpoint, "MMCK checkpoint")->required();
  export_cmd->add_option("--sample-id", o.sample_id, "Post id")->required();
  export_cmd->add_option("--out", o.out, "Output directory")->required();
  add_arch(export_cmd, o.arch);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << category_name(ErrorKind::usage) << ": " << e.what() << '\n';
    return exit_code(ErrorKind::usage);
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (eval_cmd->parsed()) return cmd_eval(o, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(o, out);
    if (synth_cmd->parsed()) return cmd_synth(o, out);
    if (export_cmd->parsed()) return cmd_export(o, out);
  } catch (const Error& e) {
    err << e.category() << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << category_name(ErrorKind::io) << ": " << e.what() << '\n';
    return exit_code(ErrorKind::io);
  } catch (const std::bad_alloc&) {
    err << "resource_error: out of memory\n";
    return 1;
  }
  return 0;
}

}  // namespace mmfusion::cli
