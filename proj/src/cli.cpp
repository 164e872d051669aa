#include "rceed/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "rceed/checkpoint.hpp"
#include "rceed/errors.hpp"
#include "rceed/synth.hpp"

namespace rceed::cli {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

struct Setting {
  std::string key;
  bool model;
  bool boolean;
  std::string help;
  Setter set;
};

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = [] {
    std::vector<Setting> t;
    const auto flag = [&](std::string key, bool ModelConfig::*field, std::string help) {
      t.push_back({key, true, true, help, [field](RunConfig& c, const std::string& k, const std::string& v) {
                     c.model.*field = parse_bool(k, v);
                   }});
    };
    t.push_back({"preset", true, false, "model preset: paper or desk",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   if (v != "paper" && v != "desk")
                     throw ConfigError("preset must be paper or desk, got '" + v + "'");
                   c.model = ModelConfig::from_preset(v);
                 }});
    flag("ld", &ModelConfig::ld, "layernorm-dropout LSTM cells");
    flag("vf", &ModelConfig::vf, "visual feature in the fused map");
    flag("cf", &ModelConfig::cf, "context feature in the fused map");
    flag("gi", &ModelConfig::gi, "guided decoder initialization");
    flag("gp", &ModelConfig::gp, "glimpse vector used for prediction");
    flag("rectifier", &ModelConfig::rectifier, "TPS rectification in front of the encoder");
    t.push_back({"heads", true, false, "attention heads: 1, 4 or 8",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   const std::size_t h = parse_size(k, v);
                   if (h != 1 && h != 4 && h != 8)
                     throw ConfigError("heads must be 1, 4 or 8, got " + v);
                   c.model.heads = h;
                 }});
    t.push_back({"encoder-dropout", true, false, "encoder LSTM dropout rate",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.encoder_dropout = parse_real(k, v);
                 }});
    t.push_back({"decoder-dropout", true, false, "decoder LSTM dropout rate",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.decoder_dropout = parse_real(k, v);
                 }});
    t.push_back({"scale-exponent", true, false, "attention scores are divided by (d_v/heads)^e",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.model.scale_exponent = parse_real(k, v);
                 }});
    const auto size = [&](std::string key, std::function<std::size_t&(RunConfig&)> field,
                          std::string help) {
      t.push_back({key, false, false, help,
                   [field](RunConfig& c, const std::string& k, const std::string& v) {
                     field(c) = parse_size(k, v);
                   }});
    };
    const auto real = [&](std::string key, std::function<double&(RunConfig&)> field,
                          std::string help) {
      t.push_back({key, false, false, help,
                   [field](RunConfig& c, const std::string& k, const std::string& v) {
                     field(c) = parse_real(k, v);
                   }});
    };
    size("steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; }, "optimization steps");
    size("batch", [](RunConfig& c) -> std::size_t& { return c.train.batch; }, "samples per step");
    real("lr", [](RunConfig& c) -> double& { return c.train.learning_rate; },
         "base learning rate (divided by 10 for the last 10% of steps)");
    real("l2", [](RunConfig& c) -> double& { return c.train.l2; }, "L2 coefficient");
    real("clip-norm", [](RunConfig& c) -> double& { return c.train.clip_norm; },
         "global gradient-norm limit");
    size("checkpoint-every", [](RunConfig& c) -> std::size_t& { return c.checkpoint_every; },
         "steps between checkpoints (0: final only)");
    size("eval-every", [](RunConfig& c) -> std::size_t& { return c.eval_every; },
         "steps between training-set evaluations (0: never)");
    real("stop-at-accuracy", [](RunConfig& c) -> double& { return c.stop_at_accuracy; },
         "stop once a periodic evaluation reaches this accuracy");
    t.push_back({"seed", false, false, "seed for initialization, batching and dropout",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.train.seed = parse_size(k, v);
                 }});
    t.push_back({"clip", false, true, "gradient-norm clipping",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.train.clip = parse_bool(k, v);
                 }});
    t.push_back({"prefetch", false, true, "assemble batches on a worker thread",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.train.prefetch = parse_bool(k, v);
                 }});
    return t;
  }();
  return table;
}

const Setting& find_setting(const std::string& key) {
  for (const auto& s : settings())
    if (s.key == key) return s;
  throw ConfigError("unknown setting '" + key + "'");
}

// Binds every setting to CLI11 options and remembers which were given.
class SettingOptions {
 public:
  SettingOptions(CLI::App& app, bool model_only) {
    for (const auto& s : settings()) {
      if (model_only && !s.model) continue;
      if (s.boolean) {
        bools_[s.key] = false;
        options_[s.key] =
            app.add_flag("--" + s.key + ",!--no-" + s.key, bools_[s.key], "enable/disable " + s.help);
      } else {
        strings_[s.key];
        options_[s.key] = app.add_option("--" + s.key, strings_[s.key], s.help);
      }
    }
  }

  std::vector<std::pair<std::string, std::string>> given() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : settings()) {
      auto it = options_.find(s.key);
      if (it == options_.end() || it->second->count() == 0) continue;
      out.emplace_back(s.key, s.boolean ? (bools_.at(s.key) ? "1" : "0") : strings_.at(s.key));
    }
    return out;
  }

 private:
  std::map<std::string, CLI::Option*> options_;
  std::map<std::string, bool> bools_;
  std::map<std::string, std::string> strings_;
};

// Applies "preset" before everything else so it never clobbers later keys.
void apply_all(RunConfig& config, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv)
    if (k == "preset") apply_setting(config, k, v);
  for (const auto& [k, v] : kv)
    if (k != "preset") apply_setting(config, k, v);
}

std::string checkpoint_name(std::size_t step) {
  std::ostringstream s;
  s << "step-" << std::setw(6) << std::setfill('0') << step << ".rced";
  return s.str();
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create directory " + dir.string() +
                  (ec ? ": " + ec.message() : std::string()));
}

LoadedModel load_compatible(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  LoadedModel loaded = load_checkpoint(path);
  if (overrides.empty()) return loaded;
  RunConfig requested;
  requested.model = loaded.config;
  apply_all(requested, overrides);
  if (!(requested.model == loaded.config)) {
    std::string keys;
    for (const auto& [k, v] : overrides) keys += (keys.empty() ? "--" : ", --") + k;
    throw CheckpointError(CheckpointError::Kind::kMismatch,
                          "explicit model flags (" + keys + ") disagree with the configuration "
                          "stored in " + path.string());
  }
  return loaded;
}

Tensor<float> load_image(const std::filesystem::path& path) {
  return preprocess(read_pgm(path));
}

std::string printable(const DecodeResult& r, std::size_t step) {
  const std::size_t token = r.trace.steps[step].token;
  return token == CharSet::kEos ? "<eos>" : std::string(1, CharSet::to_char(token));
}

int cmd_gen_data(std::size_t n, const std::filesystem::path& out, std::uint64_t seed,
                 const DatasetSpec& spec, std::ostream& os) {
  spec.validate();
  const auto samples = generate_dataset(n, spec, seed);
  write_dataset(out, samples);
  os << "samples\t" << samples.size() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc, const std::filesystem::path& data_dir,
              const std::filesystem::path& out_dir, std::ostream& os, std::ostream& es) {
  rc.model.validate();
  if (rc.train.steps == 0) throw ConfigError("--steps must be positive");
  if (rc.train.batch == 0) throw ConfigError("--batch must be positive");
  if (!(rc.train.learning_rate > 0)) throw ConfigError("--lr must be positive");
  if (rc.stop_at_accuracy > 0 && rc.eval_every == 0)
    throw ConfigError("--stop-at-accuracy needs --eval-every");

  const auto data = read_dataset(data_dir);
  ensure_directory(out_dir);
  Model<float> model(rc.model, rc.train.seed);
  Trainer<float> trainer(model, rc.train);

  struct EarlyStop {};
  write_log_header(os);
  std::size_t last = 0;
  try {
    trainer.run(data, [&](const StepReport& r) {
      write_log_line(os, r);
      last = r.step;
      if (rc.checkpoint_every && r.step % rc.checkpoint_every == 0 && r.step != rc.train.steps)
        save_checkpoint(out_dir / checkpoint_name(r.step), model, r.step);
      if (rc.eval_every && r.step % rc.eval_every == 0) {
        const double acc = evaluate(model, data);
        es << "step " << r.step << " training accuracy " << acc << "\n";
        if (rc.stop_at_accuracy > 0 && acc >= rc.stop_at_accuracy) throw EarlyStop{};
      }
    });
  } catch (const EarlyStop&) {
  }
  save_checkpoint(out_dir / "final.rced", model, last);
  es << "wrote " << (out_dir / "final.rced").string() << " after " << last << " steps\n";
  return kExitOk;
}

int cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data_dir,
             const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& os) {
  const auto data = read_dataset(data_dir);
  const LoadedModel loaded = load_compatible(ckpt, overrides);
  os << "accuracy\t" << evaluate(*loaded.model, data) << "\n";
  return kExitOk;
}

int cmd_infer(const std::filesystem::path& ckpt, const std::filesystem::path& image,
              const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& os) {
  const Tensor<float> input = load_image(image);
  const LoadedModel loaded = load_compatible(ckpt, overrides);
  os << loaded.model->recognize(input).text << "\n";
  return kExitOk;
}

int cmd_dump_attention(const std::filesystem::path& ckpt, const std::filesystem::path& image,
                       const std::filesystem::path& out_dir,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       std::ostream& os) {
  const Tensor<float> input = load_image(image);
  const LoadedModel loaded = load_compatible(ckpt, overrides);
  ensure_directory(out_dir);
  const DecodeResult result = loaded.model->recognize(input);
  const std::size_t rows = result.trace.rows, cols = result.trace.cols;
  const std::size_t heads = loaded.config.heads;

  std::ofstream manifest(out_dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (out_dir / "manifest.tsv").string());
  manifest << "step\tchar";
  for (std::size_t j = 0; j < heads; ++j) manifest << "\thead" << j;
  manifest << "\n";
  for (std::size_t t = 0; t < result.trace.steps.size(); ++t) {
    const auto& step = result.trace.steps[t];
    manifest << t + 1 << "\t" << printable(result, t);
    for (std::size_t j = 0; j < heads; ++j) {
      const auto& w = step.weights[j];
      const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
      const auto best = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
      GrayImage map(rows, cols);
      const float range = *hi - *lo;
      for (std::size_t i = 0; i < w.size(); ++i)
        map.pixels[i] = range > 0 ? (w[i] - *lo) / range : 0.0f;
      write_pgm(out_dir / ("step" + std::to_string(t + 1) + "_head" + std::to_string(j) + ".pgm"),
                map);
      manifest << "\t" << best;
    }
    manifest << "\n";
  }
  if (!manifest) throw IoError("failed writing " + (out_dir / "manifest.tsv").string());
  os << result.text << "\n";
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : settings()) k.push_back(s.key);
    return k;
  }();
  return keys;
}

bool is_model_setting(const std::string& key) { return find_setting(key).model; }

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  find_setting(key).set(config, key, value);
}

std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t number = 1; std::getline(f, line); ++number) {
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    find_setting(key);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene text recognition: synthetic data, training and inference"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  std::size_t gen_n = 0;
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  DatasetSpec gen_spec;
  gen->add_option("--n", gen_n, "number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--curvature", gen_spec.max_curvature, "maximum curvature")
      ->check(CLI::Range(0.0, 0.3));
  gen->add_option("--tilt", gen_spec.max_tilt, "maximum perspective tilt")
      ->check(CLI::Range(0.0, 0.2));
  gen->add_option("--noise", gen_spec.max_noise, "maximum noise sigma")
      ->check(CLI::Range(0.0, 0.1));
  gen->add_option("--min-length", gen_spec.min_length, "shortest label")
      ->check(CLI::Range(1, 26));
  gen->add_option("--max-length", gen_spec.max_length, "longest label")
      ->check(CLI::Range(1, 26));

  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config, "key=value config file")
      ->check(CLI::ExistingFile);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  SettingOptions train_settings(*train, false);

  auto* eval = app.add_subcommand("eval", "sequence accuracy of a checkpoint on a dataset");
  std::string eval_ckpt, eval_data;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  SettingOptions eval_settings(*eval, true);

  auto* infer = app.add_subcommand("infer", "decode one PGM image");
  std::string infer_ckpt, infer_image;
  infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--image", infer_image, "PGM image")->required();
  SettingOptions infer_settings(*infer, true);

  auto* dump = app.add_subcommand("dump-attention", "write per-step, per-head attention maps");
  std::string dump_ckpt, dump_image, dump_out;
  dump->add_option("--ckpt", dump_ckpt, "checkpoint file")->required();
  dump->add_option("--image", dump_image, "PGM image")->required();
  dump->add_option("--out", dump_out, "output directory")->required();
  SettingOptions dump_settings(*dump, true);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    try {
      if (gen->parsed()) {
        if (gen_spec.min_length > gen_spec.max_length)
          throw ConfigError("--min-length exceeds --max-length");
        return cmd_gen_data(gen_n, gen_out, gen_seed, gen_spec, out);
      }
      if (train->parsed()) {
        RunConfig rc;
        if (!train_config.empty()) apply_all(rc, read_config_file(train_config));
        apply_all(rc, train_settings.given());
        return cmd_train(rc, train_data, train_out, out, err);
      }
      if (eval->parsed()) {
        RunConfig probe;
        apply_all(probe, eval_settings.given());
        return cmd_eval(eval_ckpt, eval_data, eval_settings.given(), out);
      }
      if (infer->parsed()) {
        RunConfig probe;
        apply_all(probe, infer_settings.given());
        return cmd_infer(infer_ckpt, infer_image, infer_settings.given(), out);
      }
      if (dump->parsed()) {
        RunConfig probe;
        apply_all(probe, dump_settings.given());
        return cmd_dump_attention(dump_ckpt, dump_image, dump_out, dump_settings.given(), out);
      }
    } catch (const std::invalid_argument& e) {
      // ConfigError / InputError / DimensionError raised while validating arguments.
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    }
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rceed::cli
