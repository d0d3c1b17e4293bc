// Command-line entry point: data generation, teacher pretraining,
// representation-aligned student training, prediction, evaluation, and
// benchmark report rendering.
//
// Exit codes: 0 success; 2 configuration or usage error; 3 I/O or file
// format error; 4 numerical/degenerate/shape/range failure at runtime.
// Every failure prints a one-line diagnostic to stderr.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "denseprior.hpp"

using namespace dp;

namespace {

// Every key any command accepts. One config file can drive the whole
// pipeline; each command reads its own sections and ignores the rest,
// but a key outside this set is always rejected (typo protection).
const std::set<std::string>& allowed_keys() {
  static const std::set<std::string> keys = {
      "seed", "out",
      // gen-data
      "data.n", "data.size", "data.supersample", "data.pseudo_fraction",
      // network architecture (pretrain; consistency-checked by train)
      "net.size", "net.base_channels", "net.depth_levels", "net.taps",
      "net.timestep_embed_dim", "net.depth_scale",
      // pretrain / train
      "train.task", "train.steps", "train.batch_size", "train.learning_rate",
      "train.warmup_steps", "train.lambda", "train.schedule_T",
      "train.eval_every", "train.identity_heads", "train.data", "train.mix",
      "train.teacher",
      // predict
      "predict.input", "predict.checkpoint", "predict.task",
      // eval
      "eval.data", "eval.checkpoint", "eval.task", "eval.align",
      "eval.oracle", "eval.binary_threshold", "eval.matting_divisor",
      // report
      "report.list"};
  return keys;
}

struct CliArgs {
  std::string config_file;
  std::vector<std::string> sets;
  // Dedicated flags write their target config key here; empty = not given.
  std::map<std::string, std::string> flags;
  bool identity_heads = false;
};

// The joint-loss weight may be overridden by its bare name.
void normalize_aliases(KeyValueConfig& c) {
  if (c.has("lambda")) {
    c.set("train.lambda", c.get_string("lambda"));
    c.erase("lambda");
  }
}

KeyValueConfig resolve_config(const CliArgs& a) {
  KeyValueConfig c;
  if (!a.config_file.empty()) c.load_file(a.config_file);
  for (const std::string& kv : a.sets) c.apply_override(kv);
  for (const auto& [key, value] : a.flags)
    if (!value.empty()) c.set(key, value);
  if (a.identity_heads) c.set("train.identity_heads", "true");
  normalize_aliases(c);
  c.require_allowed(allowed_keys());
  return c;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw io_error("write failed: " + path);
}

std::string slurp_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Creates the output directory and echoes the effective (merged) config.
// The output path itself is excluded: it names where the artifacts live,
// not what they are, and keeping it out makes same-config runs into
// different directories byte-identical.
void echo_config(KeyValueConfig c, const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw io_error("cannot create output directory: " + out);
  c.erase("out");
  write_text_file(out + "/effective-config.txt", c.render());
}

NetworkConfig network_from(const KeyValueConfig& c, int out_channels) {
  NetworkConfig n;
  n.input_height = n.input_width = int(c.get_int("net.size", 64));
  n.base_channels = int(c.get_int("net.base_channels", 4));
  n.depth_levels = int(c.get_int("net.depth_levels", 3));
  if (c.has("net.taps")) {
    n.tap_indices = c.get_int_list("net.taps", {});
  } else {
    n.tap_indices.clear();
    for (int i = 0; i < n.depth_levels; ++i) n.tap_indices.push_back(i);
  }
  n.timestep_embed_dim = int(c.get_int("net.timestep_embed_dim", 32));
  n.depth_scale = c.get_double("net.depth_scale", 4.0);
  n.output_channels = out_channels;
  n.validate();
  return n;
}

TrainConfig train_from(const KeyValueConfig& c, const std::string& stage) {
  TrainConfig t;
  t.stage = stage;
  t.task = c.get_string("train.task", "depth");
  t.steps = int(c.get_int("train.steps", 0));
  t.batch_size = int(c.get_int("train.batch_size", 32));
  t.learning_rate = c.get_double("train.learning_rate", 0.0);
  t.warmup_steps = int(c.get_int("train.warmup_steps", 0));
  t.lambda = c.get_double("train.lambda", 1.0);
  t.seed = c.get_u64("seed", 0);
  t.schedule_T = int(c.get_int("train.schedule_T", 100));
  t.eval_every = int(c.get_int("train.eval_every", 0));
  t.identity_heads = c.get_bool("train.identity_heads", false);
  t.validate();
  return t;
}

std::vector<SourceSpec> sources_from(const KeyValueConfig& c) {
  if (c.has("train.mix"))
    return parse_mix_manifest(c.require_string("train.mix"));
  const std::string dir = c.get_string("train.data");
  if (dir.empty())
    throw config_error(
        "set train.data (dataset directory) or train.mix (mix manifest)");
  return {load_source("main", 1.0, SourceKind::synthetic, dir)};
}

std::vector<DenseSample> load_dataset(const std::string& dir) {
  const std::vector<std::string> files = read_dataset_manifest(dir);
  std::vector<DenseSample> samples;
  samples.reserve(files.size());
  for (const std::string& f : files)
    samples.push_back(read_sample(dir + "/" + f));
  return samples;
}

// Reads an RGB image from a PNG file or a raster container (plain RGB or
// full sample bundle) into an (H, W, 3) tensor in [0, 1].
TensorF load_rgb_any(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw io_error("cannot open input image: " + path);
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::string(magic, 4) == "DPR1") {
    RasterMeta meta;
    const TensorF t = read_raster(path, &meta);
    if (meta.semantic == RasterSemantic::rgb) return t;
    if (meta.semantic == RasterSemantic::bundle) {
      TensorF rgb({t.shape[0], t.shape[1], 3});
      for (int y = 0; y < t.shape[0]; ++y)
        for (int x = 0; x < t.shape[1]; ++x)
          for (int k = 0; k < 3; ++k) rgb.at(y, x, k) = t.at(y, x, k);
      return rgb;
    }
    throw format_error("raster does not carry an RGB image: " + path, 16);
  }
  return read_png_rgb(path);
}

// Training revisits each sample many times; keep decoded samples in memory
// instead of re-reading rasters from disk on every draw. The cap bounds the
// cache to a few hundred MB of desk-scale samples; past it, extra samples
// fall back to disk reads.
SampleLoader make_caching_loader(size_t max_entries = 8192) {
  auto cache = std::make_shared<
      std::map<std::pair<std::string, int>, DenseSample>>();
  return [cache, max_entries](const SourceSpec& src, int index) {
    const auto key = std::make_pair(src.directory + "\x1f" + src.name, index);
    const auto it = cache->find(key);
    if (it != cache->end()) return it->second;
    DenseSample s = load_sample_from_disk(src, index);
    if (cache->size() < max_entries) cache->emplace(key, s);
    return s;
  };
}

// --- commands ---------------------------------------------------------------

int cmd_gen_data(const KeyValueConfig& c, const std::string& out) {
  DatasetGenConfig g;
  g.n = int(c.get_int("data.n", 0));
  g.size = int(c.get_int("data.size", 64));
  g.supersample = int(c.get_int("data.supersample", 4));
  g.pseudo_fraction = c.get_double("data.pseudo_fraction", 0.0);
  const std::vector<std::string> names =
      generate_dataset(out, g, c.get_u64("seed", 0));
  std::cout << "wrote " << names.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_pretrain(const KeyValueConfig& c, const std::string& out) {
  const NetworkConfig net = network_from(c, 3);
  const TrainConfig t = train_from(c, "pretrain");
  const std::vector<SourceSpec> sources = sources_from(c);
  PretrainResult r = pretrain_teacher(sources, net, t,
                                      out + "/teacher-abort.ckpt",
                                      make_caching_loader());
  save_teacher(out + "/teacher.ckpt", r.teacher, uint64_t(t.steps));
  write_train_log(out + "/train-log.txt", r.log);
  std::cout << "teacher checkpoint: " << out << "/teacher.ckpt\n"
            << "final " << r.log.back().to_line() << "\n";
  return 0;
}

int cmd_train(const KeyValueConfig& c, const std::string& out) {
  TeacherCheckpoint teacher = load_teacher(c.require_string("train.teacher"));
  const TrainConfig t = train_from(c, "predict-train");

  // The student backbone comes from the teacher checkpoint; explicit net.*
  // keys are only consistency-checked so one config file can drive both
  // stages without silently diverging from the checkpoint.
  NetworkConfig scfg = teacher.net.cfg;
  scfg.output_channels = expected_output_channels(t.task);
  if (c.has("net.depth_scale"))
    scfg.depth_scale = c.get_double("net.depth_scale", scfg.depth_scale);
  const bool any_net_key = c.has("net.size") || c.has("net.base_channels") ||
                           c.has("net.depth_levels") || c.has("net.taps") ||
                           c.has("net.timestep_embed_dim");
  if (any_net_key &&
      !architecture_equals(network_from(c, scfg.output_channels), scfg))
    throw config_error(
        "net.* keys disagree with the teacher checkpoint architecture");
  scfg.validate();

  const std::vector<SourceSpec> sources = sources_from(c);
  TrainResult r = train_predictor(teacher.net, sources, scfg, t,
                                  out + "/student-abort.ckpt",
                                  make_caching_loader());
  save_predictor(out + "/student.ckpt", r.state);
  write_train_log(out + "/train-log.txt", r.log);
  std::cout << "student checkpoint: " << out << "/student.ckpt\n"
            << "final " << r.log.back().to_line() << "\n";
  return 0;
}

int cmd_predict(const KeyValueConfig& c, const std::string& out) {
  PredictorState st = load_predictor(c.require_string("predict.checkpoint"));
  const std::string task = c.get_string("predict.task", "depth");
  require_task_compatible(st.config, task);

  const TensorF rgb = load_rgb_any(c.require_string("predict.input"));
  const int H = rgb.shape[0], W = rgb.shape[1];
  TensorF x({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int k = 0; k < 3; ++k)
        x.at(k, y, xx) = 2.0f * rgb.at(y, xx, k) - 1.0f;

  const TensorF raw = student_forward(st, x).first;  // exactly one forward

  const std::string raster_path = out + "/prediction.dpr1";
  const std::string png_path = out + "/prediction.png";
  if (task == "depth") {
    const TensorF d = decode_depth(sigmoid_plane(raw), st.config.depth_scale);
    TensorF hwc({H, W, 1});
    hwc.v = d.v;
    write_raster(raster_path, hwc, RasterSemantic::depth);
    write_png_rgb(png_path, visualize_map(d));
  } else if (task == "normal") {
    const TensorF n = decode_normals(raw);
    TensorF hwc({H, W, 3});
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int k = 0; k < 3; ++k) hwc.at(y, xx, k) = n.at(k, y, xx);
    write_raster(raster_path, hwc, RasterSemantic::normal);
    write_png_rgb(png_path, visualize_map(hwc));
  } else {
    const TensorF m = sigmoid_plane(raw);
    TensorF hwc({H, W, 1});
    hwc.v = m.v;
    write_raster(raster_path, hwc, RasterSemantic::matte);
    write_png_gray(png_path, m);
  }
  std::cout << "prediction: " << raster_path << " (+ " << png_path
            << "), nfe=1\n";
  return 0;
}

int cmd_eval(const KeyValueConfig& c, const std::string& out) {
  const std::vector<DenseSample> samples =
      load_dataset(c.require_string("eval.data"));
  EvalProtocol proto;
  const std::string align = c.get_string("eval.align", "on");
  if (align != "on" && align != "off")
    throw config_error("eval.align must be 'on' or 'off', got '" + align +
                       "'");
  proto.align = align == "on";
  proto.binary_threshold = c.get_double("eval.binary_threshold", 0.5);
  proto.matting_divisor = c.get_double("eval.matting_divisor", 1000.0);
  const std::string task = c.get_string("eval.task", "depth");

  MetricsReport report;
  const std::string oracle = c.get_string("eval.oracle", "");
  if (oracle == "gt") {
    report = evaluate_oracle(samples, task, proto);
  } else if (!oracle.empty()) {
    throw config_error("eval.oracle supports only 'gt', got '" + oracle +
                       "'");
  } else {
    PredictorState st = load_predictor(c.require_string("eval.checkpoint"));
    report = evaluate(st, samples, task, proto);
  }
  const std::string text = report_records(report);
  write_text_file(out + "/metrics.txt", text);
  std::cout << text;
  return 0;
}

int cmd_report(const KeyValueConfig& c, const std::string& out) {
  const std::string list_path = c.require_string("report.list");
  std::ifstream f(list_path);
  if (!f) throw io_error("cannot open report list: " + list_path);
  std::vector<MethodReport> rows;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    const size_t line_at = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw format_error("report list line is not name<TAB>metrics-file: " +
                             list_path,
                         line_at);
    MethodReport mr;
    mr.method = line.substr(0, tab);
    mr.report = parse_report_records(slurp_text(line.substr(tab + 1)));
    rows.push_back(std::move(mr));
  }
  const std::string table = render_table(rows);
  write_text_file(out + "/table.txt", table);
  std::cout << table;
  return 0;
}

void add_common_options(CLI::App* cmd, CliArgs& a) {
  cmd->add_option("--config", a.config_file,
                  "Flat key=value config file (sections use dots, e.g. "
                  "train.steps=5000)");
  cmd->add_option("--out", a.flags["out"],
                  "Output directory (default '.'); receives the effective "
                  "config echo");
  cmd->add_option("--seed", a.flags["seed"],
                  "Root RNG seed; every derived stream is a child of it");
  cmd->add_option("--set", a.sets,
                  "Override a config key (key=value, repeatable; wins over "
                  "the config file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Deterministic single-step dense prediction: procedural data "
      "generation, diffusion teacher pretraining, representation-aligned "
      "student training, prediction, evaluation, and report rendering."};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 success, 2 configuration/usage error, 3 I/O or file "
      "format error,\n4 numerical/degenerate failure.\nEnvironment: "
      "D3_REFERENCE_MODE=1 pins serialized deterministic execution (the "
      "default\nand only execution mode, so results are bit-reproducible "
      "either way).");

  CliArgs args;

  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a procedural dataset with a manifest");
  add_common_options(gen, args);
  gen->add_option("--n", args.flags["data.n"], "Number of samples (>= 1)");
  gen->add_option("--size", args.flags["data.size"],
                  "Square sample size in pixels (default 64)");
  gen->add_option("--supersample", args.flags["data.supersample"],
                  "Anti-aliasing factor 1, 2, or 4 (default 4)");
  gen->add_option("--pseudo-fraction", args.flags["data.pseudo_fraction"],
                  "Trailing fraction of samples given pseudo-labels");

  CLI::App* pre = app.add_subcommand(
      "pretrain", "Pretrain the noise-prediction teacher on a dataset");
  add_common_options(pre, args);
  pre->add_option("--data", args.flags["train.data"],
                  "Dataset directory (single source)");
  pre->add_option("--mix", args.flags["train.mix"],
                  "Mix manifest (name<TAB>rate<TAB>kind<TAB>dir per line)");
  pre->add_option("--steps", args.flags["train.steps"],
                  "Number of optimization steps");
  pre->add_option("--batch-size", args.flags["train.batch_size"],
                  "Samples per step (default 32)");
  pre->add_option("--lr", args.flags["train.learning_rate"],
                  "Peak learning rate (0 = stage default)");
  pre->add_option("--warmup", args.flags["train.warmup_steps"],
                  "Linear warm-up steps (default 0)");

  CLI::App* tr = app.add_subcommand(
      "train", "Train the single-step student against a frozen teacher");
  add_common_options(tr, args);
  tr->add_option("--teacher", args.flags["train.teacher"],
                 "Teacher checkpoint path");
  tr->add_option("--data", args.flags["train.data"],
                 "Dataset directory (single source)");
  tr->add_option("--mix", args.flags["train.mix"],
                 "Mix manifest (name<TAB>rate<TAB>kind<TAB>dir per line)");
  tr->add_option("--task", args.flags["train.task"],
                 "depth | normal | matting (default depth)");
  tr->add_option("--steps", args.flags["train.steps"],
                 "Number of optimization steps");
  tr->add_option("--batch-size", args.flags["train.batch_size"],
                 "Samples per step (default 32)");
  tr->add_option("--lr", args.flags["train.learning_rate"],
                 "Peak learning rate (0 = stage default)");
  tr->add_option("--warmup", args.flags["train.warmup_steps"],
                 "Linear warm-up steps (default 0)");
  tr->add_option("--lambda", args.flags["train.lambda"],
                 "Task-loss weight in the joint objective (> 0)");
  tr->add_flag("--identity-heads", args.identity_heads,
               "Ablation: bypass projection heads in the alignment loss");

  CLI::App* pd = app.add_subcommand(
      "predict", "Run one forward pass on an image and write the dense map");
  add_common_options(pd, args);
  pd->add_option("--input", args.flags["predict.input"],
                 "Input image (PNG or raster container)");
  pd->add_option("--checkpoint", args.flags["predict.checkpoint"],
                 "Student checkpoint path");
  pd->add_option("--task", args.flags["predict.task"],
                 "depth | normal | matting (default depth)");

  CLI::App* ev = app.add_subcommand(
      "eval", "Evaluate a checkpoint (or the GT oracle) on a dataset");
  add_common_options(ev, args);
  ev->add_option("--data", args.flags["eval.data"], "Dataset directory");
  ev->add_option("--checkpoint", args.flags["eval.checkpoint"],
                 "Student checkpoint path");
  ev->add_option("--task", args.flags["eval.task"],
                 "depth | normal | matting (default depth)");
  ev->add_option("--align", args.flags["eval.align"],
                 "Affine depth alignment: on | off (default on)");
  ev->add_option("--oracle", args.flags["eval.oracle"],
                 "'gt' scores ground truth as the prediction");

  CLI::App* rp = app.add_subcommand(
      "report", "Render a ranked benchmark table from stored metric records");
  add_common_options(rp, args);
  rp->add_option("--list", args.flags["report.list"],
                 "File of name<TAB>metrics-file lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse diagnostic
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const KeyValueConfig c = resolve_config(args);
    const std::string out = c.get_string("out", ".");
    echo_config(c, out);
    if (name == "gen-data") return cmd_gen_data(c, out);
    if (name == "pretrain") return cmd_pretrain(c, out);
    if (name == "train") return cmd_train(c, out);
    if (name == "predict") return cmd_predict(c, out);
    if (name == "eval") return cmd_eval(c, out);
    return cmd_report(c, out);
  } catch (const config_error& e) {
    std::cerr << "denseprior " << name << ": config error: " << e.what()
              << "\n";
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "denseprior " << name << ": usage error: " << e.what()
              << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "denseprior " << name << ": i/o error: " << e.what() << "\n";
    return 3;
  } catch (const format_error& e) {
    std::cerr << "denseprior " << name << ": format error: " << e.what()
              << "\n";
    return 3;
  } catch (const error& e) {
    // numerical aborts, degenerate inputs, shape/range violations
    std::cerr << "denseprior " << name << ": runtime error: " << e.what()
              << "\n";
    return 4;
  }
}
