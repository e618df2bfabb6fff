// Command-line front end: ingest / train / crossval / explore / bench.
// Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 explorer
// found no feasible candidate.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "nanonet/bench.hpp"
#include "nanonet/data.hpp"
#include "nanonet/explore.hpp"
#include "nanonet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace nanonet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInfeasible = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  std::string started_at = iso8601_now();
  uint64_t seed = 0;
  int threads = 1;
  ordered_json config = ordered_json::object();
  std::vector<std::string> artifacts;
  std::string arch_hash;

  void write(const fs::path& path) const {
    ordered_json j;
    j["command"] = command;
    j["started_at"] = started_at;
    j["finished_at"] = iso8601_now();
    j["seed"] = seed;
    j["threads"] = threads;
    j["config"] = config;
    j["artifacts"] = artifacts;
    if (!arch_hash.empty()) j["arch_hash"] = arch_hash;
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
  }
};

// ---- shared options ---------------------------------------------------

struct CommonOpts {
  std::string arch = "nano-b";
  std::string data = "synth";
  std::string out;
  std::string config_file;
  uint64_t seed = 1;
  int threads = 0;  // 0 = NANONET_THREADS or 1
  int resolution = 48;
  int synth_subjects = 20;
  int synth_per_subject = 21;
  int epochs = -1;       // -1 = config/default
  int batch_size = -1;
  double base_lr = -1;
  bool no_augment = false;
  bool class_weights = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_arch = true) {
  if (with_arch)
    cmd->add_option("--arch", o.arch, "nano-a, nano-b, or an architecture file");
  cmd->add_option("--data", o.data, "'synth' or a dataset cache path");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--config", o.config_file, "JSON config file");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--threads", o.threads, "worker threads (folds)");
  cmd->add_option("--resolution", o.resolution, "input image resolution");
  cmd->add_option("--synth-subjects", o.synth_subjects);
  cmd->add_option("--synth-per-subject", o.synth_per_subject);
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.base_lr, "base learning rate");
  cmd->add_flag("--no-augment", o.no_augment, "disable data augmentation");
  cmd->add_flag("--class-weights", o.class_weights,
                "inverse-frequency class weighting of the loss");
  cmd->add_flag("-v,--verbose", o.verbose);
}

int resolve_threads(const CLI::App* cmd, int flag_value) {
  if (cmd->count("--threads") > 0) return std::max(1, flag_value);
  if (const char* env = std::getenv("NANONET_THREADS"))
    return std::max(1, std::atoi(env));
  return 1;
}

// precedence: CLI flag > config file > built-in default
TrainConfig resolve_train_config(const CLI::App* cmd, const CommonOpts& o) {
  TrainConfig cfg;
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw ValueError("config file '" + o.config_file + "' not found");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ValueError(std::string("config file: ") + e.what());
    }
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.base_lr = j.value("base_lr", cfg.base_lr);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.augment_enabled = j.value("augment_enabled", cfg.augment_enabled);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      cfg.augment.rotation_deg = a.value("rotation_deg", cfg.augment.rotation_deg);
      cfg.augment.shift_frac = a.value("shift_frac", cfg.augment.shift_frac);
      cfg.augment.zoom_frac = a.value("zoom_frac", cfg.augment.zoom_frac);
      cfg.augment.flip_prob = a.value("flip_prob", cfg.augment.flip_prob);
    }
  }
  cfg = cfg.with_epochs(o.epochs >= 0 && cmd->count("--epochs") > 0 ? o.epochs
                                                                    : cfg.epochs);
  if (cmd->count("--batch-size") > 0) cfg.batch_size = o.batch_size;
  if (cmd->count("--lr") > 0) cfg.base_lr = o.base_lr;
  if (cmd->count("--seed") > 0) cfg.seed = o.seed;
  if (o.no_augment) cfg.augment_enabled = false;
  if (o.class_weights) cfg.class_weighting = true;
  cfg.threads = resolve_threads(cmd, o.threads);
  cfg.verbose = o.verbose;
  cfg.validate();
  return cfg;
}

ordered_json config_snapshot(const TrainConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["base_lr"] = cfg.base_lr;
  ordered_json sched = ordered_json::array();
  for (const auto& s : cfg.lr_schedule) sched.push_back({s.epoch, s.multiplier});
  j["lr_schedule"] = sched;
  j["batch_size"] = cfg.batch_size;
  j["adam"] = {cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  j["seed"] = cfg.seed;
  j["class_weighting"] = cfg.class_weighting;
  j["augment_enabled"] = cfg.augment_enabled;
  j["augment"] = {{"rotation_deg", cfg.augment.rotation_deg},
                  {"shift_frac", cfg.augment.shift_frac},
                  {"zoom_frac", cfg.augment.zoom_frac},
                  {"flip_prob", cfg.augment.flip_prob}};
  return j;
}

ArchSpec load_arch(const std::string& name, int resolution) {
  if (name == "nano-a")
    return build_reference(ReferenceVariant::nano_a_like, resolution);
  if (name == "nano-b")
    return build_reference(ReferenceVariant::nano_b_like, resolution);
  std::ifstream in(name);
  if (!in) throw ValueError("architecture file '" + name + "' not found");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return deserialize(text);
}

std::vector<Sample> load_data(const CommonOpts& o, uint64_t seed) {
  if (o.data == "synth")
    return synth_dataset(o.synth_subjects, o.synth_per_subject, seed,
                         o.resolution);
  return load_cache(o.data);
}

fs::path out_dir(const CommonOpts& o, const std::string& command) {
  return o.out.empty() ? fs::path("nanonet-out") / command : fs::path(o.out);
}

ordered_json history_json(const std::vector<EpochStats>& history) {
  ordered_json arr = ordered_json::array();
  for (const auto& e : history) {
    ordered_json row;
    row["epoch"] = e.epoch;
    row["lr"] = e.lr;
    row["train_loss"] = e.train_loss;
    row["train_acc"] = e.train_acc;
    if (e.val_acc >= 0) row["val_acc"] = e.val_acc;
    arr.push_back(std::move(row));
  }
  return arr;
}

// ---- subcommands -------------------------------------------------------

int cmd_ingest(const std::string& root, const std::string& out_cache,
               int resolution) {
  IngestStats stats;
  auto samples = ingest_ckplus(root, resolution, &stats);
  if (samples.empty()) throw ValueError("ingest: no labeled sequences found");
  fs::path cache(out_cache);
  if (!cache.parent_path().empty()) fs::create_directories(cache.parent_path());
  save_cache(out_cache, samples);

  std::cout << stats.samples << " samples / " << stats.sequences
            << " sequences / " << stats.subjects << " subjects\n";
  std::cerr << "skipped unlabeled: " << stats.skipped_unlabeled
            << ", label failures: " << stats.label_failures
            << ", short sequences: " << stats.short_sequences << "\n";

  Manifest m;
  m.command = "ingest";
  m.config = {{"ckplus_root", root},
              {"out_cache", out_cache},
              {"resolution", resolution}};
  m.artifacts = {out_cache, out_cache + ".json"};
  m.write(out_cache + ".manifest.json");
  return 0;
}

int cmd_train(const CLI::App* cmd, const CommonOpts& o,
              const std::string& init_from, const std::string& init_arch) {
  TrainConfig cfg = resolve_train_config(cmd, o);
  ArchSpec spec = load_arch(o.arch, o.resolution);
  auto data = load_data(o, cfg.seed);

  std::optional<ModelState> parent;
  if (!init_from.empty()) {
    if (init_arch.empty())
      throw UsageError("--init-from requires --init-arch (the parent's spec)");
    parent = load_checkpoint(init_from, load_arch(init_arch, o.resolution));
  }
  TrainResult r = train(spec, data, {}, cfg, parent ? &*parent : nullptr);
  EvalResult final_eval = evaluate(r.state.net, data);

  const fs::path dir = out_dir(o, "train");
  fs::create_directories(dir);
  const std::string ckpt = (dir / "model.ckpt").string();
  save_checkpoint(ckpt, r.state);
  std::ofstream arch_out(dir / "arch.json");
  arch_out << serialize(spec);

  ordered_json metrics;
  metrics["arch"] = spec.name;
  metrics["arch_hash"] = content_hash(spec);
  metrics["params"] = count_params(spec).param_count;
  metrics["macs"] = count_params(spec).mac_count;
  metrics["final_train_accuracy"] = final_eval.accuracy;
  metrics["history"] = history_json(r.history);
  std::ofstream mf(dir / "metrics.json");
  mf << metrics.dump(2) << "\n";
  std::cout << metrics.dump(2) << "\n";
  std::cerr << "trained " << spec.name << " for " << cfg.epochs << " epochs, "
            << "train accuracy " << final_eval.accuracy << "\n";

  Manifest m;
  m.command = "train";
  m.seed = cfg.seed;
  m.threads = cfg.threads;
  m.config = config_snapshot(cfg);
  m.config["arch"] = o.arch;
  m.config["data"] = o.data;
  m.artifacts = {ckpt, (dir / "metrics.json").string(),
                 (dir / "arch.json").string()};
  m.arch_hash = content_hash(spec);
  m.write(dir / "manifest.json");
  return 0;
}

int cmd_crossval(const CLI::App* cmd, const CommonOpts& o, int folds) {
  TrainConfig cfg = resolve_train_config(cmd, o);
  ArchSpec spec = load_arch(o.arch, o.resolution);
  auto data = load_data(o, cfg.seed);

  CrossValResult r = cross_validate(spec, data, folds, cfg);

  std::cerr << "fold  test  accuracy\n";
  for (const auto& f : r.folds) {
    char line[64];
    snprintf(line, sizeof(line), "%4d  %4d  %8.4f\n", f.fold, f.test_count,
             f.accuracy);
    std::cerr << line;
  }
  std::cerr << "mean accuracy: " << r.mean_accuracy << "\n";

  ordered_json report;
  report["arch"] = spec.name;
  report["arch_hash"] = content_hash(spec);
  report["k"] = folds;
  report["folds"] = ordered_json::array();
  for (const auto& f : r.folds) {
    ordered_json row;
    row["fold"] = f.fold;
    row["test_count"] = f.test_count;
    row["accuracy"] = f.accuracy;
    row["test_subjects"] = f.test_subjects;
    report["folds"].push_back(std::move(row));
  }
  report["mean_accuracy"] = r.mean_accuracy;
  std::cout << report.dump(2) << "\n";

  const fs::path dir = out_dir(o, "crossval");
  fs::create_directories(dir);
  std::ofstream rf(dir / "crossval.json");
  rf << report.dump(2) << "\n";

  Manifest m;
  m.command = "crossval";
  m.seed = cfg.seed;
  m.threads = cfg.threads;
  m.config = config_snapshot(cfg);
  m.config["arch"] = o.arch;
  m.config["data"] = o.data;
  m.config["folds"] = folds;
  m.artifacts = {(dir / "crossval.json").string()};
  m.arch_hash = content_hash(spec);
  m.write(dir / "manifest.json");
  return 0;
}

int cmd_explore(const CLI::App* cmd, const CommonOpts& o, double min_accuracy,
                long long max_params, int iterations, int population,
                int proxy_epochs) {
  SearchConfig cfg;
  cfg.iterations = iterations;
  cfg.population = population;
  cfg.proxy_epochs = proxy_epochs;
  cfg.seed = o.seed;
  cfg.proxy_train = resolve_train_config(cmd, o);
  cfg.proxy_train.threads = 1;
  Constraints constraints{min_accuracy, max_params};

  ArchSpec seed_spec = load_arch(o.arch, o.resolution);
  auto data = load_data(o, cfg.seed);

  const fs::path dir = out_dir(o, "explore");
  fs::create_directories(dir);
  std::ofstream log(dir / "log.jsonl", std::ios::trunc);
  ExploreResult res = explore(seed_spec, data, constraints, cfg, &log);

  Manifest m;
  m.command = "explore";
  m.seed = cfg.seed;
  m.config = {{"min_accuracy", min_accuracy},
              {"max_params", max_params},
              {"iterations", iterations},
              {"population", population},
              {"proxy_epochs", proxy_epochs},
              {"seed_arch", o.arch},
              {"data", o.data}};
  m.arch_hash = content_hash(seed_spec);
  m.artifacts = {(dir / "log.jsonl").string()};

  if (!res.best) {
    std::cerr << "no feasible candidate satisfied the constraints ("
              << res.log.size() << " evaluated)\n";
    if (res.best_infeasible) {
      std::ofstream best(dir / "best_infeasible.json");
      best << serialize(res.best_infeasible->spec);
      m.artifacts.push_back((dir / "best_infeasible.json").string());
    }
    m.write(dir / "manifest.json");
    return kExitInfeasible;
  }

  std::ofstream best(dir / "best.json");
  best << serialize(res.best->spec);
  m.artifacts.push_back((dir / "best.json").string());
  m.write(dir / "manifest.json");

  ordered_json summary;
  summary["evaluated"] = res.log.size();
  summary["archive_size"] = res.archive.size();
  summary["best"] = {{"name", res.best->spec.name},
                     {"accuracy", res.best->accuracy},
                     {"params", res.best->params},
                     {"macs", res.best->macs},
                     {"u_score", res.best->u_score},
                     {"arch_file", (dir / "best.json").string()}};
  std::cout << summary.dump(2) << "\n";
  std::cerr << "best candidate: U " << res.best->u_score << ", accuracy "
            << res.best->accuracy << ", params " << res.best->params << "\n";
  return 0;
}

int cmd_bench(const CommonOpts& o, const std::string& checkpoint, int runs,
              int warmup, double watts, int batch) {
  if (watts <= 0) throw UsageError("--watts must be > 0");
  if (runs < 10) throw UsageError("runs >= 10 required");
  if (warmup < 1) throw UsageError("warmup >= 1 required");

  ArchSpec spec = load_arch(o.arch, o.resolution);
  Network net = [&] {
    if (checkpoint.empty()) return Network::build(spec, o.seed);
    return load_checkpoint(checkpoint, spec).net;
  }();

  BenchReport r = measure(net, warmup, runs);
  r.watts = watts;
  r.images_per_sec_per_watt = energy_efficiency(r.fps, watts);
  if (batch > 0) {
    r.batch = batch;
    r.batched_images_per_sec = batched_throughput(net, batch, warmup, runs);
  }
  std::cout << report_json(r);
  std::cerr << "mean " << r.latency.mean_ms << " ms, fps " << r.fps << ", "
            << r.images_per_sec_per_watt << " images/s/watt at " << watts
            << " W\n";

  const fs::path dir = out_dir(o, "bench");
  fs::create_directories(dir);
  std::ofstream rf(dir / "bench.json");
  rf << report_json(r);

  Manifest m;
  m.command = "bench";
  m.seed = o.seed;
  m.config = {{"arch", o.arch},
              {"checkpoint", checkpoint},
              {"runs", runs},
              {"warmup", warmup},
              {"watts", watts}};
  m.arch_hash = content_hash(spec);
  m.artifacts = {(dir / "bench.json").string()};
  m.write(dir / "manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compact facial-expression network engine"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "build a dataset cache from a CK+ tree");
  std::string ckplus_root, out_cache = "ckplus.cache";
  int ingest_resolution = 48;
  ingest->add_option("--ckplus-root", ckplus_root, "dataset root directory")
      ->required();
  ingest->add_option("--out-cache", out_cache, "cache file to write");
  ingest->add_option("--resolution", ingest_resolution);

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model");
  CommonOpts train_opts;
  std::string init_from, init_arch;
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--init-from", init_from,
                        "checkpoint to inherit compatible weights from");
  train_cmd->add_option("--init-arch", init_arch,
                        "architecture the --init-from checkpoint was trained on");

  // crossval
  auto* crossval = app.add_subcommand("crossval", "subject-independent k-fold run");
  CommonOpts cv_opts;
  int folds = 10;
  add_common(crossval, cv_opts);
  crossval->add_option("--folds", folds, "number of folds");

  // explore
  auto* explore_cmd =
      app.add_subcommand("explore", "constrained architecture search");
  CommonOpts ex_opts;
  double min_accuracy = 0.92;
  long long max_params = 1'000'000;
  int iterations = 20, population = 4, proxy_epochs = 40;
  add_common(explore_cmd, ex_opts, false);
  explore_cmd->add_option("--seed-arch", ex_opts.arch, "starting architecture");
  explore_cmd->add_option("--min-accuracy", min_accuracy);
  explore_cmd->add_option("--max-params", max_params);
  explore_cmd->add_option("--iterations", iterations);
  explore_cmd->add_option("--population", population);
  explore_cmd->add_option("--proxy-epochs", proxy_epochs);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "latency / energy report");
  CommonOpts bench_opts;
  std::string checkpoint;
  int runs = 100, warmup = 10, bench_batch = 0;
  double watts = 15.0;
  bench_cmd->add_option("--arch", bench_opts.arch);
  bench_cmd->add_option("--resolution", bench_opts.resolution);
  bench_cmd->add_option("--checkpoint", checkpoint, "trained weights (optional)");
  bench_cmd->add_option("--runs", runs);
  bench_cmd->add_option("--warmup", warmup);
  bench_cmd->add_option("--watts", watts, "board power level for the ratio");
  bench_cmd->add_option("--batch", bench_batch,
                        "also report throughput at this batch size");
  bench_cmd->add_option("--out", bench_opts.out);
  bench_cmd->add_option("--seed", bench_opts.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (ingest->parsed())
      return cmd_ingest(ckplus_root, out_cache, ingest_resolution);
    if (train_cmd->parsed())
      return cmd_train(train_cmd, train_opts, init_from, init_arch);
    if (crossval->parsed()) return cmd_crossval(crossval, cv_opts, folds);
    if (explore_cmd->parsed())
      return cmd_explore(explore_cmd, ex_opts, min_accuracy, max_params,
                         iterations, population, proxy_epochs);
    if (bench_cmd->parsed())
      return cmd_bench(bench_opts, checkpoint, runs, warmup, watts, bench_batch);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const GraphError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
