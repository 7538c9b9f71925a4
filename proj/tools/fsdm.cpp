// fsdm: dataset synthesis, training, sampling and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsdm/checkpoint.hpp"
#include "fsdm/config.hpp"
#include "fsdm/episodes.hpp"
#include "fsdm/errors.hpp"
#include "fsdm/evalsuite.hpp"
#include "fsdm/image_io.hpp"
#include "fsdm/ops.hpp"
#include "fsdm/plot.hpp"
#include "fsdm/runtime.hpp"
#include "fsdm/sampler.hpp"
#include "fsdm/trainer.hpp"
#include "json.hpp"

using namespace fsdm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void warn(const std::string& message) { std::cerr << "warning: " << message << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<int> all_classes(const Dataset& data) {
  std::vector<int> ids(static_cast<size_t>(data.num_classes()));
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ids;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  int classes = 10, per_class = 100, size = 28;
  uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  synth_glyphs(a.classes, a.per_class, a.size, a.seed, a.out);
  std::cout << "wrote " << a.classes * a.per_class << " images in " << a.classes << " class folders under " << a.out
            << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out, resume, splits;
};

void plot_training(const fs::path& dir, const std::vector<MetricRecord>& log) {
  std::map<std::string, PlotSeries> series;
  for (const auto& r : log) {
    const std::string key = r.split + " " + r.metric;
    auto& s = series[key];
    s.label = key;
    s.x.push_back(static_cast<double>(r.step));
    s.y.push_back(r.value);
  }
  std::vector<PlotSeries> train, eval;
  for (auto& [key, s] : series) (key.rfind("train", 0) == 0 ? train : eval).push_back(s);
  if (!train.empty()) write_png((dir / "loss_curve.png").string(), line_plot(train, "training loss", "step"));
  if (!eval.empty()) write_png((dir / "eval_curve.png").string(), line_plot(eval, "evaluation L_eps", "step"));
}

int cmd_train(const TrainArgs& a) {
  const RunConfig config = load_config(a.config);
  const Dataset data = load_class_folders(a.data);
  const ClassSplit split = a.splits.empty() ? make_split(all_classes(data), config.split.fractions, config.split.seed)
                                            : read_split_files(a.splits, data);
  const fs::path out(a.out);
  fs::create_directories(out / "splits");
  write_split_files((out / "splits").string(), split, data);
  write_text(out / "config.txt", config.echo());
  write_text(out / "train.json",
             json{{"data_root", fs::weakly_canonical(a.data).string()}, {"train_classes", split.train.size()},
                  {"val_classes", split.val.size()}, {"test_classes", split.test.size()}}
                     .dump(2));

  Trainer trainer(config, data, split);
  std::vector<MetricRecord> log;
  const fs::path log_path = out / "metrics.jsonl";
  if (!a.resume.empty()) {
    trainer.load(a.resume);
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      MetricRecord r{j.at("step").get<int64_t>(), j.at("split"), j.at("metric"), j.at("value")};
      if (r.step <= trainer.step()) log.push_back(r);
    }
    std::cout << "resumed at step " << trainer.step() << "\n";
  }
  {
    std::ofstream rewrite(log_path, std::ios::trunc);
    for (const auto& r : log) rewrite << r.to_json() << "\n";
  }
  std::ofstream metrics(log_path, std::ios::app);
  auto checkpoint_name = [&](int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%07lld.ckpt", static_cast<long long>(step));
    return (out / buf).string();
  };
  trainer.fit(
      [&](const MetricRecord& r) {
        log.push_back(r);
        metrics << r.to_json() << "\n";
        std::cout << r.to_json() << "\n";
      },
      [&](int64_t step) {
        metrics.flush();
        trainer.save(checkpoint_name(step));
      });
  metrics.flush();
  trainer.save((out / "final.ckpt").string());
  plot_training(out, log);
  std::cout << "final checkpoint " << (out / "final.ckpt").string() << " at step " << trainer.step() << "\n";
  return 0;
}

// ------------------------------------------------------------------ sample

struct SampleArgs {
  std::string ckpt, support, out = "grid.png";
  int count = 16, steps = 250, columns = 0, batch = 16, scale = 2;
  uint64_t seed = 0;
  bool no_ema = false;
};

// Up to 10 same-size PNG images from a folder, in file-name order: [1, N, C, H, W].
Tensor load_support(const std::string& dir, const ModelConfig& model) {
  if (!fs::is_directory(dir)) throw ConfigError("support folder " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty() || files.size() > 10) {
    throw ConfigError("support folder must hold 1 to 10 PNG images, found " + std::to_string(files.size()));
  }
  std::vector<Tensor> images;
  for (const auto& f : files) {
    const Image8 img = read_png(f.string());
    if (img.width != model.image_size || img.height != model.image_size || img.channels != model.image_channels) {
      throw ConfigError("support image " + f.string() + " is " + std::to_string(img.channels) + "x" +
                        std::to_string(img.height) + "x" + std::to_string(img.width) + ", the model expects " +
                        std::to_string(model.image_channels) + "x" + std::to_string(model.image_size) + "x" +
                        std::to_string(model.image_size));
    }
    images.push_back(image_to_tensor(img));
  }
  SupportSet set;
  set.images = images;
  return stack_sets({set});
}

int cmd_sample(const SampleArgs& a) {
  const CheckpointFile file = read_checkpoint(a.ckpt);
  const RunConfig config = config_from_checkpoint(file);
  const auto model = model_from_checkpoint(file, !a.no_ema);
  const NoiseSchedule schedule = schedule_from_config(config);
  SampleRequest request;
  request.count = a.count;
  request.steps = a.steps;
  request.seed = a.seed;
  if (model->conditional()) {
    if (a.support.empty()) throw ConfigError(to_string(model->variant()) + " is conditional; pass --support <folder>");
    request.support = load_support(a.support, model->config());
  } else if (!a.support.empty()) {
    warn("DDPM is unconditional; ignoring --support");
  }
  const Tensor samples = sample(request, *model, schedule, a.batch);
  const int columns = a.columns > 0 ? a.columns : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(a.count))));
  Image8 grid = tile_images(samples, columns);
  if (request.support.defined()) {
    const Tensor set = ops::reshape(request.support, {request.support.dim(1), request.support.dim(2),
                                                       request.support.dim(3), request.support.dim(4)});
    grid = hconcat(tile_images(set, 1), grid, 12);
  }
  write_png(a.out, upscale(grid, a.scale));
  write_text(a.out + ".config.txt", config.echo() + "# sample: count = " + std::to_string(a.count) +
                                        ", steps = " + std::to_string(a.steps) + ", seed = " + std::to_string(a.seed) +
                                        ", ema = " + (a.no_ema ? "false" : "true") + "\n");
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, splits, mode = "out", out;
  uint64_t seed = 0;
  int batches = 8, batch_size = 16, grid_steps = 100, steps = 250, sample_classes = 5, samples_per_class = 20,
      hist_episodes = 64;
  bool no_samples = false, no_ema = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.mode != "in" && a.mode != "out" && a.mode != "transfer") {
    throw ConfigError("--mode must be in, out or transfer, got " + a.mode);
  }
  const CheckpointFile file = read_checkpoint(a.ckpt);
  const RunConfig config = config_from_checkpoint(file);
  const auto model = model_from_checkpoint(file, !a.no_ema);
  const NoiseSchedule schedule = schedule_from_config(config);
  const Dataset data = load_class_folders(a.data);
  if (data.image_size != model->config().image_size || data.image_channels != model->config().image_channels) {
    throw ConfigError("dataset images do not match the model's " + std::to_string(model->config().image_channels) +
                      "x" + std::to_string(model->config().image_size) + "x" +
                      std::to_string(model->config().image_size));
  }

  const fs::path ckpt_dir = fs::path(a.ckpt).parent_path();
  ClassSplit split;
  Split split_id = Split::kTest;
  if (a.mode == "transfer") {
    const fs::path info = ckpt_dir / "train.json";
    if (fs::exists(info)) {
      std::ifstream in(info);
      const json j = json::parse(in);
      if (j.value("data_root", "") == fs::weakly_canonical(a.data).string()) {
        warn("transfer evaluation on the training dataset root " + a.data);
      }
    }
    split = explicit_split({}, {}, all_classes(data));
  } else {
    std::string splits = a.splits;
    if (splits.empty() && fs::exists(ckpt_dir / "splits" / "train.txt")) splits = (ckpt_dir / "splits").string();
    split = splits.empty() ? make_split(all_classes(data), config.split.fractions, config.split.seed)
                           : read_split_files(splits, data);
    split_id = a.mode == "in" ? Split::kTrain : (split.test.empty() ? Split::kVal : Split::kTest);
  }

  DenoisingOptions d;
  d.episodes.set_size = config.train.set_size;
  d.episodes.split = split_id;
  d.episodes.include_query = false;
  d.num_batches = a.batches;
  d.batch_size = a.batch_size;
  d.grid = respace_indices(schedule.T, a.grid_steps);
  d.seed = a.seed;

  EvalReport report;
  report.variant = to_string(model->variant());
  report.split = a.mode + ":" + to_string(split_id);
  report.train_step = file.get_int("state/step");
  report.seed = a.seed;
  report.denoising = eval_denoising(model_eps_factory(*model), data, split, d, schedule);
  report.sampling_steps = a.steps;
  if (!a.no_samples) {
    SampleQualityOptions o;
    o.split = split_id;
    o.num_classes = std::min<int>(a.sample_classes, static_cast<int>(split.classes(split_id).size()));
    o.samples_per_class = a.samples_per_class;
    o.set_size = config.train.set_size;
    o.steps = a.steps;
    o.seed = a.seed;
    report.samples = eval_samples(*model, data, split, o, schedule);
    report.has_samples = true;
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "config.txt", config.echo());
  json j = json::parse(report.to_json());
  j["mode"] = a.mode;
  j["checkpoint"] = a.ckpt;
  j["data_root"] = a.data;
  j["classes"] = split.classes(split_id);

  std::ofstream metrics(out / "metrics.jsonl");
  auto emit = [&](const std::string& metric, double value) {
    metrics << MetricRecord{report.train_step, report.split, metric, value}.to_json() << "\n";
  };
  emit("L_eps", report.denoising.aggregate);
  std::ostringstream table;
  table << "variant  " << report.variant << "\nsplit    " << report.split << "\nstep     " << report.train_step
        << "\nL_eps    " << report.denoising.aggregate << "\n";
  if (report.has_samples) {
    emit("mmd", report.samples.mmd.unbiased);
    emit("precision", report.samples.pr.precision);
    emit("recall", report.samples.pr.recall);
    table << "MMD      " << report.samples.mmd.unbiased << "\nP        " << report.samples.pr.precision
          << "\nR        " << report.samples.pr.recall << "\n";
  }
  table << "samples  " << (report.has_samples ? report.samples.sample_count : 0) << " at " << a.steps << " steps\n";

  PlotSeries layer{"L_eps per layer", {}, report.denoising.per_layer};
  for (int t : report.denoising.grid) layer.x.push_back(t);
  write_png((out / "per_layer.png").string(), line_plot({layer}, report.variant + " " + report.split, "t"));

  if (a.mode != "transfer" && !split.train.empty() && !split.classes(split_id == Split::kTrain ? Split::kTest : split_id).empty()) {
    EpisodeSpec in_spec, out_spec;
    in_spec.set_size = out_spec.set_size = config.train.set_size;
    in_spec.include_query = out_spec.include_query = false;
    in_spec.split = Split::kTrain;
    out_spec.split = split.test.empty() ? Split::kVal : Split::kTest;
    const LossHistogram h = loss_histogram(model_eps_factory(*model), data, split, in_spec, out_spec, a.hist_episodes,
                                           schedule, a.seed, 100, 30, a.batch_size);
    write_png((out / "histogram.png").string(),
              histogram_plot(h.edges, {h.in_counts, h.out_counts}, {"in", "out"}, "per-episode L_eps", "L_eps"));
    j["auroc"] = h.auroc;
    j["auroc_se"] = h.auroc_se;
    emit("auroc", h.auroc);
    table << "AUROC    " << h.auroc << " +- " << h.auroc_se << " (in vs out, " << a.hist_episodes
          << " episodes each)\n";
  }
  write_text(out / "report.json", j.dump(2) + "\n");
  write_text(out / "summary.txt", table.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  prefer_heap_allocation();
  CLI::App app{"Few-shot diffusion toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a procedural glyph dataset as class folders of PNGs");
  s->add_option("--classes", synth.classes, "number of classes")->check(CLI::PositiveNumber);
  s->add_option("--per-class", synth.per_class, "images per class")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "image side length (28 or 32)");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--out", synth.out, "output root")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model from a config file");
  t->add_option("--config", train.config, "run configuration")->required()->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "dataset root with one folder per class")->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--resume", train.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--splits", train.splits, "folder with train.txt, val.txt, test.txt")->check(CLI::ExistingDirectory);

  SampleArgs smp;
  auto* p = app.add_subcommand("sample", "generate an image grid from a checkpoint");
  p->add_option("--ckpt", smp.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  p->add_option("--support", smp.support, "folder of 1-10 same-class images");
  p->add_option("--count", smp.count, "number of samples")->check(CLI::PositiveNumber);
  p->add_option("--steps", smp.steps, "sampling steps")->check(CLI::PositiveNumber);
  p->add_option("--seed", smp.seed, "sampling seed");
  p->add_option("--columns", smp.columns, "grid columns (default: square)");
  p->add_option("--scale", smp.scale, "pixel enlargement of the written grid")->check(CLI::PositiveNumber);
  p->add_option("--batch", smp.batch, "samples per network batch")->check(CLI::PositiveNumber);
  p->add_flag("--no-ema", smp.no_ema, "use the live weights even when EMA weights exist");
  p->add_option("--out", smp.out, "output PNG");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on in, out or transfer classes");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset root")->required();
  e->add_option("--splits", ev.splits, "folder with split files (default: beside the checkpoint)");
  e->add_option("--mode", ev.mode, "in, out or transfer");
  e->add_option("--out", ev.out, "report directory")->required();
  e->add_option("--seed", ev.seed, "evaluation seed");
  e->add_option("--batches", ev.batches, "denoising batches")->check(CLI::PositiveNumber);
  e->add_option("--batch-size", ev.batch_size, "episodes per batch")->check(CLI::PositiveNumber);
  e->add_option("--grid-steps", ev.grid_steps, "timesteps in the denoising grid")->check(CLI::PositiveNumber);
  e->add_option("--steps", ev.steps, "sampling steps")->check(CLI::PositiveNumber);
  e->add_option("--sample-classes", ev.sample_classes, "classes used for sample metrics")->check(CLI::PositiveNumber);
  e->add_option("--samples-per-class", ev.samples_per_class, "samples per class")->check(CLI::PositiveNumber);
  e->add_option("--hist-episodes", ev.hist_episodes, "episodes per split for the loss histogram")
      ->check(CLI::PositiveNumber);
  e->add_flag("--no-samples", ev.no_samples, "skip sampling metrics");
  e->add_flag("--no-ema", ev.no_ema, "use the live weights even when EMA weights exist");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*p) return cmd_sample(smp);
    if (*e) return cmd_eval(ev);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
