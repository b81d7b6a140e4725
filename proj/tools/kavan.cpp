// kavan: command-line front end.
//
//   kavan generate   --n 16 --seed 1 --out data.jsonl
//   kavan train      --config run.json --data data.jsonl --out runs/a
//   kavan eval       --config run.json --params runs/a/params.json --data data.jsonl --out eval.json
//   kavan gradcheck  --out gradcheck.json
//   kavan heatmap    --data data.jsonl --sample 0 --out heatmaps/ --pgm
//   kavan dump-masks --config run.json --params runs/a/params.json --data data.jsonl --sample 0 --out masks/
//
// Exit codes: 0 success, 2 validation failure, 3 numeric abort.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kavan/kavan.hpp"

namespace fs = std::filesystem;
using namespace kavan;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : run_config_from_json(read_json(path));
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

EmotionTaxonomy load_taxonomy(const std::string& path) {
  return path.empty() ? default_taxonomy() : taxonomy_from_json(read_json(path));
}

const GifSample& pick_sample(const std::vector<GifSample>& data, const std::string& which) {
  for (auto& s : data)
    if (s.id == which) return s;
  std::size_t idx = 0;
  try {
    idx = std::stoul(which);
  } catch (const std::exception&) {
    throw ConfigError("no sample with id '" + which + "'");
  }
  if (idx >= data.size()) throw ConfigError("sample index " + which + " out of range");
  return data[idx];
}

KavanParams load_model(const RunConfig& cfg, const std::string& path) {
  KavanParams params = KavanParams::init(cfg.model, 0);
  load_params(read_json(path), params);
  return params;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-attended hierarchical LSTM for GIF emotion recognition"};
  app.require_subcommand(1);

  std::string config_path, data_path, params_path, out_path, taxonomy_path, sample_id = "0";
  std::optional<std::uint64_t> seed;

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic planted-face dataset (JSON lines)");
  int gen_n = 16;
  SyntheticConfig syn;
  gen->add_option("--n", gen_n, "Number of GIFs")->check(CLI::PositiveNumber);
  gen->add_option("--seed", syn.seed, "Generator seed");
  gen->add_option("--frames", syn.frames_per_gif, "Frames per GIF")->check(CLI::PositiveNumber);
  gen->add_option("--distractors", syn.distractors, "Face-free blobs per frame");
  gen->add_option("--keypoint-drop", syn.keypoint_drop, "Probability of dropping each keypoint");
  gen->add_option("--empty-frames", syn.empty_frame_rate, "Probability of a keypoint-free frame");
  gen->add_option("--taxonomy", taxonomy_path, "Taxonomy JSON (default: built-in)");
  gen->add_option("--out", out_path, "Output .jsonl")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train and write params.json + report.json");
  tr->add_option("--config", config_path, "Run config JSON");
  tr->add_option("--data", data_path, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "Override the config seed");
  tr->add_option("--out", out_path, "Output directory")->required();
  bool quiet = false;
  tr->add_flag("--quiet", quiet, "Do not print per-step losses");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate saved parameters on a dataset");
  ev->add_option("--config", config_path, "Run config JSON used for training");
  ev->add_option("--params", params_path, "params.json")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_path, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--seed", seed, "Unused; accepted for symmetry");
  ev->add_option("--out", out_path, "Report JSON path")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  GradcheckConfig gc_cfg;
  gc->add_option("--seed", gc_cfg.seed, "Seed of the tiny model and sample");
  gc->add_option("--out", out_path, "Report JSON path");

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "Supervision heatmaps of one sample");
  bool pgm = false;
  hm->add_option("--data", data_path, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  hm->add_option("--sample", sample_id, "Sample id or index");
  hm->add_option("--config", config_path, "Run config JSON (heatmap section)");
  hm->add_option("--out", out_path, "Output directory")->required();
  hm->add_flag("--pgm", pgm, "Also write one PGM image per frame");

  // dump-masks
  auto* dm = app.add_subcommand("dump-masks", "Predicted attention masks next to supervision heatmaps");
  dm->add_option("--config", config_path, "Run config JSON used for training");
  dm->add_option("--params", params_path, "params.json")->required()->check(CLI::ExistingFile);
  dm->add_option("--data", data_path, "Dataset .jsonl")->required()->check(CLI::ExistingFile);
  dm->add_option("--sample", sample_id, "Sample id or index");
  dm->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) {
      auto taxonomy = load_taxonomy(taxonomy_path);
      write_dataset(out_path, generate_synthetic(gen_n, syn, taxonomy));
      std::cout << "wrote " << gen_n << " samples to " << out_path << "\n";
    } else if (*tr) {
      RunConfig cfg = load_config(config_path, seed);
      auto taxonomy = load_taxonomy(cfg.taxonomy_path);
      auto data = read_dataset(data_path);
      auto result = run_experiment(cfg, data, taxonomy, [&](const StepLog& l) {
        if (!quiet)
          std::cout << "step " << l.step << " total " << l.total << " rg " << l.regression << " ce " << l.classification
                    << " rank " << l.ranking << " kp " << l.keypoint << "\n";
      });
      fs::path dir(out_path);
      write_json(dir / "params.json", params_to_json(result.params));
      write_json(dir / "report.json", report_to_json(result.report));
      write_json(dir / "run_config.json", run_config_to_json(cfg));
      write_json(dir / "timing.json", {{"runtime_seconds", result.report.runtime_seconds}});
      std::cout << report_to_json(result.report)["average"].dump(2) << "\n";
    } else if (*ev) {
      RunConfig cfg = load_config(config_path, seed);
      auto taxonomy = load_taxonomy(cfg.taxonomy_path);
      auto data = read_dataset(data_path);
      auto params = load_model(cfg, params_path);
      auto m = evaluate(params, cfg.model, data, taxonomy, cfg.heatmap, cfg.loss);
      write_json(out_path, metrics_to_json(m));
      std::cout << metrics_to_json(m).dump(2) << "\n";
    } else if (*gc) {
      auto report = gradcheck(gc_cfg);
      if (!out_path.empty()) write_json(out_path, gradcheck_to_json(report));
      std::cout << gradcheck_to_json(report).dump(2) << "\n";
      return report.passed ? 0 : kExitValidation;
    } else if (*hm) {
      RunConfig cfg = load_config(config_path, std::nullopt);
      auto data = read_dataset(data_path);
      const GifSample& s = pick_sample(data, sample_id);
      auto maps = build_supervision(s.keypoints, cfg.heatmap);
      json frames = json::array();
      fs::path dir(out_path);
      for (std::size_t t = 0; t < maps.size(); ++t) {
        json grid = json::array();
        auto cells = maps[t].cells();
        for (std::size_t r = 0; r < kGridSide; ++r)
          grid.push_back(std::vector<double>(cells.begin() + static_cast<std::ptrdiff_t>(r * kGridSide),
                                             cells.begin() + static_cast<std::ptrdiff_t>((r + 1) * kGridSide)));
        frames.push_back({{"frame", t}, {"keypoints", s.keypoints[t].points.size()}, {"grid", grid}});
        if (pgm) write_binary(dir / ("heatmap_" + std::to_string(t) + ".pgm"), grids_to_pgm({cells}, kGridSide));
      }
      write_json(dir / "heatmaps.json", {{"sample", s.id}, {"frames", frames}});
      std::cout << "wrote " << maps.size() << " heatmaps to " << out_path << "\n";
    } else if (*dm) {
      RunConfig cfg = load_config(config_path, std::nullopt);
      auto taxonomy = load_taxonomy(cfg.taxonomy_path);
      auto data = read_dataset(data_path);
      auto params = load_model(cfg, params_path);
      auto files = dump_masks(params, cfg.model, pick_sample(data, sample_id), taxonomy, out_path, cfg.heatmap);
      std::cout << "wrote " << files.size() << " files to " << out_path << "\n";
    }
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericInputError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
