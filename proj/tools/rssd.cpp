// rssd: train, evaluate and inspect the detector family from the shell.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rssd/rssd.hpp"

using namespace rssd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  bool json = false;
  std::vector<std::string> extras;

  // Config file, then --key value flags from the command line.
  RunConfig run_config() const {
    KeyValues kv;
    if (!config.empty()) kv = read_key_values(config);
    if (extras.size() % 2 != 0) throw ConfigError("flags come in '--key value' pairs");
    for (std::size_t i = 0; i < extras.size(); i += 2) {
      const std::string& flag = extras[i];
      if (flag.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + flag + "'");
      std::string key = flag.substr(2);
      std::replace(key.begin(), key.end(), '-', '_');
      kv.push_back({key, extras[i + 1]});
    }
    return make_run_config(kv);
  }
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw DataError("cannot write " + path.string());
}

AnnotationSet load_annotations(const fs::path& dir) {
  std::ifstream f(dir / "annotations.jsonl");
  if (!f) throw DataError("cannot open " + (dir / "annotations.jsonl").string());
  std::vector<std::string> warnings;
  auto set = read_annotations(f, read_class_list(dir / "classes.txt"), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return set;
}

std::vector<Detection> load_detections(const fs::path& path, const std::vector<std::string>& classes) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  return read_detections(f, classes);
}

int cmd_boxes(const Common& c) {
  const RunConfig rc = c.run_config();
  const auto& pc = rc.model.pyramid;
  const auto& layout = rc.model.layout;
  const auto offsets = level_offsets(layout, pc);
  const std::size_t total = count_boxes(layout, pc);
  if (generate_default_boxes(layout, pc).size() != total) throw NumericError("box generation disagrees with count");
  if (c.json) {
    json j{{"total", total}, {"shared_classifier", layout.shared_classifier}, {"levels", json::array()}};
    for (std::size_t l = 0; l < pc.num_levels(); ++l) {
      j["levels"].push_back({{"level", l},
                             {"size", pc.levels[l].spatial},
                             {"boxes_per_position", layout.boxes_per_position[l]},
                             {"boxes", offsets[l + 1] - offsets[l]}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::printf("%-6s %-7s %-9s %s\n", "level", "size", "per_pos", "boxes");
  for (std::size_t l = 0; l < pc.num_levels(); ++l) {
    std::printf("%-6zu %-7s %-9zu %zu\n", l,
                (std::to_string(pc.levels[l].spatial) + "x" + std::to_string(pc.levels[l].spatial)).c_str(),
                layout.boxes_per_position[l], offsets[l + 1] - offsets[l]);
  }
  std::printf("total %zu%s\n", total, layout.shared_classifier ? " (shared classifier)" : "");
  return 0;
}

int cmd_shapes(const Common& c) {
  const RunConfig rc = c.run_config();
  json j = json::object();
  for (FusionMode m : kAllFusionModes) {
    const auto rows = pyramid_shape_table(rc.model.pyramid, m);
    if (c.json) {
      for (const auto& r : rows) j[to_string(m)].push_back({{"level", r.level}, {"h", r.h}, {"w", r.w}, {"c", r.c}});
      continue;
    }
    std::printf("%s\n", to_string(m).c_str());
    for (const auto& r : rows) std::printf("  level %zu  %zux%zu  c=%zu\n", r.level, r.h, r.w, r.c);
  }
  if (c.json) std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gen_data(const Common& c, const std::string& out) {
  const RunConfig rc = c.run_config();
  SyntheticSpec spec = rc.data;
  const auto train = generate_dataset(spec, rc.train_images);
  spec.seed = rc.data.seed + 1;
  const auto test = generate_dataset(spec, rc.test_images);
  save_dataset(fs::path(out) / "train", train);
  save_dataset(fs::path(out) / "test", test);
  json j;
  for (const auto& [name, ds] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    const auto s = dataset_stats(ds->annotations);
    j[name] = {{"images", ds->annotations.images.size()},
               {"objects", s.total},
               {"small", s.buckets[0]},
               {"medium", s.buckets[1]},
               {"large", s.buckets[2]},
               {"per_class", s.per_class}};
  }
  if (c.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    for (const char* name : {"train", "test"}) {
      std::printf("%s: %zu images, %zu objects (small %zu, medium %zu, large %zu)\n", name,
                  j[name]["images"].get<std::size_t>(), j[name]["objects"].get<std::size_t>(),
                  j[name]["small"].get<std::size_t>(), j[name]["medium"].get<std::size_t>(),
                  j[name]["large"].get<std::size_t>());
    }
  }
  return 0;
}

template <typename T>
int train_with(const Common& c, const RunConfig& rc, const std::string& data, const std::string& out,
               const std::string& log_path) {
  const Dataset ds = load_dataset(data);
  Detector<T> model(rc.model);
  Trainer<T> trainer(model, ds, rc.train);
  trainer.run([&](const LogRow& r) {
    if (!c.json && (r.step % 100 == 0 || r.step + 1 == rc.train.steps)) {
      std::fprintf(stderr, "step %zu  lr %g  loss %.4f  (loc %.2f conf %.2f pos %zu)\n", r.step, r.lr, r.total,
                   r.loc, r.conf, r.positives);
    }
  });
  {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out, std::ios::binary);
    if (!f) throw DataError("cannot write " + out);
    save_checkpoint(f, model);
  }
  if (!log_path.empty()) write_file(log_path, log_csv(trainer.log()));
  const auto& log = trainer.log();
  json j{{"steps", log.size()}, {"checkpoint", out}};
  if (!log.empty()) {
    j["initial_loss"] = log.front().total;
    j["final_loss"] = log.back().total;
  }
  if (c.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("trained %zu steps -> %s\n", log.size(), out.c_str());
    if (!log.empty()) std::printf("loss %.4f -> %.4f\n", log.front().total, log.back().total);
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& out, const std::string& log) {
  const RunConfig rc = c.run_config();
  return rc.precision == Precision::Double ? train_with<double>(c, rc, data, out, log)
                                           : train_with<float>(c, rc, data, out, log);
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data,
             const std::string& detections_in, const std::string& detections_out, const std::string& pr_csv,
             const std::string& report_out) {
  const RunConfig rc = c.run_config();
  std::vector<Detection> dets;
  AnnotationSet ann;
  if (!detections_in.empty()) {
    ann = load_annotations(data);
    dets = load_detections(detections_in, ann.class_names);
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --detections");
    const Dataset ds = load_dataset(data);
    std::ifstream f(checkpoint, std::ios::binary);
    if (!f) throw DataError("cannot open " + checkpoint);
    if (rc.precision == Precision::Double) {
      dets = detect_dataset(*load_checkpoint<double>(f), ds, rc.eval);
    } else {
      dets = detect_dataset(*load_checkpoint<float>(f), ds, rc.eval);
    }
    ann = ds.annotations;
  }
  const EvalReport report = evaluate(dets, ann, rc.eval);
  if (!detections_out.empty()) {
    std::ostringstream os;
    write_detections(os, dets, ann.class_names);
    write_file(detections_out, os.str());
  }
  if (!pr_csv.empty()) write_file(pr_csv, export_pr_csv(pr_curves(dets, ann, rc.eval.iou_threshold), !rc.eval.raw_precision));
  const std::string text = c.json ? report_json(report).dump(2) + "\n" : report_text(report);
  if (!report_out.empty()) write_file(report_out, text);
  std::cout << text;
  return 0;
}

int cmd_pr_export(const Common& c, const std::string& data, const std::string& detections, const std::string& out) {
  const RunConfig rc = c.run_config();
  const AnnotationSet ann = load_annotations(data);
  const auto dets = load_detections(detections, ann.class_names);
  const std::string csv = export_pr_csv(pr_curves(dets, ann, rc.eval.iou_threshold), !rc.eval.raw_precision);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_file(out, csv);
  }
  return 0;
}

int exit_code(const Error& e) {
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rssd: single-shot detector with rainbow feature fusion"};
  app.require_subcommand(1);
  Common common;
  std::string data, out, log, checkpoint, dets_in, dets_out, pr_csv, report_out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key = value config file");
    sub->add_flag("--json", common.json, "machine-readable output");
    sub->allow_extras();
  };
  auto* boxes = app.add_subcommand("boxes", "default boxes per level and total");
  auto* shapes = app.add_subcommand("shapes", "fused pyramid shapes for every fusion mode");
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/ and test/ datasets");
  gen->add_option("--out", out, "output directory")->required();
  auto* train = app.add_subcommand("train", "train a detector");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_option("--log", log, "per-step CSV log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a detections file");
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint path");
  eval->add_option("--detections", dets_in, "evaluate this detections file instead of a model");
  eval->add_option("--detections-out", dets_out, "write detections here");
  eval->add_option("--pr-csv", pr_csv, "write the recall/precision curve here");
  eval->add_option("--report", report_out, "write the report here");
  auto* pr = app.add_subcommand("pr-export", "recall/precision CSV from a detections file");
  pr->add_option("--data", data, "dataset directory (annotations)")->required();
  pr->add_option("--detections", dets_in, "detections file")->required();
  pr->add_option("--out", out, "CSV path (stdout if omitted)");
  for (auto* sub : {boxes, shapes, gen, train, eval, pr}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[usage]: %s\n", e.what());
    return 2;
  }
  try {
    for (auto* sub : app.get_subcommands()) common.extras = sub->remaining();
    if (boxes->parsed()) return cmd_boxes(common);
    if (shapes->parsed()) return cmd_shapes(common);
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (train->parsed()) return cmd_train(common, data, out, log);
    if (eval->parsed()) return cmd_eval(common, checkpoint, data, dets_in, dets_out, pr_csv, report_out);
    if (pr->parsed()) return cmd_pr_export(common, data, dets_in, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "error[%s]: %s\n", e.kind(), msg.c_str());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
