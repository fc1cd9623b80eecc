// lodnn: command-line entry point for the LIDAR road-detection pipeline.
//
// Subcommands: synth, rasterize, annotate, train, infer, eval, roi-study,
// compare-mappings, rf-table. Every run prints its resolved configuration;
// all randomness flows from --seed, so reruns are byte-identical except for
// wall-clock diagnostics (which never land in artifact files).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lodnn/lodnn.hpp"

namespace fs = std::filesystem;
using namespace lodnn;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
};

PipelineConfig resolve_config(const GlobalArgs& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) load_config_file(cfg, g.config_path);
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + kv + "' is not of the form key=value");
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_given) cfg.train.seed = g.seed;
  set_num_threads(g.threads);
  cfg.validate();
  std::cout << "# resolved configuration\n" << dump_config(cfg) << std::flush;
  return cfg;
}

std::vector<std::string> ids_with_extension(const std::string& dir, const std::string& ext) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    if (p.extension() == ext) ids.push_back(p.stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no *" + ext + " files in " + dir);
  return ids;
}

std::string default_data_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("LODNN_DATA_ROOT")) return env;
  throw ConfigError("no data root given (use --data or LODNN_DATA_ROOT)");
}

// ---------------------------------------------------------------------------

int cmd_rf_table(const GlobalArgs& g) {
  const PipelineConfig cfg = resolve_config(g);
  std::cout << context_module_table(cfg.model);
  return 0;
}

int cmd_synth(const GlobalArgs& g, const std::string& out_dir, int count, int val_count) {
  PipelineConfig cfg = resolve_config(g);
  if (count <= 0) count = cfg.synth.count;
  if (count < 2 || val_count < 1 || val_count >= count)
    throw ConfigError("synth: need count >= 2 and 0 < val_count < count");
  fs::create_directories(out_dir + "/velodyne");
  fs::create_directories(out_dir + "/labels");
  fs::create_directories(out_dir + "/calib");
  fs::create_directories(out_dir + "/gt_perspective");
  fs::create_directories(out_dir + "/gt_topview");

  SplitManifest manifest;
  for (int i = 0; i < count; ++i) {
    const SceneSpec spec = random_scene(cfg.train.seed, i);
    const SynthScene scene = generate(spec, cfg.grid);
    char name[32];
    std::snprintf(name, sizeof(name), "scene%04d", i);
    const std::string id(name);
    save_velodyne_bin(out_dir + "/velodyne/" + id + ".bin", scene.cloud);
    save_point_labels(out_dir + "/labels/" + id + ".labels", *scene.cloud.labels);
    save_synth_calibration(out_dir + "/calib/" + id + ".txt", spec.camera);
    save_gt_image(out_dir + "/gt_perspective/" + id + ".png", scene.annotation);
    save_topview_label(out_dir + "/gt_topview/" + id + ".png", scene.exact_truth);
    auto& split = manifest.categories["synth"];
    (i < count - val_count ? split.train : split.validation).push_back(id);
    std::cout << id << ": " << scene.cloud.size() << " points\n";
  }
  save_manifest(out_dir + "/manifest.csv", manifest);
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_rasterize(const GlobalArgs& g, const std::string& input, const std::string& output,
                  bool occupancy, const std::string& png_dir) {
  const PipelineConfig cfg = resolve_config(g);
  LoadStats stats;
  const PointCloud cloud = load_velodyne_bin(input, &stats);
  if (stats.clamped_reflectivity > 0)
    std::cerr << "warning: clamped " << stats.clamped_reflectivity
              << " out-of-range reflectivity values\n";
  const Tensorf tensor =
      occupancy ? rasterize_occupancy(cloud, cfg.grid) : rasterize(cloud, cfg.grid, cfg.norm);
  const std::vector<std::string> names =
      occupancy ? std::vector<std::string>{"occupancy"} : topview_channel_names();
  write_tvt(output, tensor, names);
  if (!png_dir.empty()) {
    fs::create_directories(png_dir);
    for (int c = 0; c < tensor.c; ++c)
      export_channel_png(tensor, c, png_dir + "/" + names[static_cast<std::size_t>(c)] + ".png");
  }
  std::cout << "rasterized " << cloud.size() << " points -> " << tensor.shape_str() << " ("
            << output << ")\n";
  return 0;
}

int cmd_annotate(const GlobalArgs& g, const std::string& cloud_path, const std::string& calib_path,
                 const std::string& gt_path, const std::string& output,
                 const std::string& method, const std::string& labels_out, double ground_height) {
  const PipelineConfig cfg = resolve_config(g);
  const PerspectiveAnnotation ann = load_gt_image(gt_path);
  const CameraCalibration calib =
      load_kitti_calibration(calib_path, ann.width, ann.height);
  TopViewLabel grid_labels;
  if (method == "pcp") {
    const PointCloud cloud = load_velodyne_bin(cloud_path);
    const PointCloud dense = densify_sectors(cloud);
    ProjectionStats stats;
    const PointCloud labeled = project_points(dense, calib, ann, &stats);
    grid_labels = labels_to_topview(labeled, cfg.grid);
    std::cout << "projected " << dense.size() << " points (behind camera: " << stats.behind_camera
              << ", off image: " << stats.outside_image << ", invalid: " << stats.invalid_pixel
              << ", degenerate: " << stats.degenerate << ")\n";
    if (!labels_out.empty()) {
      std::vector<Label> original(labeled.labels->begin(),
                                  labeled.labels->begin() + static_cast<long>(cloud.size()));
      save_point_labels(labels_out, original);
    }
  } else if (method == "ipm") {
    grid_labels = ipm_topview(ann, calib, cfg.grid, ground_height);
  } else {
    throw ConfigError("annotate: method must be pcp or ipm, got '" + method + "'");
  }
  save_topview_label(output, grid_labels);
  std::cout << "wrote " << output << "\n";
  return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data_flag, const std::string& manifest_path,
              const std::string& out_dir) {
  PipelineConfig cfg = resolve_config(g);
  const std::string data_root = default_data_root(data_flag);
  const std::string manifest_file =
      manifest_path.empty() ? data_root + "/manifest.csv" : manifest_path;
  const SplitManifest manifest = load_manifest(manifest_file);
  const TrainResult result =
      train(manifest, cfg.train, cfg.model, cfg.grid, cfg.norm, data_root, out_dir);
  save_config(result.checkpoint_path + ".meta", cfg);
  std::cout << format_train_log(result.log);
  std::cout << "best validation MaxF " << 100.0 * result.best_val_maxf << "% at epoch "
            << result.best_epoch << "; checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

LoDNN<float> model_from_checkpoint(const std::string& checkpoint_path, PipelineConfig* cfg_out) {
  PipelineConfig cfg = load_config(checkpoint_path + ".meta");
  auto net = LoDNN<float>::build(cfg.model, 0);
  const nn::Checkpoint ck = nn::load_checkpoint(checkpoint_path);
  net.load_parameters(ck.params);
  if (cfg_out) *cfg_out = cfg;
  return net;
}

int cmd_infer(const GlobalArgs& g, const std::string& checkpoint, const std::string& input,
              const std::string& output, const std::string& png, const std::string& overlay) {
  resolve_config(g);
  PipelineConfig cfg;
  const LoDNN<float> net = model_from_checkpoint(checkpoint, &cfg);
  const PointCloud cloud = load_velodyne_bin(input);
  const InferenceResult r = infer(net, cloud, cfg.grid, cfg.norm);
  write_tvt(output, r.confidence, {"road_confidence"});
  if (!png.empty()) export_channel_png(r.confidence, 0, png);
  if (!overlay.empty()) write_confidence_overlay(overlay, r.confidence);
  std::cout << "inference time: " << r.milliseconds << " ms\n";
  std::cout << "wrote " << output << "\n";
  return 0;
}

struct LoadedEvalSet {
  std::vector<Tensorf> confs;
  std::vector<TopViewLabel> truths;
  std::vector<std::string> ids;
};

LoadedEvalSet load_eval_set(const std::string& pred_dir, const std::string& truth_dir) {
  LoadedEvalSet set;
  set.ids = ids_with_extension(pred_dir, ".tvt");
  for (const std::string& id : set.ids) {
    set.confs.push_back(read_tvt(pred_dir + "/" + id + ".tvt"));
    const std::string truth_path = truth_dir + "/" + id + ".png";
    if (!fs::exists(truth_path)) throw DataError("missing truth for id " + id + ": " + truth_path);
    set.truths.push_back(load_topview_label(truth_path));
  }
  return set;
}

int cmd_eval(const GlobalArgs& g, const std::string& pred_dir, const std::string& truth_dir,
             const std::string& output, const std::string& pr_path, double x_upper) {
  const PipelineConfig cfg = resolve_config(g);
  const LoadedEvalSet set = load_eval_set(pred_dir, truth_dir);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < set.confs.size(); ++i)
    pairs.push_back({&set.confs[i], &set.truths[i]});
  const int eval_rows = x_upper > 0.0 ? cfg.grid.rows_within_x_upper(x_upper) : -1;
  const ThresholdSweep s = sweep(pairs, cfg.eval.tau_grid_cap, eval_rows);
  std::ofstream os(output);
  if (!os) throw IoError("cannot open for writing: " + output);
  os << metrics_csv_header() << "\n" << metrics_csv_row(s) << "\n";
  if (!pr_path.empty()) write_pr_curve(pr_path, s);
  std::cout << metrics_csv_header() << "\n" << metrics_csv_row(s) << "\n";
  std::cout << "evaluated " << set.ids.size() << " examples; excluded " << s.unknown_excluded
            << " unknown pixels\n";
  return 0;
}

int cmd_roi_study(const GlobalArgs& g, const std::string& pred_dir, const std::string& truth_dir,
                  const std::string& output) {
  const PipelineConfig cfg = resolve_config(g);
  const LoadedEvalSet set = load_eval_set(pred_dir, truth_dir);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < set.confs.size(); ++i)
    pairs.push_back({&set.confs[i], &set.truths[i]});
  const auto rows = roi_study(pairs, cfg.grid, cfg.eval.roi_bounds, cfg.eval.tau_grid_cap);
  const std::string csv = roi_csv(rows);
  std::ofstream os(output);
  if (!os) throw IoError("cannot open for writing: " + output);
  os << csv;
  std::cout << csv;
  return 0;
}

int cmd_compare_mappings(const GlobalArgs& g, const std::string& pred_dir,
                         const std::string& pcp_dir, const std::string& ipm_dir,
                         const std::string& output, const std::string& split_name) {
  const PipelineConfig cfg = resolve_config(g);
  const std::vector<std::string> ids = ids_with_extension(pred_dir, ".tvt");
  std::vector<Tensorf> confs;
  std::vector<TopViewLabel> pcp, ipm;
  for (const std::string& id : ids) {
    confs.push_back(read_tvt(pred_dir + "/" + id + ".tvt"));
    const std::string p = pcp_dir + "/" + id + ".png";
    const std::string q = ipm_dir + "/" + id + ".png";
    if (!fs::exists(p) || !fs::exists(q))
      throw ConfigError("compare-mappings: id " + id + " missing from a truth set");
    pcp.push_back(load_topview_label(p));
    ipm.push_back(load_topview_label(q));
  }
  std::vector<const Tensorf*> cp;
  std::vector<const TopViewLabel*> pp, ip;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    cp.push_back(&confs[i]);
    pp.push_back(&pcp[i]);
    ip.push_back(&ipm[i]);
  }
  const MappingComparison cmp = compare_mappings(cp, pp, ip, cfg.eval.tau_grid_cap);
  const std::string csv = mapping_comparison_csv(cmp, split_name);
  std::ofstream os(output);
  if (!os) throw IoError("cannot open for writing: " + output);
  os << csv;
  std::cout << csv;
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::cout << ids[i] << ": " << cmp.disagreement[i] << " disagreeing cells\n";
  std::cout << "total disagreement: " << cmp.total_disagreement << " cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LIDAR-only top-view road detection pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "key=value configuration file");
  app.add_option("--set", g.overrides, "configuration override key=value (repeatable)");
  auto* seed_opt = app.add_option("--seed", g.seed, "seed controlling all randomness");
  app.add_option("--threads", g.threads, "worker threads (default 1 for bit-reproducibility)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes with exact ground truth");
  std::string synth_out;
  int synth_count = 0, synth_val = 4;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of scenes (default from config)");
  synth->add_option("--val-count", synth_val, "scenes reserved for validation");

  // rasterize
  auto* rast = app.add_subcommand("rasterize", "point cloud -> top-view tensor file");
  std::string rast_in, rast_out, rast_png;
  bool rast_occ = false;
  rast->add_option("--input", rast_in, "Velodyne .bin file")->required();
  rast->add_option("--output", rast_out, "output .tvt file")->required();
  rast->add_flag("--occupancy", rast_occ, "single-channel occupancy variant");
  rast->add_option("--png-dir", rast_png, "also export per-channel grayscale PNGs");

  // annotate
  auto* ann = app.add_subcommand("annotate", "perspective ground truth -> top-view labels");
  std::string ann_cloud, ann_calib, ann_gt, ann_out, ann_method = "pcp", ann_labels;
  double ann_ground = -1.73;
  ann->add_option("--cloud", ann_cloud, "Velodyne .bin file (pcp method)");
  ann->add_option("--calib", ann_calib, "calibration text file")->required();
  ann->add_option("--gt", ann_gt, "perspective ground-truth PNG")->required();
  ann->add_option("--output", ann_out, "output top-view label PNG")->required();
  ann->add_option("--method", ann_method, "pcp (point-cloud projection) or ipm");
  ann->add_option("--labels-out", ann_labels, "also write per-point labels (pcp)");
  ann->add_option("--ground-height", ann_ground, "ground plane z for ipm (meters)");

  // train
  auto* tr = app.add_subcommand("train", "train the network on rasterized examples");
  std::string tr_data, tr_manifest, tr_out;
  tr->add_option("--data", tr_data, "data root (default LODNN_DATA_ROOT)");
  tr->add_option("--manifest", tr_manifest, "split manifest csv (default <data>/manifest.csv)");
  tr->add_option("--out", tr_out, "output directory")->required();

  // infer
  auto* inf = app.add_subcommand("infer", "run a checkpoint on a point cloud");
  std::string inf_ck, inf_in, inf_out, inf_png, inf_overlay;
  inf->add_option("--checkpoint", inf_ck, "checkpoint file")->required();
  inf->add_option("--input", inf_in, "Velodyne .bin file")->required();
  inf->add_option("--output", inf_out, "confidence .tvt output")->required();
  inf->add_option("--png", inf_png, "confidence grayscale PNG");
  inf->add_option("--overlay", inf_overlay, "blue-intensity overlay PNG");

  // eval
  auto* ev = app.add_subcommand("eval", "benchmark metrics for predictions vs truth");
  std::string ev_pred, ev_truth, ev_out, ev_pr;
  double ev_xupper = 0.0;
  ev->add_option("--pred", ev_pred, "directory of <id>.tvt confidence maps")->required();
  ev->add_option("--truth", ev_truth, "directory of <id>.png label grids")->required();
  ev->add_option("--output", ev_out, "metrics csv output")->required();
  ev->add_option("--pr", ev_pr, "precision-recall curve output");
  ev->add_option("--x-upper", ev_xupper, "restrict evaluation to x <= bound (meters)");

  // roi-study
  auto* roi = app.add_subcommand("roi-study", "metric sweep across x-upper bounds");
  std::string roi_pred, roi_truth, roi_out;
  roi->add_option("--pred", roi_pred, "directory of <id>.tvt confidence maps")->required();
  roi->add_option("--truth", roi_truth, "directory of <id>.png label grids")->required();
  roi->add_option("--output", roi_out, "csv output")->required();

  // compare-mappings
  auto* cmpc = app.add_subcommand("compare-mappings", "paired sweeps over two truth mappings");
  std::string cm_pred, cm_pcp, cm_ipm, cm_out, cm_split = "validation";
  cmpc->add_option("--pred", cm_pred, "directory of <id>.tvt confidence maps")->required();
  cmpc->add_option("--pcp", cm_pcp, "point-cloud-projection truth directory")->required();
  cmpc->add_option("--ipm", cm_ipm, "inverse-perspective-mapping truth directory")->required();
  cmpc->add_option("--output", cm_out, "csv output")->required();
  cmpc->add_option("--split", cm_split, "split name for the csv");

  // rf-table
  app.add_subcommand("rf-table", "print the context-module receptive-field table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  g.seed_given = seed_opt->count() > 0;

  try {
    if (app.got_subcommand("rf-table")) return cmd_rf_table(g);
    if (app.got_subcommand(synth)) return cmd_synth(g, synth_out, synth_count, synth_val);
    if (app.got_subcommand(rast)) return cmd_rasterize(g, rast_in, rast_out, rast_occ, rast_png);
    if (app.got_subcommand(ann))
      return cmd_annotate(g, ann_cloud, ann_calib, ann_gt, ann_out, ann_method, ann_labels,
                          ann_ground);
    if (app.got_subcommand(tr)) return cmd_train(g, tr_data, tr_manifest, tr_out);
    if (app.got_subcommand(inf)) return cmd_infer(g, inf_ck, inf_in, inf_out, inf_png, inf_overlay);
    if (app.got_subcommand(ev)) return cmd_eval(g, ev_pred, ev_truth, ev_out, ev_pr, ev_xupper);
    if (app.got_subcommand(roi)) return cmd_roi_study(g, roi_pred, roi_truth, roi_out);
    if (app.got_subcommand(cmpc))
      return cmd_compare_mappings(g, cm_pred, cm_pcp, cm_ipm, cm_out, cm_split);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
