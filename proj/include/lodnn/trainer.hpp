// Training orchestration: dataset splits, on-the-fly 42-fold augmentation,
// batching, the cross-entropy objective with Adam, plateau-based learning
// rate halving, validation-MaxF checkpoint selection, and inference.
#ifndef LODNN_TRAINER_HPP
#define LODNN_TRAINER_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/adam.hpp"
#include "lodnn/annotation.hpp"
#include "lodnn/autodiff.hpp"
#include "lodnn/evaluator.hpp"
#include "lodnn/model.hpp"
#include "lodnn/point_cloud.hpp"
#include "lodnn/rasterizer.hpp"

namespace lodnn {

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------

struct SplitManifest {
  struct CategorySplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
  };
  std::map<std::string, CategorySplit> categories;

  std::vector<std::string> all_train() const {
    std::vector<std::string> ids;
    for (const auto& [cat, s] : categories) ids.insert(ids.end(), s.train.begin(), s.train.end());
    return ids;
  }
  std::vector<std::string> all_validation() const {
    std::vector<std::string> ids;
    for (const auto& [cat, s] : categories)
      ids.insert(ids.end(), s.validation.begin(), s.validation.end());
    return ids;
  }
};

// Deterministic seeded selection of 10 validation ids per category; the
// remainder trains.
inline SplitManifest make_splits(const std::map<std::string, std::vector<std::string>>& ids,
                                 std::uint64_t seed) {
  constexpr std::size_t kValidationPerCategory = 10;
  SplitManifest m;
  for (const auto& [cat, list] : ids) {
    if (list.size() < kValidationPerCategory)
      throw ConfigError("category " + cat + " has only " + std::to_string(list.size()) +
                        " examples; need at least " + std::to_string(kValidationPerCategory));
    std::vector<std::string> sorted = list;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> order(sorted.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SequentialRng rng(counter_hash(seed, 0x5E11, std::hash<std::string>{}(cat)));
    shuffle_in_place(order, rng);
    std::vector<bool> is_val(sorted.size(), false);
    for (std::size_t i = 0; i < kValidationPerCategory; ++i) is_val[order[i]] = true;
    SplitManifest::CategorySplit split;
    for (std::size_t i = 0; i < sorted.size(); ++i)
      (is_val[i] ? split.validation : split.train).push_back(sorted[i]);
    m.categories[cat] = std::move(split);
  }
  return m;
}

inline void save_manifest(const std::string& path, const SplitManifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "category,split,id\n";
  for (const auto& [cat, s] : m.categories) {
    for (const auto& id : s.train) os << cat << ",train," << id << "\n";
    for (const auto& id : s.validation) os << cat << ",validation," << id << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

inline SplitManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  SplitManifest m;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == "category,split,id") continue;
    }
    std::istringstream ls(line);
    std::string cat, split, id;
    if (!std::getline(ls, cat, ',') || !std::getline(ls, split, ',') || !std::getline(ls, id))
      throw FormatError("malformed manifest line: " + line);
    if (split == "train")
      m.categories[cat].train.push_back(id);
    else if (split == "validation")
      m.categories[cat].validation.push_back(id);
    else
      throw FormatError("unknown split '" + split + "' in manifest " + path);
  }
  for (const auto& [cat, s] : m.categories)
    for (const auto& id : s.train)
      if (std::find(s.validation.begin(), s.validation.end(), id) != s.validation.end())
        throw FormatError("manifest " + path + ": id " + id + " appears in both splits");
  return m;
}

// ---------------------------------------------------------------------------
// Training configuration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 4;
  double initial_lr = 0.01;
  double lr_decay_factor = 2.0;  // halved on plateau (no val-MaxF improvement)
  int max_epochs = 20;
  int patience = 0;              // early stop after this many non-improving epochs; 0 = off
  std::uint64_t seed = 0;
  bool augment = true;           // 42-fold rotation/mirror augmentation
  bool use_exact_gt = true;      // prefer geometry ground truth for validation
  double target_train_maxf = 0.0;  // stop early once both targets are met; 0 = off
  double target_val_maxf = 0.0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(initial_lr > 0.0)) throw ConfigError("train: initial_lr must be positive");
    if (!(lr_decay_factor > 1.0)) throw ConfigError("train: lr_decay_factor must exceed 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  }
};

// One epoch's visiting order over (example, variant). With augmentation the
// epoch is a seeded permutation of the full 42-fold variant set.
struct ScheduleEntry {
  int example = 0;
  int variant = 0;  // index into augmentation_variants(); 20 = identity
};

inline std::vector<ScheduleEntry> epoch_schedule(int n_examples, bool augment, std::uint64_t seed,
                                                 int epoch) {
  std::vector<ScheduleEntry> entries;
  const int n_variants = augment ? static_cast<int>(augmentation_variants().size()) : 1;
  const int identity = augment ? 20 : -1;  // (angle 0, unmirrored) sits at index 20
  entries.reserve(static_cast<std::size_t>(n_examples) * n_variants);
  for (int e = 0; e < n_examples; ++e)
    for (int v = 0; v < n_variants; ++v)
      entries.push_back({e, augment ? v : identity});
  SequentialRng rng(counter_hash(seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
  shuffle_in_place(entries, rng);
  return entries;
}

// ---------------------------------------------------------------------------
// Example storage: velodyne/<id>.bin + labels/<id>.labels
// (+ gt_topview/<id>.png when exact geometry truth exists).
// ---------------------------------------------------------------------------

struct LabeledExample {
  std::string id;
  PointCloud cloud;  // labeled
  std::optional<TopViewLabel> exact_gt;
};

inline LabeledExample load_example(const std::string& data_root, const std::string& id,
                                   bool want_exact_gt) {
  namespace fs = std::filesystem;
  LabeledExample ex;
  ex.id = id;
  const std::string bin = data_root + "/velodyne/" + id + ".bin";
  const std::string lab = data_root + "/labels/" + id + ".labels";
  if (!fs::exists(bin)) throw DataError("missing example file: " + bin);
  if (!fs::exists(lab)) throw DataError("missing example file: " + lab);
  ex.cloud = load_velodyne_bin(bin);
  ex.cloud.labels = load_point_labels(lab, ex.cloud.size());
  if (want_exact_gt) {
    const std::string gt = data_root + "/gt_topview/" + id + ".png";
    if (fs::exists(gt)) ex.exact_gt = load_topview_label(gt);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_maxf = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_maxf = 0.0;
  int best_epoch = 0;
  double final_train_maxf = -1.0;  // only when targets are set
  std::string checkpoint_path;
};

inline std::string format_train_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_maxf,lr\n";
  for (const EpochLog& e : log) {
    os << e.epoch << "," << std::fixed << std::setprecision(6) << e.train_loss << ","
       << std::setprecision(6) << e.val_maxf << "," << std::setprecision(8) << e.lr << "\n";
  }
  return os.str();
}

namespace train_detail {

// Ground-truth grid for a (possibly rotated/mirrored) labeled cloud: sector
// densification first, then per-cell majority. The features always come from
// the raw cloud; only labels go through densification.
inline TopViewLabel training_truth(const PointCloud& labeled, const GridSpec& grid) {
  return labels_to_topview(densify_sectors(labeled), grid);
}

// Feature stack for the configured input width: the six-statistic stack, or
// the single-channel occupancy variant.
inline Tensorf features_for(const PointCloud& cloud, const GridSpec& grid,
                            const NormalizationSpec& norm, int channels) {
  if (channels == 6) return rasterize(cloud, grid, norm);
  if (channels == 1) return rasterize_occupancy(cloud, grid);
  throw ConfigError("unsupported input channel count " + std::to_string(channels) +
                    " (expected 6 or 1)");
}

struct Batch {
  TensorPtr<float> input;
  std::vector<std::uint8_t> labels;
};

inline Batch assemble_batch(const std::vector<LabeledExample>& examples,
                            const std::vector<ScheduleEntry>& entries, std::size_t begin,
                            std::size_t end, const GridSpec& grid, const NormalizationSpec& norm,
                            int channels) {
  const auto& variants = augmentation_variants();
  const int H = grid.height_px(), W = grid.width_px();
  const int B = static_cast<int>(end - begin);
  Batch batch;
  batch.input = make_tensor<float>(B, channels, H, W);
  batch.labels.assign(static_cast<std::size_t>(B) * H * W,
                      static_cast<std::uint8_t>(Label::Unknown));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t k = begin; k < end; ++k) {
    const ScheduleEntry& entry = entries[k];
    const LabeledExample& ex = examples[static_cast<std::size_t>(entry.example)];
    PointCloud variant = entry.variant < 0
                             ? ex.cloud
                             : apply_variant(ex.cloud, variants[static_cast<std::size_t>(entry.variant)]);
    const Tensorf features = features_for(variant, grid, norm, channels);
    const TopViewLabel truth = training_truth(variant, grid);
    const int b = static_cast<int>(k - begin);
    std::copy(features.data.begin(), features.data.end(),
              batch.input->data.begin() + static_cast<std::size_t>(b) * channels * plane);
    for (std::size_t i = 0; i < plane; ++i)
      batch.labels[static_cast<std::size_t>(b) * plane + i] =
          static_cast<std::uint8_t>(truth.cells[i]);
  }
  return batch;
}

inline double evaluate_maxf(const LoDNN<float>& net, const std::vector<LabeledExample>& examples,
                            const GridSpec& grid, const NormalizationSpec& norm,
                            bool use_exact_gt) {
  std::vector<Tensorf> confs;
  std::vector<TopViewLabel> truths;
  confs.reserve(examples.size());
  truths.reserve(examples.size());
  for (const LabeledExample& ex : examples) {
    const int channels = net.config().input_channels;
    auto input = make_tensor<float>(1, channels, grid.height_px(), grid.width_px());
    const Tensorf features = features_for(ex.cloud, grid, norm, channels);
    input->data = features.data;
    auto probs = net.forward(nullptr, input, /*training=*/false);
    confs.push_back(net.confidence_map(probs));
    if (use_exact_gt && ex.exact_gt)
      truths.push_back(*ex.exact_gt);
    else
      truths.push_back(training_truth(ex.cloud, grid));
  }
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < confs.size(); ++i) pairs.push_back({&confs[i], &truths[i]});
  return sweep(pairs).max_f;
}

}  // namespace train_detail

inline TrainResult train(const SplitManifest& manifest, const TrainConfig& tc,
                         const ModelConfig& mc, const GridSpec& grid,
                         const NormalizationSpec& norm, const std::string& data_root,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  tc.validate();
  mc.validate();
  grid.validate();
  fs::create_directories(out_dir);

  std::vector<LabeledExample> train_examples, val_examples;
  for (const std::string& id : manifest.all_train())
    train_examples.push_back(load_example(data_root, id, tc.use_exact_gt));
  for (const std::string& id : manifest.all_validation())
    val_examples.push_back(load_example(data_root, id, tc.use_exact_gt));
  if (train_examples.empty()) throw ConfigError("training split is empty");
  if (val_examples.empty()) throw ConfigError("validation split is empty");

  auto net = LoDNN<float>::build(mc, counter_hash(tc.seed, 0x1217));
  auto adam_state = nn::AdamState<float>::init(net.parameters());
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = tc.initial_lr;

  TrainResult result;
  int decay_count = 0;
  double prev_val_maxf = -1.0;
  int epochs_without_improvement = 0;
  std::vector<nn::Parameter<float>> best_params;
  nn::AdamState<float> best_adam;
  float best_lr = static_cast<float>(tc.initial_lr);
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto schedule =
        epoch_schedule(static_cast<int>(train_examples.size()), tc.augment, tc.seed, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < schedule.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(schedule.size(), begin + tc.batch_size);
      auto batch = train_detail::assemble_batch(train_examples, schedule, begin, end, grid, norm,
                                                mc.input_channels);
      nn::Tape<float> tape;
      auto probs = net.forward(&tape, batch.input, /*training=*/true,
                               counter_hash(tc.seed, 0xD20), step);
      auto loss = nn::cross_entropy(&tape, probs, batch.labels);
      const double loss_value = static_cast<double>(loss->data[0]);
      if (!std::isfinite(loss_value))
        throw DataError("non-finite loss at step " + std::to_string(step));
      nn::zero_gradients(net.parameters());
      tape.backward(loss);
      adam_cfg.lr = tc.initial_lr / std::pow(tc.lr_decay_factor, decay_count);
      nn::adam_step(net.parameters(), adam_state, adam_cfg);
      loss_sum += loss_value;
      ++batches;
      ++step;
    }
    const double train_loss = batches > 0 ? loss_sum / batches : 0.0;
    const double val_maxf =
        train_detail::evaluate_maxf(net, val_examples, grid, norm, tc.use_exact_gt);
    result.log.push_back({epoch, train_loss, val_maxf,
                          tc.initial_lr / std::pow(tc.lr_decay_factor, decay_count)});

    if (val_maxf > result.best_val_maxf || best_params.empty()) {
      result.best_val_maxf = val_maxf;
      result.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : net.parameters()) {
        auto copy = make_tensor<float>(p.value->n, p.value->c, p.value->h, p.value->w);
        copy->data = p.value->data;
        best_params.push_back({p.name, copy});
      }
      best_adam = adam_state;
      best_lr = static_cast<float>(tc.initial_lr / std::pow(tc.lr_decay_factor, decay_count));
    }

    // plateau rule: halve the learning rate when validation MaxF did not
    // strictly improve over the previous epoch
    if (prev_val_maxf >= 0.0 && !(val_maxf > prev_val_maxf)) {
      ++decay_count;
      ++epochs_without_improvement;
    } else {
      epochs_without_improvement = 0;
    }
    prev_val_maxf = val_maxf;

    if (tc.patience > 0 && epochs_without_improvement >= tc.patience) break;
    if (tc.target_train_maxf > 0.0 && val_maxf >= tc.target_val_maxf) {
      const double train_maxf =
          train_detail::evaluate_maxf(net, train_examples, grid, norm, tc.use_exact_gt);
      result.final_train_maxf = train_maxf;
      if (train_maxf >= tc.target_train_maxf) break;
    }
  }

  result.checkpoint_path = out_dir + "/checkpoint.ldnn";
  nn::save_checkpoint(result.checkpoint_path, best_params, &best_adam, best_lr);
  std::ofstream log_os(out_dir + "/train_log.csv");
  if (!log_os) throw IoError("cannot write training log");
  log_os << format_train_log(result.log);
  return result;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

struct InferenceResult {
  Tensorf confidence;
  double milliseconds = 0.0;
};

inline InferenceResult infer(const LoDNN<float>& net, const PointCloud& cloud,
                             const GridSpec& grid, const NormalizationSpec& norm = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const int channels = net.config().input_channels;
  const Tensorf features = train_detail::features_for(cloud, grid, norm, channels);
  auto input = make_tensor<float>(1, channels, grid.height_px(), grid.width_px());
  input->data = features.data;
  auto probs = net.forward(nullptr, input, /*training=*/false);
  InferenceResult r;
  r.confidence = net.confidence_map(probs);
  r.milliseconds =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace lodnn

#endif  // LODNN_TRAINER_HPP
