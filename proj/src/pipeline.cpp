// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gradleak/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <type_traits>

#include "json.hpp"

#include "gradleak/checkpoint.hpp"
#include "gradleak/detection.hpp"
#include "gradleak/errors.hpp"
#include "gradleak/leakage.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing input " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

template <typename T>
void get_if(const json& j, const char* key, T& value) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned() && v.get<long long>() < 0) {
        throw ConfigError(std::string("'") + key + "' must be non-negative");
      }
    }
  }
  value = v.get<T>();
}

// --- config JSON ---------------------------------------------------------

json budget_json(const PgdBudget& b) {
  return {{"epsilon", b.epsilon}, {"step_size", b.step_size}, {"steps", b.steps}};
}

void budget_from(const json& j, PgdBudget& b) {
  get_if(j, "epsilon", b.epsilon);
  get_if(j, "step_size", b.step_size);
  get_if(j, "steps", b.steps);
}

json config_json(const ExperimentConfig& c, bool with_out_dir) {
  json j;
  j["seed"] = c.seed;
  if (with_out_dir) j["out_dir"] = c.out_dir.string();
  j["dataset"] = {{"family", c.dataset.family},
                  {"image_size", c.dataset.image_size},
                  {"classes", c.dataset.classes},
                  {"public_count", c.dataset.public_count},
                  {"private_count", c.dataset.private_count},
                  {"cifar_public", c.dataset.cifar_public},
                  {"cifar_private", c.dataset.cifar_private}};
  j["model"] = {{"ir_dim", c.model.ir_dim}, {"spab_width", c.model.spab_width}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"eval_count", c.pretrain.eval_count},
                   {"budget", budget_json(c.pretrain.budget)}};
  j["spab"] = {{"epochs", c.spab.epochs},
               {"lr", c.spab.lr},
               {"beta1", c.spab.beta1},
               {"beta2", c.spab.beta2},
               {"sigma", c.spab.sigma},
               {"batch_size", c.spab.batch_size},
               {"batches_per_epoch", c.spab.batches_per_epoch},
               {"probe_batch", c.probe_batch}};
  j["round"] = {{"batch_size", c.round.batch_size},
                {"dp", c.round.dp},
                {"epsilon", c.round.dp_config.epsilon},
                {"delta", c.round.dp_config.delta},
                {"clip", c.round.dp_config.clip}};
  const auto& m = c.reconstruct.ir_match;
  j["reconstruct"] = {{"iterations", m.iterations},
                      {"perturb_period", m.perturb_period},
                      {"seed_step", m.seed_step},
                      {"generator_step", m.generator_step},
                      {"alpha", m.alpha},
                      {"tv_weight", m.tv_weight},
                      {"restarts", m.restarts},
                      {"max_candidates", c.reconstruct.max_candidates}};
  j["preimage"] = {{"pairs", c.preimage.pairs},
                   {"budget", budget_json(c.preimage.budget)},
                   {"tv_weight", c.preimage.tv_weight}};
  j["evaluate"] = {{"sweep_seeds", c.evaluate.sweep_seeds},
                   {"batches_per_seed", c.evaluate.batches_per_seed}};
  return j;
}

// --- logging -------------------------------------------------------------

std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

void info(const std::string& message) { log_message(LogLevel::kInfo, message); }

// --- stage bookkeeping ---------------------------------------------------

struct StageContext {
  const ExperimentConfig& config;
  const RunOptions& options;
  fs::path out;

  fs::path path(const std::string& name) const { return out / name; }

  fs::path require(const std::string& name) const {
    const fs::path p = path(name);
    if (!fs::exists(p)) {
      throw MissingInputError("missing input " + p.string() + " (run the upstream stage first)");
    }
    return p;
  }
};

// Stamp text: config hash, stage extras and the bytes of every input.
std::string stamp_for(const StageContext& ctx, const std::string& stage,
                      const std::vector<fs::path>& inputs, const std::string& extra) {
  std::uint64_t h = fnv1a(ctx.config.hash());
  h = fnv1a(stage, h);
  h = fnv1a(extra, h);
  for (const auto& in : inputs) h = fnv1a(read_text(in), h);
  return hex64(h) + "\n";
}

// Runs `body` unless the stamp matches and every output exists.
bool run_once(const StageContext& ctx, const std::string& stage,
              const std::vector<fs::path>& inputs, const std::vector<std::string>& outputs,
              const std::string& extra, const std::function<void()>& body) {
  const std::string stamp = stamp_for(ctx, stage, inputs, extra);
  const fs::path stamp_path = ctx.out / "stamps" / (stage + ".stamp");
  bool fresh = fs::exists(stamp_path);
  if (fresh) {
    std::ifstream in(stamp_path);
    std::string existing((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fresh = existing == stamp;
  }
  for (const auto& o : outputs) fresh = fresh && fs::exists(ctx.path(o));
  if (fresh) {
    info(stage + ": up to date");
    return true;
  }
  fs::create_directories(ctx.out / "stamps");
  info(stage + ": running");
  body();
  write_text(stamp_path, stamp);
  return false;
}

std::string two_digits(std::size_t i) {
  std::ostringstream s;
  s << std::setw(2) << std::setfill('0') << i;
  return s.str();
}

Classifier load_classifier(const fs::path& path) {
  return classifier_from_checkpoint(read_checkpoint_file(path));
}

GeneratorSpec generator_spec(const ExperimentConfig& c) {
  GeneratorSpec g;
  g.channels = 3;
  g.height = c.dataset.image_size;
  g.width = c.dataset.image_size;
  return g;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

// --- stages --------------------------------------------------------------

void stage_pretrain(const StageContext& ctx) {
  const auto& c = ctx.config;
  run_once(ctx, "pretrain-at", {}, {"model_natural.glck", "model_robust.glck", "pretrain_history.csv"},
           "", [&] {
             const Dataset pub = load_public(c);
             const FeatureExtractorSpec spec =
                 FeatureExtractorSpec::desk_default(pub.channels, pub.height, pub.width, c.model.ir_dim);
             const Classifier init{FeatureExtractor(spec, derive_seed(c.seed, "extractor_init")),
                                   SpabHead::random(c.model.ir_dim, c.model.spab_width,
                                                    pub.num_classes, derive_seed(c.seed, "head_init"))};
             AdvTrainConfig at = c.pretrain;
             at.seed = derive_seed(c.seed, "pretrain");
             const AdvTrainResult natural = natural_train(init, pub, at);
             const AdvTrainResult robust = adversarial_train(init, pub, at);
             write_checkpoint_file(ctx.path("model_natural.glck"), to_checkpoint(natural.model));
             write_checkpoint_file(ctx.path("model_robust.glck"), to_checkpoint(robust.model));
             std::ostringstream csv;
             csv << "model,epoch,loss,natural_accuracy,robust_accuracy\n";
             for (const auto& [name, res] : {std::pair{"natural", &natural}, {"robust", &robust}}) {
               for (const auto& e : res->history) {
                 csv << name << ',' << e.epoch << ',' << fmt(e.loss) << ','
                     << fmt(e.natural_accuracy) << ',' << fmt(e.robust_accuracy) << '\n';
               }
             }
             write_text(ctx.path("pretrain_history.csv"), csv.str());
           });
}

void stage_spab(const StageContext& ctx) {
  const auto& c = ctx.config;
  const fs::path robust = ctx.require("model_robust.glck");
  run_once(ctx, "spab-train", {robust}, {"model_spab.glck", "training_curve.csv"}, "", [&] {
    Classifier model = load_classifier(robust);
    const Dataset pub = load_public(c);
    const Dataset priv = load_private(c);
    const ProbeBatch probe = make_probe(model.extractor, priv, std::min(c.probe_batch, priv.size()),
                                        derive_seed(c.seed, "probe"));
    SpabTrainConfig cfg = c.spab;
    cfg.seed = derive_seed(c.seed, "spab");
    const SpabHead init = SpabHead::random(c.model.ir_dim, c.model.spab_width, pub.num_classes,
                                           derive_seed(c.seed, "spab_head_init"));
    SpabTrainResult res = spab_train(model.extractor, init, pub, cfg, probe);
    model.head = res.head;
    write_checkpoint_file(ctx.path("model_spab.glck"), to_checkpoint(model));
    write_training_curve_csv(ctx.path("training_curve.csv"), res.trace);
  });
}

void stage_fed_round(const StageContext& ctx) {
  const auto& c = ctx.config;
  const fs::path spab = ctx.require("model_spab.glck");
  run_once(ctx, "fed-round", {spab}, {"update.glck", "batch.json"}, "", [&] {
    const Classifier model = load_classifier(spab);
    const Dataset priv = load_private(c);
    const ServerState server{model.extractor, model.head};
    Rng rng(derive_seed(c.seed, "round"));
    std::optional<DpConfig> dp;
    if (c.round.dp) {
      dp = c.round.dp_config;
      dp->seed = derive_seed(c.seed, "dp");
    }
    const RoundResult round = run_round_traced(server, priv, c.round.batch_size, rng, dp);
    write_checkpoint_file(ctx.path("update.glck"), to_checkpoint(round.update));
    fs::create_directories(ctx.path("batch"));
    for (std::size_t i = 0; i < round.batch.indices.size(); ++i) {
      write_ppm(ctx.path("batch") / ("img_" + two_digits(i) + ".ppm"),
                priv.image(round.batch.indices[i]));
    }
    json j;
    j["batch_size"] = round.batch.indices.size();
    j["dp"] = c.round.dp;
    j["indices"] = round.batch.indices;
    j["labels"] = round.batch.labels;
    j["update_norm"] = round.update.l2_norm();
    write_text(ctx.path("batch.json"), j.dump(2) + "\n");
  });
}

void stage_extract(const StageContext& ctx) {
  const fs::path update_path = ctx.require("update.glck");
  run_once(ctx, "extract", {update_path}, {"candidates.glck", "candidates.json"}, "", [&] {
    const GradientUpdate update = gradient_update_from_checkpoint(read_checkpoint_file(update_path));
    const auto raw = extract_candidate_irs(update);
    const auto deduped = dedupe_candidates(raw);
    write_checkpoint_file(ctx.path("candidates.glck"),
                          candidates_to_checkpoint(deduped, update.grad_w.dim(0)));
    json j;
    j["raw_candidates"] = raw.size();
    j["groups"] = deduped.size();
    json list = json::array();
    for (const auto& cand : deduped) {
      list.push_back({{"group", cand.group},
                      {"source_column", cand.source_column},
                      {"bias_gradient", cand.bias_gradient}});
    }
    j["candidates"] = list;
    write_text(ctx.path("candidates.json"), j.dump(2) + "\n");
  });
}

void stage_reconstruct(const StageContext& ctx) {
  const auto& c = ctx.config;
  const fs::path cand_path = ctx.require("candidates.glck");
  const fs::path robust = ctx.require("model_robust.glck");
  run_once(ctx, "reconstruct", {cand_path, robust},
           {"reconstructions.glck", "reconstruct.json"}, "", [&] {
             auto candidates = candidates_from_checkpoint(read_checkpoint_file(cand_path));
             if (candidates.size() > c.reconstruct.max_candidates) {
               candidates.resize(c.reconstruct.max_candidates);
             }
             const Classifier model = load_classifier(robust);
             std::vector<Tensor> targets;
             for (const auto& cand : candidates) {
               targets.emplace_back(Shape{cand.vector.size()}, cand.vector);
             }
             IrMatchConfig cfg = c.reconstruct.ir_match;
             cfg.seed = derive_seed(c.seed, "reconstruct");
             const auto results = ir_match_many(targets, model.extractor, generator_spec(c), cfg,
                                                ctx.options.jobs);
             ModelCheckpoint ckpt;
             ckpt.descriptor = "image_batch(" + std::to_string(results.size()) + ")";
             fs::create_directories(ctx.path("recon"));
             json list = json::array();
             for (std::size_t i = 0; i < results.size(); ++i) {
               ckpt.tensors.push_back({"recon." + two_digits(i), results[i].image});
               write_ppm(ctx.path("recon") / ("rec_" + two_digits(i) + ".ppm"), results[i].image);
               list.push_back({{"group", candidates[i].group},
                               {"best_loss", results[i].best_loss},
                               {"best_iteration", results[i].best_iteration},
                               {"initial_loss", results[i].initial_loss},
                               {"ir_distance", results[i].ir_distance}});
             }
             write_checkpoint_file(ctx.path("reconstructions.glck"), ckpt);
             write_text(ctx.path("reconstruct.json"), json{{"reconstructions", list}}.dump(2) + "\n");
           });
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void stage_preimage(const StageContext& ctx) {
  const auto& c = ctx.config;
  const fs::path natural = ctx.require("model_natural.glck");
  const fs::path robust = ctx.require("model_robust.glck");
  run_once(ctx, "preimage", {natural, robust}, {"preimage.csv", "preimage.json"}, "", [&] {
    const Classifier nat = load_classifier(natural);
    const Classifier rob = load_classifier(robust);
    const Dataset priv = load_private(c);
    Rng rng(derive_seed(c.seed, "preimage"));
    std::ostringstream csv;
    csv << "pair,extractor,initial_distance,final_distance,ratio\n";
    std::vector<double> nat_ratios, rob_ratios;
    for (std::size_t p = 0; p < c.preimage.pairs; ++p) {
      const Batch pair = sample_batch(priv, 2, rng);
      const Tensor x1 = priv.image(pair.indices[0]);
      const Tensor x2 = priv.image(pair.indices[1]);
      for (const auto& [name, model, ratios] :
           {std::tuple{"natural", &nat, &nat_ratios}, {"robust", &rob, &rob_ratios}}) {
        const PreimageResult r =
            preimage_attack(x1, x2, model->extractor, c.preimage.budget, c.preimage.tv_weight);
        ratios->push_back(r.ratio());
        csv << p << ',' << name << ',' << fmt(r.initial_distance) << ',' << fmt(r.final_distance)
            << ',' << fmt(r.ratio()) << '\n';
      }
    }
    write_text(ctx.path("preimage.csv"), csv.str());
    json j{{"pairs", c.preimage.pairs},
           {"median_ratio_natural", median(nat_ratios)},
           {"median_ratio_robust", median(rob_ratios)}};
    write_text(ctx.path("preimage.json"), j.dump(2) + "\n");
  });
}

bool stage_detect(const StageContext& ctx) {
  const fs::path target = ctx.options.checkpoint ? *ctx.options.checkpoint : ctx.require("model_spab.glck");
  if (!fs::exists(target)) throw MissingInputError("missing input " + target.string());
  run_once(ctx, "detect", {target}, {"detect.csv", "detect.json"}, "", [&] {
    const ScanOptions options;
    const ScanResult scan = scan_checkpoint(read_checkpoint_file(target), options);
    write_scan_csv(ctx.path("detect.csv"), scan);
    write_text(ctx.path("detect.json"), scan_verdict_json(scan, options) + "\n");
  });
  const json verdict = json::parse(read_text(ctx.path("detect.json")));
  return verdict.at("verdict") == "anomalous";
}

void write_sweep(const StageContext& ctx, const Classifier& model, const Dataset& priv) {
  const auto& c = ctx.config;
  std::ostringstream csv;
  csv << "batch_size,leakage_rate_mean,leakage_rate_std,samples\n";
  for (std::size_t b : ctx.options.sweep_batch_sizes) {
    if (b == 0 || b > priv.size()) throw ConfigError("sweep batch size out of range");
    std::vector<double> rates;
    for (std::size_t s = 0; s < c.evaluate.sweep_seeds; ++s) {
      Rng rng(derive_seed(derive_seed(c.seed, "sweep"), s));
      for (std::size_t k = 0; k < c.evaluate.batches_per_seed; ++k) {
        const Batch batch = sample_batch(priv, b, rng);
        const Tensor irs = model.extractor.forward(batch.images);
        rates.push_back(measure_leakage_rate(model.head, irs, batch.labels));
      }
    }
    const MeanStd ms = mean_std(rates);
    csv << b << ',' << fmt(ms.mean) << ',' << fmt(ms.stddev) << ',' << rates.size() << '\n';
  }
  write_text(ctx.path("sweep_batch_size.csv"), csv.str());
}

void stage_evaluate(const StageContext& ctx) {
  const auto& c = ctx.config;
  const fs::path recon = ctx.require("reconstructions.glck");
  const fs::path batch_path = ctx.require("batch.json");
  const fs::path spab = ctx.require("model_spab.glck");
  std::vector<std::string> outputs{"metrics.csv", "matches.csv"};
  std::string extra;
  if (!ctx.options.sweep_batch_sizes.empty()) {
    outputs.push_back("sweep_batch_size.csv");
    for (std::size_t b : ctx.options.sweep_batch_sizes) extra += std::to_string(b) + ",";
  }
  run_once(ctx, "evaluate", {recon, batch_path, spab}, outputs, extra, [&] {
    const Dataset priv = load_private(c);
    const json batch = json::parse(read_text(batch_path));
    const auto indices = batch.at("indices").get<std::vector<std::size_t>>();
    const ModelCheckpoint images = read_checkpoint_file(recon);

    // Each reconstruction is scored against the batch image it resembles most.
    std::vector<double> psnrs, ssims;
    std::vector<double> best_per_sample(indices.size(), -1.0);
    std::ostringstream matches;
    matches << "reconstruction,batch_row,psnr,ssim\n";
    for (std::size_t r = 0; r < images.tensors.size(); ++r) {
      const Tensor& rec = images.tensors[r].tensor;
      std::size_t best_row = 0;
      double best_ssim = -2.0;
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const double s = ssim(rec, priv.image(indices[i]));
        if (s > best_ssim) best_ssim = s, best_row = i;
      }
      const double p = psnr(rec, priv.image(indices[best_row]));
      psnrs.push_back(p);
      ssims.push_back(best_ssim);
      best_per_sample[best_row] = std::max(best_per_sample[best_row], best_ssim);
      matches << r << ',' << best_row << ',' << fmt(p) << ',' << fmt(best_ssim) << '\n';
    }
    std::size_t success = 0;
    for (double s : best_per_sample) success += s > kDefaultSsimThreshold ? 1 : 0;
    const double rate = indices.empty() ? 0.0 : static_cast<double>(success) / indices.size();

    std::ostringstream csv;
    csv << "metric,mean,std,count\n";
    const MeanStd mp = mean_std(psnrs), msim = mean_std(ssims);
    csv << "psnr," << fmt(mp.mean) << ',' << fmt(mp.stddev) << ',' << psnrs.size() << '\n';
    csv << "ssim," << fmt(msim.mean) << ',' << fmt(msim.stddev) << ',' << ssims.size() << '\n';
    csv << "reconstruction_rate," << fmt(rate) << ",0," << indices.size() << '\n';
    write_text(ctx.path("metrics.csv"), csv.str());
    write_text(ctx.path("matches.csv"), matches.str());
    if (!ctx.options.sweep_batch_sizes.empty()) write_sweep(ctx, load_classifier(spab), priv);
  });
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  pretrain.budget = PgdBudget{4.0 / 255.0, 1.6 / 255.0, 5};
  pretrain.eval_count = 200;
  spab.beta1 = 1.0;
  spab.beta2 = 1.0;
  reconstruct.ir_match.iterations = 1000;
  reconstruct.ir_match.seed_step = 0.1;
  reconstruct.ir_match.generator_step = 0.1;
  reconstruct.ir_match.restarts = 3;
}

void ExperimentConfig::validate() const {
  parse_family(dataset.family);
  if (dataset.image_size != 16 && dataset.image_size != 32) {
    throw ConfigError("image_size must be 16 or 32");
  }
  if ((!dataset.cifar_public.empty() || !dataset.cifar_private.empty()) && dataset.image_size != 32) {
    throw ConfigError("CIFAR-10 inputs need image_size 32");
  }
  if (dataset.classes < 2) throw ConfigError("need at least two classes");
  if (dataset.public_count == 0 || dataset.private_count == 0) {
    throw ConfigError("dataset counts must be positive");
  }
  if (model.ir_dim == 0 || model.spab_width == 0) throw ConfigError("model sizes must be positive");
  pretrain.validate();
  spab.validate();
  if (probe_batch == 0) throw ConfigError("probe_batch must be positive");
  if (round.batch_size == 0) throw ConfigError("round batch_size must be positive");
  if (round.dp) round.dp_config.validate();
  reconstruct.ir_match.validate();
  preimage.budget.validate();
  if (!(preimage.tv_weight >= 0.0)) throw ConfigError("preimage tv_weight must be non-negative");
  if (evaluate.sweep_seeds == 0 || evaluate.batches_per_seed == 0) {
    throw ConfigError("evaluate needs at least one seed and batch");
  }
}

std::string ExperimentConfig::to_json() const { return config_json(*this, true).dump(2) + "\n"; }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    get_if(j, "seed", c.seed);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      get_if(d, "family", c.dataset.family);
      get_if(d, "image_size", c.dataset.image_size);
      get_if(d, "classes", c.dataset.classes);
      get_if(d, "public_count", c.dataset.public_count);
      get_if(d, "private_count", c.dataset.private_count);
      get_if(d, "cifar_public", c.dataset.cifar_public);
      get_if(d, "cifar_private", c.dataset.cifar_private);
    }
    if (j.contains("model")) {
      get_if(j.at("model"), "ir_dim", c.model.ir_dim);
      get_if(j.at("model"), "spab_width", c.model.spab_width);
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      get_if(p, "epochs", c.pretrain.epochs);
      get_if(p, "lr", c.pretrain.lr);
      get_if(p, "batch_size", c.pretrain.batch_size);
      get_if(p, "eval_count", c.pretrain.eval_count);
      if (p.contains("budget")) budget_from(p.at("budget"), c.pretrain.budget);
    }
    if (j.contains("spab")) {
      const auto& s = j.at("spab");
      get_if(s, "epochs", c.spab.epochs);
      get_if(s, "lr", c.spab.lr);
      get_if(s, "beta1", c.spab.beta1);
      get_if(s, "beta2", c.spab.beta2);
      get_if(s, "sigma", c.spab.sigma);
      get_if(s, "batch_size", c.spab.batch_size);
      get_if(s, "batches_per_epoch", c.spab.batches_per_epoch);
      get_if(s, "probe_batch", c.probe_batch);
    }
    if (j.contains("round")) {
      const auto& r = j.at("round");
      get_if(r, "batch_size", c.round.batch_size);
      get_if(r, "dp", c.round.dp);
      get_if(r, "epsilon", c.round.dp_config.epsilon);
      get_if(r, "delta", c.round.dp_config.delta);
      get_if(r, "clip", c.round.dp_config.clip);
    }
    if (j.contains("reconstruct")) {
      const auto& r = j.at("reconstruct");
      auto& m = c.reconstruct.ir_match;
      get_if(r, "iterations", m.iterations);
      get_if(r, "perturb_period", m.perturb_period);
      get_if(r, "seed_step", m.seed_step);
      get_if(r, "generator_step", m.generator_step);
      get_if(r, "alpha", m.alpha);
      get_if(r, "tv_weight", m.tv_weight);
      get_if(r, "restarts", m.restarts);
      get_if(r, "max_candidates", c.reconstruct.max_candidates);
    }
    if (j.contains("preimage")) {
      const auto& p = j.at("preimage");
      get_if(p, "pairs", c.preimage.pairs);
      get_if(p, "tv_weight", c.preimage.tv_weight);
      if (p.contains("budget")) budget_from(p.at("budget"), c.preimage.budget);
    }
    if (j.contains("evaluate")) {
      get_if(j.at("evaluate"), "sweep_seeds", c.evaluate.sweep_seeds);
      get_if(j.at("evaluate"), "batches_per_seed", c.evaluate.batches_per_seed);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return from_json(s.str());
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(config_json(*this, false).dump())); }

Dataset load_public(const ExperimentConfig& c) {
  if (!c.dataset.cifar_public.empty()) return load_cifar10_binary(c.dataset.cifar_public);
  return synth_dataset(derive_seed(c.seed, "public"), c.dataset.public_count, c.dataset.classes,
                       c.dataset.image_size, parse_family(c.dataset.family), Split::kPublic);
}

Dataset load_private(const ExperimentConfig& c) {
  if (!c.dataset.cifar_private.empty()) return load_cifar10_binary(c.dataset.cifar_private);
  return synth_dataset(derive_seed(c.seed, "private"), c.dataset.private_count, c.dataset.classes,
                       c.dataset.image_size, parse_family(c.dataset.family), Split::kPrivate);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"pretrain-at", "spab-train", "fed-round",
                                              "extract",     "reconstruct", "preimage",
                                              "detect",      "evaluate",    "demo"};
  return names;
}

StageOutcome run_stage(const std::string& stage, const ExperimentConfig& config,
                       const RunOptions& options) {
  config.validate();
  if (options.jobs == 0) throw ConfigError("--jobs must be at least 1");
  fs::create_directories(config.out_dir);
  const StageContext ctx{config, options, config.out_dir};
  StageOutcome outcome;
  if (stage == "pretrain-at") {
    stage_pretrain(ctx);
  } else if (stage == "spab-train") {
    stage_spab(ctx);
  } else if (stage == "fed-round") {
    stage_fed_round(ctx);
  } else if (stage == "extract") {
    stage_extract(ctx);
  } else if (stage == "reconstruct") {
    stage_reconstruct(ctx);
  } else if (stage == "preimage") {
    stage_preimage(ctx);
  } else if (stage == "detect") {
    outcome.anomalous = stage_detect(ctx);
  } else if (stage == "evaluate") {
    stage_evaluate(ctx);
  } else if (stage == "demo") {
    RunOptions demo = options;
    demo.checkpoint.reset();
    if (demo.sweep_batch_sizes.empty()) demo.sweep_batch_sizes = {8, 16, 32, 64};
    const StageContext dctx{config, demo, config.out_dir};
    stage_pretrain(dctx);
    stage_spab(dctx);
    stage_fed_round(dctx);
    stage_extract(dctx);
    stage_reconstruct(dctx);
    stage_preimage(dctx);
    outcome.anomalous = stage_detect(dctx);
    stage_evaluate(dctx);
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  return outcome;
}

std::vector<IrMatchResult> ir_match_many(std::span<const Tensor> targets,
                                         const FeatureExtractor& extractor,
                                         const GeneratorSpec& generator,
                                         const IrMatchConfig& config, std::size_t jobs) {
  config.validate();
  std::vector<IrMatchResult> results(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < targets.size(); i = next++) {
      try {
        IrMatchConfig cfg = config;
        cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
        results[i] = ir_match(targets[i], extractor, generator, cfg);
        log_message(LogLevel::kDebug, "ir_match job " + std::to_string(i) + " loss " +
                                          std::to_string(results[i].best_loss));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, targets.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

LogLevel log_level() {
  const char* env = std::getenv("GRADLEAK_LOG");
  if (env == nullptr) return LogLevel::kInfo;
  const std::string v(env);
  if (v == "quiet" || v == "0" || v == "error") return LogLevel::kQuiet;
  if (v == "debug" || v == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_message(LogLevel level, const std::string& message) {
  if (level == LogLevel::kQuiet || static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::lock_guard<std::mutex> lock(log_mutex());
  std::cerr << "[gradleak] " << message << '\n';
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const MissingInputError*>(&error)) return kExitMissingInput;
  if (dynamic_cast<const ConfigError*>(&error)) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&error)) return kExitNumeric;
  return kExitFailure;
}

std::string error_record(const std::string& stage, const std::exception& error) {
  std::string kind = "error";
  if (dynamic_cast<const MissingInputError*>(&error)) kind = "missing_input";
  else if (dynamic_cast<const ConfigError*>(&error)) kind = "invalid_config";
  else if (dynamic_cast<const NumericError*>(&error)) kind = "divergence";
  else if (dynamic_cast<const FormatError*>(&error)) kind = "format";
  else if (dynamic_cast<const ShapeError*>(&error)) kind = "shape";
  json j{{"status", "error"},
         {"stage", stage},
         {"kind", kind},
         {"exit_code", exit_code_for(error)},
         {"message", error.what()}};
  return j.dump();
}

}  // namespace gradleak
