#include "tut/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tut {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

VideoSample stride(const VideoSample& v, int factor) {
  if (factor == 1) return v;
  VideoSample out = resample_temporal(v, static_cast<double>(factor), 1.0);
  out.fps = v.fps / factor;
  return out;
}

std::vector<VideoSample> working_copies(const Dataset& data, int factor) {
  std::vector<VideoSample> out;
  out.reserve(data.videos.size());
  for (const auto& v : data.videos) out.push_back(stride(v, factor));
  return out;
}

double selection_score(const EvalReport& r) {
  double s = r.acc + r.edit;
  for (const auto& [_, f] : r.f1) s += f;
  return s / static_cast<double>(2 + r.f1.size());
}

void check_finite(double v, const std::string& term, const std::string& video, int epoch) {
  if (!std::isfinite(v))
    throw TrainingError("non-finite " + term + " loss on video '" + video + "' in epoch " + std::to_string(epoch));
}

}  // namespace

bool LrSchedule::observe(double epoch_loss) {
  bool reduced = false;
  if (previous_ && epoch_loss > *previous_) {
    if (++counter_ >= patience_) {
      lr_ *= factor_;
      counter_ = 0;
      reduced = true;
    }
  }
  previous_ = epoch_loss;
  return reduced;
}

ModelConfig resolve_model_config(ModelConfig cfg, const Dataset& data) {
  if (data.videos.empty()) throw LoadError("dataset has no videos");
  const Index d = data.feature_dim();
  const Index c = data.classes.size();
  if (cfg.input_dim == 0) cfg.input_dim = d;
  if (cfg.num_classes == 0) cfg.num_classes = c;
  if (cfg.input_dim != d)
    throw ConfigError("model input_dim " + std::to_string(cfg.input_dim) + " does not match feature dim " + std::to_string(d));
  if (cfg.num_classes != c)
    throw ConfigError("model num_classes " + std::to_string(cfg.num_classes) + " does not match class mapping size " +
                      std::to_string(c));
  cfg.validate();
  return cfg;
}

TrainResult train(const Dataset& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset* eval_set,
                  const DataConfig& data_cfg, const TrainHooks& hooks) {
  cfg.validate();
  const ModelConfig mc = resolve_model_config(model_cfg, train_set);
  const int factor = data_cfg.resample_factor();
  const std::vector<VideoSample> videos = working_copies(train_set, factor);
  for (const auto& v : videos)
    if (v.length() < mc.min_length())
      throw ConfigError("video '" + v.id + "' has " + std::to_string(v.length()) + " frames; the model needs at least " +
                        std::to_string(mc.min_length()));

  TrainResult result{Model<float>(mc, cfg.seed), {}, {}, 0};
  TrainState& st = result.state;
  st.schedule = LrSchedule(cfg.lr, cfg.lr_decay_patience, cfg.lr_decay_factor);
  st.dropout = DropoutStreams(mix64(cfg.seed ^ 0x64726f706f7574ULL));
  CounterRng order_rng(mix64(cfg.seed ^ 0x73687566666c65ULL));

  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Matrix<float>> best;
  double best_score = -1.0;

  auto& params = result.model.params();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.shuffle)
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    EpochLog row;
    row.epoch = epoch;
    row.lr = st.schedule.lr();
    const AdamOptions opt{st.schedule.lr(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
    for (std::size_t k : order) {
      const VideoSample& v = videos[k];
      ForwardContext ctx{true, &st.dropout};
      params.zero_grad();
      StageOutputs<float> out;
      LossBreakdown<float> lb;
      try {
        out = result.model.forward(v.features, ctx);
        lb = total_loss(out, v.labels, cfg.loss, mc.attention.window);
      } catch (const DomainError& e) {
        throw TrainingError(std::string(e.what()) + " on video '" + v.id + "' in epoch " + std::to_string(epoch));
      }
      check_finite(lb.ce, "cross-entropy", v.id, epoch);
      check_finite(lb.tmse, "T-MSE", v.id, epoch);
      check_finite(lb.ba, "boundary-aware", v.id, epoch);
      const double total = static_cast<double>(lb.total.item());
      check_finite(total, "total", v.id, epoch);
      lb.total.backward();
      adam_step(params, st.adam, opt);
      row.loss += total;
      row.ce += lb.ce;
      row.tmse += lb.tmse;
      row.ba += lb.ba;
    }
    const double n = static_cast<double>(videos.size());
    row.loss /= n;
    row.ce /= n;
    row.tmse /= n;
    row.ba /= n;
    st.epoch = epoch;
    st.loss_history.push_back(row.loss);
    row.lr_reduced = st.schedule.observe(row.loss);

    const bool eval_now = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs);
    if (eval_now) {
      row.eval = evaluate_run(result.model, eval_set ? *eval_set : train_set, data_cfg).report;
      if (cfg.keep_best_epoch && selection_score(*row.eval) > best_score) {
        best_score = selection_score(*row.eval);
        best.clear();
        for (const auto& [_, t] : params.entries()) best.push_back(t.value());
        result.selected_epoch = epoch;
      }
    }
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(result.log.back(), result.model);
  }

  if (cfg.keep_best_epoch && !best.empty()) {
    auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) Tensor<float>(entries[i].second).mutable_value() = best[i];
  } else {
    result.selected_epoch = cfg.max_epochs;
  }
  return result;
}

std::vector<int> predict_labels(const Model<float>& model, const FeatureMatrix& features) {
  NoGradGuard guard;
  return model.forward(features, ForwardContext{}).prediction();
}

std::vector<int> predict_video(const Model<float>& model, const VideoSample& sample, int factor) {
  if (factor <= 1) return predict_labels(model, sample.features);
  return upsample_predictions(predict_labels(model, stride(sample, factor).features), factor, sample.length());
}

RunEvaluation evaluate_run(const Model<float>& model, const Dataset& data, const DataConfig& data_cfg) {
  RunEvaluation out;
  const int factor = data_cfg.resample_factor();
  for (const auto& v : data.videos) out.videos.push_back({v.id, predict_video(model, v, factor), v.labels});
  out.report = evaluate_corpus(out.videos, data_cfg.thresholds, data_cfg.ignored_classes, data_cfg.f1_pooling);
  return out;
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,ce,tmse,ba,lr,lr_reduced\n";
  for (const auto& r : log)
    out += std::to_string(r.epoch) + "," + fmt(r.loss) + "," + fmt(r.ce) + "," + fmt(r.tmse) + "," + fmt(r.ba) + "," +
           fmt(r.lr) + "," + (r.lr_reduced ? "1" : "0") + "\n";
  return out;
}

std::string segments_csv(std::span<const int> labels, const std::vector<std::string>& class_names) {
  std::string out = "class,start,end\n";
  for (const auto& s : extract_segments(labels)) {
    const auto c = static_cast<std::size_t>(s.label);
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(s.label);
    out += name + "," + std::to_string(s.start) + "," + std::to_string(s.end) + "\n";
  }
  return out;
}

std::string render_timeline_svg(std::span<const int> pred, std::span<const int> gt, const std::vector<std::string>& class_names) {
  const double width = 1000.0;
  const double bar = 40.0;
  const double gap = 24.0;
  const std::size_t strips = gt.empty() ? 1 : 2;
  const double height = static_cast<double>(strips) * (bar + gap) + gap;
  const double frames = static_cast<double>(std::max(pred.size(), gt.size()));
  auto colour = [](int c) {
    // golden-angle hue walk keeps neighbouring ids apart
    char buf[32];
    std::snprintf(buf, sizeof buf, "hsl(%d,65%%,55%%)", static_cast<int>(std::fmod(c * 137.508, 360.0)));
    return std::string(buf);
  };
  auto name = [&](int c) {
    const auto i = static_cast<std::size_t>(c);
    return i < class_names.size() ? class_names[i] : std::to_string(c);
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width + 120 << "\" height=\"" << height << "\">\n";
  auto strip = [&](std::span<const int> labels, const std::string& title, double y) {
    os << "  <text x=\"4\" y=\"" << y + bar * 0.65 << "\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    for (const auto& s : extract_segments(labels)) {
      const double x0 = 110.0 + width * static_cast<double>(s.start) / frames;
      const double w = width * static_cast<double>(s.length()) / frames;
      os << "  <rect x=\"" << fmt(x0) << "\" y=\"" << y << "\" width=\"" << fmt(w) << "\" height=\"" << bar << "\" fill=\""
         << colour(s.label) << "\"><title>" << name(s.label) << " [" << s.start << "," << s.end << "]</title></rect>\n";
    }
  };
  strip(pred, "prediction", gap);
  if (!gt.empty()) strip(gt, "ground truth", 2 * gap + bar);
  os << "</svg>\n";
  return os.str();
}

std::vector<AblationCell> ablation_grid(const std::string& grid, const ModelConfig& base_model, const TrainConfig& base_train,
                                        const std::vector<double>& values) {
  std::vector<AblationCell> cells;
  auto push = [&](auto&& edit) {
    AblationCell c{base_model, base_train};
    edit(c);
    cells.push_back(std::move(c));
  };
  if (grid == "architecture") {
    for (auto arch : {Architecture::UTrans, Architecture::Standard})
      for (auto pat : {AttentionPattern::Full, AttentionPattern::LogSparse, AttentionPattern::Local})
        push([&](AblationCell& c) {
          c.model.architecture = arch;
          c.model.attention.pattern = pat;
        });
  } else if (grid == "positional") {
    for (auto pe : {PeMode::None, PeMode::AbsSinusoidal, PeMode::AbsLearnable})
      push([&](AblationCell& c) { c.model.attention.pe_mode = pe; });
    for (auto share : {RpeShare::NoShare, RpeShare::StageShared, RpeShare::ScaleShared})
      push([&](AblationCell& c) {
        c.model.attention.pe_mode = PeMode::Relative;
        c.model.attention.rpe_share = share;
      });
  } else if (grid == "ba_distance") {
    for (auto d : {BaDistance::KL, BaDistance::JS, BaDistance::L2, BaDistance::Wasserstein})
      push([&](AblationCell& c) { c.train.loss.distance = d; });
  } else if (grid == "window" || grid == "heads" || grid == "beta") {
    if (values.empty()) throw ConfigError("grid '" + grid + "' needs a list of values");
    for (double v : values)
      push([&](AblationCell& c) {
        if (grid == "window") c.model.attention.window = static_cast<Index>(std::llround(v));
        else if (grid == "heads") c.model.attention.heads = static_cast<Index>(std::llround(v));
        else c.train.loss.beta = v;
      });
  } else {
    throw ConfigError("unknown ablation grid: " + grid);
  }
  return cells;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const Dataset& train_set, const Dataset& eval_set,
                                      const DataConfig& data_cfg, const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  const int factor = data_cfg.resample_factor();
  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    try {
      row.cell.model = resolve_model_config(cell.model, train_set);
      for (const auto& v : train_set.videos)
        row.attention_entries =
            std::max(row.attention_entries, model_attention_entries(row.cell.model, (v.length() + factor - 1) / factor));
      TrainResult tr = train(train_set, row.cell.model, cell.train, nullptr, data_cfg);
      row.final_loss = tr.log.back().loss;
      row.report = evaluate_run(tr.model, eval_set, data_cfg).report;
    } catch (const ConfigError& e) {
      row.status = std::string("skipped: ") + e.what();
    }
    rows.push_back(row);
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, std::span<const double> thresholds) {
  std::string out = "architecture,attention,pe_mode,rpe_share,window,heads,beta,ba_distance,attention_entries,final_loss";
  for (double t : thresholds) out += ",f1@" + std::to_string(static_cast<int>(std::lround(t * 100)));
  out += ",edit,acc,status\n";
  for (const auto& r : rows) {
    const auto& m = r.cell.model;
    const bool ok = r.status == "ok";
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out += to_string(m.architecture) + "," + to_string(m.attention.pattern) + "," + to_string(m.attention.pe_mode) + "," +
           to_string(m.attention.rpe_share) + "," + std::to_string(m.attention.window) + "," + std::to_string(m.attention.heads) +
           "," + fmt(r.cell.train.loss.beta) + "," + to_string(r.cell.train.loss.distance) + "," +
           std::to_string(r.attention_entries) + "," + (ok ? fmt(r.final_loss) : "");
    for (double t : thresholds) out += "," + (ok ? fmt(r.report.f1_at(t)) : "");
    out += "," + (ok ? fmt(r.report.edit) : "") + "," + (ok ? fmt(r.report.acc) : "") + "," + status + "\n";
  }
  return out;
}

}  // namespace tut
