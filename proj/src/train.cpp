#include "once/train.h"

#include <algorithm>
#include <map>
#include <string>

#include "once/adam.h"
#include "once/recommender.h"

namespace once::train {

void TrainConfig::validate() const {
  if (lr_fresh <= 0.0 || lr_pretrained <= 0.0) {
    fail("train config: learning rates must be > 0");
  }
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (batch_size < 1) fail("train config: batch_size must be >= 1");
  if (neg_ratio < 1) fail("train config: neg_ratio must be >= 1");
}

metrics::MetricReport evaluate_model(model::RecModel& model,
                                     const corpus::Corpus& c,
                                     const std::vector<corpus::Impression>& imps) {
  const auto content_vecs = model.encode_contents(c);
  auto score = [&](const corpus::Impression& imp) {
    return model.score_impression(c, imp, content_vecs);
  };
  return metrics::evaluate(c, imps, score);
}

TrainResult fit(model::RecModel& model, const corpus::Corpus& c,
                const TrainConfig& cfg) {
  cfg.validate();
  if (c.vocab.size() == 0) fail("fit: corpus is not finalized");
  if (c.train.empty()) fail("fit: corpus has no training impressions");

  Rng rng(cfg.seed);
  AdamT<float> adam(cfg.lr_pretrained, cfg.lr_fresh);
  auto params = model.params();
  const auto pool = rec::negative_pool(c.train);

  TrainResult result;
  std::map<std::string, TensorT<float>> best;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(c.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<rec::TrainSample> samples;
    for (size_t idx : order) {
      const auto& imp = c.train[idx];
      const bool has_positive =
          std::find(imp.labels.begin(), imp.labels.end(), 1) != imp.labels.end();
      if (!has_positive) continue;
      auto drawn = rec::sample_negatives(imp, c.user(imp.user_id), cfg.neg_ratio,
                                         model.config().history.max_history,
                                         pool, rng);
      for (auto& s : drawn) samples.push_back(std::move(s));
    }
    if (samples.empty()) fail("fit: no positive impression in the training split");
    rng.shuffle(samples);

    double loss_sum = 0.0;
    size_t done = 0;
    while (done < samples.size()) {
      const size_t batch =
          std::min<size_t>(cfg.batch_size, samples.size() - done);
      const auto scale = static_cast<float>(1.0 / static_cast<double>(batch));
      for (size_t b = 0; b < batch; ++b) {
        const auto& s = samples[done + b];
        model::SampleCtxT<float> ctx;
        loss_sum += model.loss_forward(c, s, ctx);
        model.loss_backward(s, ctx, scale);
      }
      adam.step(params);
      done += batch;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(samples.size());
    rec.dev = evaluate_model(model, c, c.dev);
    const double auc = rec.dev.overall.auc;
    result.epochs.push_back(std::move(rec));

    if (result.best_epoch == 0 || auc > result.best_dev_auc) {
      result.best_epoch = epoch;
      result.best_dev_auc = auc;
      best.clear();
      for (const auto* p : params) best.emplace(p->name, p->value);
    }
  }

  for (auto* p : params) p->value = best.at(p->name);
  return result;
}

nlohmann::ordered_json epoch_json(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["train_loss"] = rec.train_loss;
  j["dev"] = metrics::report_json(rec.dev);
  return j;
}

}  // namespace once::train
