#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "once/metrics.h"
#include "once/model.h"

namespace once::train {

struct TrainConfig {
  double lr_fresh = 1e-3;
  double lr_pretrained = 1e-5;
  int epochs = 3;
  int batch_size = 32;
  int neg_ratio = 4;
  uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  metrics::MetricReport dev;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_auc = 0.0;
};

// Epoch loop over negative-sampled impressions with batched Adam updates and
// a full dev evaluation per epoch. Impressions without a positive carry no
// signal and are passed over. After return the model holds the weights of
// the best dev-AUC epoch (the earliest such epoch on ties).
TrainResult fit(model::RecModel& model, const corpus::Corpus& c,
                const TrainConfig& cfg);

// Encodes every content once, then scores and aggregates the impressions.
metrics::MetricReport evaluate_model(model::RecModel& model,
                                     const corpus::Corpus& c,
                                     const std::vector<corpus::Impression>& imps);

nlohmann::ordered_json epoch_json(const EpochRecord& rec);

}  // namespace once::train
