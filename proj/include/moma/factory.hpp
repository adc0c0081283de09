#pragma once

#include "moma/config.hpp"
#include "moma/eval_protocol.hpp"
#include "moma/inference_engine.hpp"
#include "moma/metrics.hpp"
#include "moma/motion_vae.hpp"
#include "moma/training.hpp"

namespace moma {

// RunConfig -> module configs. The CLI and the ablation harness share these.
VaeConfig vae_config_from(const RunConfig& cfg, int feature_dim);
TrainConfig vae_train_config_from(const RunConfig& cfg);
TransformerConfig transformer_config_from(const RunConfig& cfg, int latent_dim);
HeadConfig head_config_from(const RunConfig& cfg);
TrainConfig mad_train_config_from(const RunConfig& cfg);
InferenceParams inference_params_from(const RunConfig& cfg);
EvaluatorConfig evaluator_config_from(const RunConfig& cfg);
ToyCorpusSpec toy_spec_from(const RunConfig& cfg);
GenerationEvalOptions eval_options_from(const RunConfig& cfg);

// Assembles the generation bundle from loaded artifacts.
MadModels make_models(const LoadedVae& vae, const MadModel& mad, float fps);

}  // namespace moma
