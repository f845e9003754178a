#include "memora/unlearn.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

std::string to_string(UnlearnMethod method) {
  return method == UnlearnMethod::negative_guidance ? "negative_guidance" : "retrain_excluding";
}

UnlearnMethod parse_unlearn_method(const std::string& name) {
  if (name == "negative_guidance") return UnlearnMethod::negative_guidance;
  if (name == "retrain_excluding") return UnlearnMethod::retrain_excluding;
  throw std::invalid_argument(fmt::format("unknown unlearning method '{}'", name));
}

void measure_unlearning(UnlearnResult& result, const Denoiser& base, const UnlearnProbe& probe) {
  const int dim = base.latent_dim();
  const SamplerSettings& s = probe.eval.sampler;
  result.pre_relearn_asr = asr(plain_generator(result.model, probe.sched, s), result.erased_concept,
                               probe.classifier, probe.eval.n_prompts, probe.eval.seed, dim);
  EvalOptions opts = probe.eval;
  opts.attack.reset();
  const EvalReport r = evaluate(plain_generator(result.model, probe.sched, s), plain_generator(base, probe.sched, s),
                                result.erased_concept, probe.classifier, opts, dim, probe.sched);
  result.retained_fid_delta = r.fid_retained;
}

UnlearnResult unlearn_negative_guidance(const Denoiser& base, const Condition& concept_cond,
                                        const NegativeGuidanceConfig& config, const UnlearnProbe& probe) {
  if (concept_cond.is_null()) throw std::invalid_argument("cannot erase the unconditional branch");
  const int erased = *concept_cond.concept_id;
  base.condition(erased);  // range check
  if (!(config.eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");

  UnlearnResult result{base, UnlearnMethod::negative_guidance, erased, 0.0, 0.0, {}};
  if (config.steps > 0) {
    const int nc = base.spec().n_concepts;
    const int dim = base.latent_dim();
    const SamplerSettings& ts = config.teacher_sampler;
    // Teacher images for every concept, drawn from the frozen base.
    Matrix erased_imgs;
    std::vector<Matrix> kept;
    std::vector<int> kept_labels;
    for (int c = 0; c < nc; ++c) {
      const Matrix z = prompt_batch(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(c)),
                                    config.teacher_per_concept, dim);
      Matrix x = sample(base, z, base.cond_rows(base.condition(c), z.rows()), probe.sched, ts.guidance,
                        ts.n_infer_steps, ts.clip_sample);
      if (c == erased) {
        erased_imgs = std::move(x);
      } else {
        kept.push_back(std::move(x));
        kept_labels.insert(kept_labels.end(), static_cast<std::size_t>(config.teacher_per_concept), c);
      }
    }
    Matrix kept_imgs(static_cast<Eigen::Index>(kept_labels.size()), dim);
    for (std::size_t i = 0; i < kept.size(); ++i)
      kept_imgs.middleRows(static_cast<Eigen::Index>(i) * config.teacher_per_concept, config.teacher_per_concept) =
          kept[i];

    std::vector<std::string> trainable = {"cond.table"};
    for (const std::string& l : Denoiser::cond_layers()) trainable.push_back(l + ".weight");

    Rng rng(derive_seed(config.seed, 1));
    Adam adam;
    const int b = config.batch;
    const int tf = base.spec().time_features;
    const Matrix null_rows = base.cond_rows(base.null_condition(), b);
    const Matrix cond_rows = base.cond_rows(base.condition(erased), b);
    Matrix x0(b, dim), xk(b, dim);
    std::vector<int> t(static_cast<std::size_t>(b)), yk(static_cast<std::size_t>(b));
    const std::vector<int> ye(static_cast<std::size_t>(b), erased);
    for (long step = 0; step < config.steps; ++step) {
      for (int i = 0; i < b; ++i) x0.row(i) = erased_imgs.row(rng.uniform_int(0, static_cast<int>(erased_imgs.rows()) - 1));
      for (int i = 0; i < b; ++i) t[i] = rng.uniform_int(0, probe.sched.n_train_steps - 1);
      const Matrix eps = rng.normal_matrix(b, dim);
      const Matrix zt = forward_diffuse(x0, t, eps, probe.sched);
      const Matrix eu = base.predict(zt, t, null_rows);
      const Matrix target = eu - config.eta * (base.predict(zt, t, cond_rows) - eu);

      Tape tape;
      auto P = params_on_tape(tape, result.model.params(), trainable);
      auto p = [&P](const std::string& name) { return P.at(name); };
      const Var tfeat = tape.constant(time_features(t, tf));
      const Var pred = denoiser_forward(TapeOps{tape}, p, tape.constant(zt), tfeat,
                                        tape.gather_rows(P.at("cond.table"), ye));
      Var loss = tape.squared_error(pred, target);

      if (config.preserve_weight > 0.0 && kept_imgs.rows() > 0) {
        for (int i = 0; i < b; ++i) {
          const int k = rng.uniform_int(0, static_cast<int>(kept_imgs.rows()) - 1);
          xk.row(i) = kept_imgs.row(k);
          yk[i] = kept_labels[k];
        }
        for (int i = 0; i < b; ++i)
          if (rng.bernoulli(config.null_fraction)) yk[i] = base.null_index();
        const Matrix zk = forward_diffuse(xk, t, eps, probe.sched);
        Matrix table_rows(b, base.spec().cond_dim);
        for (int i = 0; i < b; ++i) table_rows.row(i) = base.params().at("cond.table").row(yk[i]);
        const Matrix keep_target = base.predict(zk, t, table_rows);
        const Var keep_pred = denoiser_forward(TapeOps{tape}, p, tape.constant(zk), tfeat,
                                               tape.gather_rows(P.at("cond.table"), yk));
        loss = tape.axpby(1.0, loss, config.preserve_weight, tape.squared_error(keep_pred, keep_target));
      }
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value))
        throw std::runtime_error(fmt::format("negative-guidance loss became non-finite at step {}", step));
      result.losses.push_back(value);
      tape.backward(loss);
      GradMap grads;
      for (const std::string& name : trainable) grads.emplace(name, tape.grad(P.at(name)));
      adam.step(result.model.params(), grads, config.lr);
    }
  }
  measure_unlearning(result, base, probe);
  return result;
}

UnlearnResult unlearn_retrain_excluding(const Denoiser& base, const ConceptDataset& data, int concept_id,
                                        const NoiseSchedule& sched, const RetrainConfig& config,
                                        const UnlearnProbe& probe) {
  if (config.anchor == concept_id) throw std::invalid_argument("anchor must differ from the erased concept");
  base.condition(concept_id);
  base.condition(config.anchor);
  const auto counts = data.class_counts();
  if (concept_id >= static_cast<int>(counts.size()) || counts[concept_id] == 0)
    throw std::invalid_argument(fmt::format("dataset has no samples of concept {}", concept_id));

  UnlearnResult result{base, UnlearnMethod::retrain_excluding, concept_id, 0.0, 0.0, {}};
  if (config.train.steps > 0) {
    // Retained rows keep their labels; anchor rows are duplicated under the
    // erased label so the erased condition now points at the anchor.
    std::vector<Eigen::Index> rows;
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (data.labels[i] != concept_id) {
        rows.push_back(i);
        labels.push_back(data.labels[i]);
      }
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (data.labels[i] == config.anchor) {
        rows.push_back(i);
        labels.push_back(concept_id);
      }
    Matrix images(static_cast<Eigen::Index>(rows.size()), data.images.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) images.row(i) = data.images.row(rows[i]);

    SteeredRows steered;
    if (config.steer) {
      const Matrix erased = data.images_of(concept_id);
      const Matrix anchors = data.images_of(config.anchor);
      if (anchors.rows() == 0) throw std::invalid_argument("dataset has no samples of the anchor concept");
      std::vector<int> conds{concept_id};
      if (config.steer_every_condition) {
        conds.clear();
        for (int k = 0; k <= base.null_index(); ++k) conds.push_back(k);
      }
      const Eigen::Index m = erased.rows();
      steered.inputs.resize(m * static_cast<Eigen::Index>(conds.size()), erased.cols());
      steered.targets.resize(steered.inputs.rows(), erased.cols());
      for (std::size_t c = 0; c < conds.size(); ++c)
        for (Eigen::Index i = 0; i < m; ++i) {
          const Eigen::Index r = static_cast<Eigen::Index>(c) * m + i;
          steered.inputs.row(r) = erased.row(i);
          steered.targets.row(r) = anchors.row(i % anchors.rows());
          steered.labels.push_back(conds[c]);
        }
      steered.min_t = config.steer_min_t;
      steered.fraction = config.steer_fraction;
    }

    if (config.reinitialize) result.model = Denoiser(base.spec(), derive_seed(config.train.seed, 0));
    fit_denoiser(result.model, images, labels, sched, config.train, &result.losses,
                 config.steer ? &steered : nullptr);
  }
  measure_unlearning(result, base, probe);
  return result;
}

}  // namespace memora
