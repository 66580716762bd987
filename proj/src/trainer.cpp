#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rng.hpp"
#include "runio.hpp"

namespace fs = std::filesystem;

namespace comodal {

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    require(learning_rate >= 0.0, ErrorCode::invalid_argument, "learning rate must be >= 0");
}

void AdamOptimizer::attach(const ParamStore& params) {
    m_.clear();
    v_.clear();
    for (const auto& [name, node] : params.items()) {
        m_.emplace_back(node->value.dims());
        v_.emplace_back(node->value.dims());
    }
    t_ = 0;
}

void AdamOptimizer::step(ParamStore& params) {
    require(m_.size() == params.items().size(), ErrorCode::invalid_argument,
            "optimizer is not attached to this parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < m_.size(); ++i) {
        NodePtr node = params.items()[i].second;
        node->ensure_grad();
        const Tensor& g = node->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        Tensor& p = node->value;
        const int64_t n = p.numel();
#pragma omp parallel for schedule(static) if (n > 4096)
        for (int64_t k = 0; k < n; ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::restore_state(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

namespace {

std::string batch_ids(const std::vector<const BimodalSample*>& batch) {
    std::string s;
    for (const auto* b : batch) {
        if (!s.empty()) s += ",";
        s += b->id;
    }
    return s;
}

}  // namespace

LossBreakdown train_step(SegModel& model, AdamOptimizer& opt,
                         const std::vector<const BimodalSample*>& labeled,
                         const std::vector<const BimodalSample*>& unlabeled, int epoch,
                         const TrainConfig& cfg, int64_t step_index) {
    const AblationFlags& ab = cfg.train.ablation;
    require(!labeled.empty(), ErrorCode::invalid_argument, "train_step: labeled batch is empty");
    require(!unlabeled.empty() || (!ab.ccl_module && !ab.cmc_strategy), ErrorCode::invalid_argument,
            "train_step: unlabeled batch required while cmc_strategy or ccl_module is enabled");
    for (const auto* s : labeled)
        require(s->labeled(), ErrorCode::invalid_argument,
                "train_step: sample " + s->id + " in the labeled batch has no masks");

    model.params().zero_grads();

    std::vector<NodePtr> sup_terms, csc_terms;
    std::vector<NodePtr> preds_a, preds_b;
    for (const auto* s : labeled) {
        ModelOutputs out = model.forward(zscore_normalize(s->vol_a), zscore_normalize(s->vol_b));
        sup_terms.push_back(supervised_loss(out.logits_a, *s->mask_a, out.logits_b, *s->mask_b,
                                            cfg.train.loss.supervised_mode));
        if (ab.cmc_strategy)
            csc_terms.push_back(
                csc_loss(out.f_ds_a, out.f_ds_b, cfg.train.loss.contrastive_denominator));
    }
    if (ab.cmc_strategy || ab.ccl_module) {
        for (const auto* s : unlabeled) {
            ModelOutputs out =
                model.forward(zscore_normalize(s->vol_a), zscore_normalize(s->vol_b));
            if (ab.cmc_strategy && !cfg.train.loss.csc_labeled_only)
                csc_terms.push_back(
                    csc_loss(out.f_ds_a, out.f_ds_b, cfg.train.loss.contrastive_denominator));
            if (ab.ccl_module) {
                preds_a.push_back(softmax_channels(out.logits_a));
                preds_b.push_back(softmax_channels(out.logits_b));
            }
        }
    }

    NodePtr sup = mean_scalars(sup_terms);
    NodePtr csc = csc_terms.empty() ? nullptr : mean_scalars(csc_terms);
    NodePtr cac = preds_a.empty()
                      ? nullptr
                      : cac_loss(preds_a, preds_b, cfg.train.loss.contrastive_denominator);

    auto [alpha, beta] = ramp_weights(epoch, cfg.train.epochs, cfg.train.ramp_base_weight,
                                      cfg.train.ramp_steepness);
    NodePtr total = sup;
    if (csc) total = add(total, scale(csc, alpha));
    if (cac) total = add(total, scale(cac, beta));

    if (!std::isfinite(total->scalar()))
        fail(ErrorCode::numeric, "non-finite loss at step " + std::to_string(step_index) +
                                     " (labeled batch: " + batch_ids(labeled) +
                                     "; unlabeled batch: " + batch_ids(unlabeled) + ")");

    backward(total);
    opt.step(model.params());

    LossBreakdown b = total_loss(sup->scalar(), csc ? csc->scalar() : 0.0,
                                 cac ? cac->scalar() : 0.0, epoch, cfg.train.epochs,
                                 cfg.train.ramp_base_weight, cfg.train.ramp_steepness);
    b.step = step_index;
    b.epoch = epoch;
    return b;
}

PredictFn model_predictor(const SegModel& model) {
    return [&model](const BimodalSample& s) {
        ModelOutputs out = model.forward(zscore_normalize(s.vol_a), zscore_normalize(s.vol_b));
        return std::make_pair(out.logits_a->value, out.logits_b->value);
    };
}

SplitEvalReport evaluate_split(const PredictFn& predict,
                               const std::vector<BimodalSample>& samples) {
    require(!samples.empty(), ErrorCode::invalid_argument, "evaluate_split: empty split");
    SplitEvalReport report;
    for (const auto& s : samples) {
        require(s.labeled(), ErrorCode::invalid_argument,
                "evaluate_split: sample " + s.id + " has no masks");
        auto [logits_a, logits_b] = predict(s);
        auto [rec_a, rec_b] = evaluate_sample(logits_a, logits_b, s);
        report.records.push_back(std::move(rec_a));
        report.records.push_back(std::move(rec_b));
    }

    const int num_fg = static_cast<int>(report.records.front().per_class_dice.size());
    for (int mod = 0; mod < 2; ++mod) {
        ModalitySummary& sum = report.per_modality[static_cast<size_t>(mod)];
        sum.class_mean_dice.assign(static_cast<size_t>(num_fg), 0.0);
        sum.class_mean_assd.assign(static_cast<size_t>(num_fg), 0.0);
        sum.class_assd_count.assign(static_cast<size_t>(num_fg), 0);
        int n_samples = 0;
        for (const auto& rec : report.records) {
            if (static_cast<int>(rec.modality) != mod) continue;
            ++n_samples;
            for (int k = 0; k < num_fg; ++k) {
                sum.class_mean_dice[static_cast<size_t>(k)] += rec.per_class_dice[static_cast<size_t>(k)];
                if (rec.per_class_assd[static_cast<size_t>(k)].defined()) {
                    sum.class_mean_assd[static_cast<size_t>(k)] +=
                        rec.per_class_assd[static_cast<size_t>(k)].mm;
                    ++sum.class_assd_count[static_cast<size_t>(k)];
                }
            }
        }
        double dice_total = 0.0, assd_total = 0.0;
        int assd_classes = 0;
        for (int k = 0; k < num_fg; ++k) {
            sum.class_mean_dice[static_cast<size_t>(k)] /= n_samples;
            dice_total += sum.class_mean_dice[static_cast<size_t>(k)];
            if (sum.class_assd_count[static_cast<size_t>(k)] > 0) {
                sum.class_mean_assd[static_cast<size_t>(k)] /=
                    sum.class_assd_count[static_cast<size_t>(k)];
                assd_total += sum.class_mean_assd[static_cast<size_t>(k)];
                ++assd_classes;
            }
        }
        sum.mean_dice = dice_total / num_fg;
        sum.assd_defined = assd_classes > 0;
        sum.mean_assd = assd_classes > 0 ? assd_total / assd_classes : 0.0;
    }
    report.overall_mean_dice =
        0.5 * (report.per_modality[0].mean_dice + report.per_modality[1].mean_dice);
    int def = (report.per_modality[0].assd_defined ? 1 : 0) +
              (report.per_modality[1].assd_defined ? 1 : 0);
    report.overall_assd_defined = def > 0;
    report.overall_mean_assd =
        def > 0 ? (report.per_modality[0].mean_assd + report.per_modality[1].mean_assd) / def : 0.0;
    return report;
}

namespace {

ValPoint validate_epoch(const SegModel& model, const std::vector<BimodalSample>& val, int epoch) {
    SplitEvalReport rep = evaluate_split(model_predictor(model), val);
    ValPoint p;
    p.epoch = epoch;
    p.dice_a = rep.per_modality[0].mean_dice;
    p.dice_b = rep.per_modality[1].mean_dice;
    p.mean_dice = rep.overall_mean_dice;
    return p;
}

// Per-epoch batch schedule, a pure function of (seed, epoch): the labeled
// pool is reshuffled every epoch and walked in batches; unlabeled batches are
// drawn from an independently shuffled cycle.
struct EpochSchedule {
    std::vector<std::vector<const BimodalSample*>> labeled_batches;
    std::vector<std::vector<const BimodalSample*>> unlabeled_batches;
};

EpochSchedule make_epoch_schedule(const TrainConfig& cfg, const DatasetSplit& data, int epoch) {
    EpochSchedule sched;
    std::vector<size_t> lab_idx(data.labeled.size());
    for (size_t i = 0; i < lab_idx.size(); ++i) lab_idx[i] = i;
    Rng lab_rng(Rng::mix(cfg.train.seed, Rng::mix(0x1AB, static_cast<uint64_t>(epoch))));
    lab_rng.shuffle(lab_idx);

    const int bl = cfg.train.batch_size_labeled;
    for (size_t pos = 0; pos < lab_idx.size(); pos += static_cast<size_t>(bl)) {
        std::vector<const BimodalSample*> batch;
        for (size_t i = pos; i < std::min(lab_idx.size(), pos + static_cast<size_t>(bl)); ++i)
            batch.push_back(&data.labeled[lab_idx[i]]);
        sched.labeled_batches.push_back(std::move(batch));
    }

    const bool needs_unlabeled =
        (cfg.train.ablation.cmc_strategy || cfg.train.ablation.ccl_module) &&
        !data.unlabeled.empty();
    if (needs_unlabeled) {
        std::vector<size_t> unl_idx(data.unlabeled.size());
        for (size_t i = 0; i < unl_idx.size(); ++i) unl_idx[i] = i;
        Rng unl_rng(Rng::mix(cfg.train.seed, Rng::mix(0x041, static_cast<uint64_t>(epoch))));
        unl_rng.shuffle(unl_idx);
        size_t cursor = 0;
        const int bu = cfg.train.batch_size_unlabeled;
        for (size_t step = 0; step < sched.labeled_batches.size(); ++step) {
            std::vector<const BimodalSample*> batch;
            for (int i = 0; i < bu; ++i) {
                batch.push_back(&data.unlabeled[unl_idx[cursor]]);
                cursor = (cursor + 1) % unl_idx.size();
            }
            sched.unlabeled_batches.push_back(std::move(batch));
        }
    } else {
        sched.unlabeled_batches.assign(sched.labeled_batches.size(), {});
    }
    return sched;
}

TrainResult run_training_loop(const TrainConfig& cfg, const DatasetSplit& data, SegModel& model,
                              AdamOptimizer& opt, int start_epoch, int64_t start_step,
                              double best_val, int best_epoch, const std::string& artifact_dir,
                              int stop_after_epoch) {
    TrainResult result;
    result.best_val_dice = best_val;
    result.best_epoch = best_epoch;
    result.best_params = model.snapshot_params();

    const int last_epoch = stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.train.epochs)
                                                : cfg.train.epochs;
    const bool has_val = !data.val.empty();
    for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
        EpochSchedule sched = make_epoch_schedule(cfg, data, epoch);
        for (size_t i = 0; i < sched.labeled_batches.size(); ++i) {
            ++start_step;
            LossBreakdown b = train_step(model, opt, sched.labeled_batches[i],
                                         sched.unlabeled_batches[i], epoch, cfg, start_step);
            result.history.push_back(b);
        }
        if (has_val && (epoch % cfg.train.eval_every == 0 || epoch == cfg.train.epochs)) {
            ValPoint p = validate_epoch(model, data.val, epoch);
            result.val_curve.push_back(p);
            if (p.mean_dice > result.best_val_dice) {
                result.best_val_dice = p.mean_dice;
                result.best_epoch = epoch;
                result.best_params = model.snapshot_params();
                if (!artifact_dir.empty()) {
                    result.best_checkpoint_path = artifact_dir + "/best.ckpt";
                    save_checkpoint(result.best_checkpoint_path, model);
                }
            }
        }
        result.epochs_run = epoch;
    }
    result.steps_run = start_step;

    if (!has_val) {
        // No validation split: the final parameters stand in for "best".
        result.best_params = model.snapshot_params();
        result.best_epoch = result.epochs_run;
    }

    if (!artifact_dir.empty()) {
        fs::create_directories(artifact_dir);
        if (result.best_checkpoint_path.empty()) {
            result.best_checkpoint_path = artifact_dir + "/best.ckpt";
            std::vector<Tensor> current = model.snapshot_params();
            model.restore_params(result.best_params);
            save_checkpoint(result.best_checkpoint_path, model);
            model.restore_params(current);
        }
        TrainerCheckpointState ts;
        ts.epoch = result.epochs_run;
        ts.step = result.steps_run;
        ts.adam_t = opt.steps_taken();
        ts.best_val_dice = result.best_val_dice;
        ts.adam_m = opt.moments_m();
        ts.adam_v = opt.moments_v();
        result.last_checkpoint_path = artifact_dir + "/last.ckpt";
        save_checkpoint(result.last_checkpoint_path, model, &ts);
        write_training_log_csv(artifact_dir + "/training_log.csv", result.history);
        write_val_curve_csv(artifact_dir + "/val_curve.csv", result.val_curve);
    }
    return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetSplit& data,
                  const std::string& artifact_dir, int stop_after_epoch) {
    cfg.validate();
    data.validate();
    require(data.labeled.front().mask_a->num_classes == cfg.model.num_classes,
            ErrorCode::config,
            "dataset class count does not match the model configuration");
    if (!artifact_dir.empty()) fs::create_directories(artifact_dir);

    SegModel model(cfg.model, cfg.train.ablation.modality_specific_encoder,
                   cfg.train.ablation.cmc_strategy, Rng::mix(cfg.train.seed, 0x11717));
    AdamOptimizer opt(cfg.train.learning_rate);
    opt.attach(model.params());
    return run_training_loop(cfg, data, model, opt, 1, 0, -1.0, 0, artifact_dir,
                             stop_after_epoch);
}

TrainResult resume_training(const TrainConfig& cfg, const DatasetSplit& data,
                            const std::string& checkpoint_path, const std::string& artifact_dir) {
    cfg.validate();
    data.validate();
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    require(ckpt.trainer_state.has_value(), ErrorCode::invalid_argument,
            checkpoint_path + ": checkpoint carries no trainer state; cannot resume");
    AdamOptimizer opt(cfg.train.learning_rate);
    opt.attach(ckpt.model->params());
    opt.restore_state(std::move(ckpt.trainer_state->adam_m), std::move(ckpt.trainer_state->adam_v),
                      ckpt.trainer_state->adam_t);
    if (!artifact_dir.empty()) fs::create_directories(artifact_dir);
    return run_training_loop(cfg, data, *ckpt.model, opt, ckpt.trainer_state->epoch + 1,
                             ckpt.trainer_state->step, ckpt.trainer_state->best_val_dice, 0,
                             artifact_dir, 0);
}

AblationTable run_ablation(const TrainConfig& base_cfg, const DatasetSplit& data,
                           const std::string& artifact_root,
                           const std::function<void(const std::string&)>& progress) {
    struct RowSpec {
        const char* name;
        const char* dir;
        AblationFlags flags;
    };
    const RowSpec rows[] = {
        {"baseline", "row1_baseline", {false, false, false}},
        {"+modality-specific encoder", "row2_encoder", {true, false, false}},
        {"+cmc strategy", "row3_cmc", {true, true, false}},
        {"+ccl module", "row4_ccl", {true, true, true}},
    };
    require(!data.test.empty(), ErrorCode::invalid_argument,
            "run_ablation: test split is empty");

    AblationTable table;
    for (const RowSpec& row : rows) {
        if (progress) progress(std::string("training ablation row: ") + row.name);
        TrainConfig cfg = base_cfg;
        cfg.train.ablation = row.flags;
        std::string dir =
            artifact_root.empty() ? std::string() : artifact_root + "/" + row.dir;
        TrainResult tr = train(cfg, data, dir);

        SegModel model(cfg.model, row.flags.modality_specific_encoder, row.flags.cmc_strategy,
                       Rng::mix(cfg.train.seed, 0x11717));
        model.restore_params(tr.best_params);
        SplitEvalReport rep = evaluate_split(model_predictor(model), data.test);

        AblationRow out;
        out.name = row.name;
        out.flags = row.flags;
        out.dice_a = rep.per_modality[0].mean_dice;
        out.dice_b = rep.per_modality[1].mean_dice;
        out.assd_a = rep.per_modality[0].mean_assd;
        out.assd_b = rep.per_modality[1].mean_assd;
        out.assd_a_defined = rep.per_modality[0].assd_defined;
        out.assd_b_defined = rep.per_modality[1].assd_defined;
        table.rows.push_back(std::move(out));
    }
    return table;
}

}  // namespace comodal
