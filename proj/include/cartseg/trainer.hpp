#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cartseg/augment.hpp"
#include "cartseg/cohort.hpp"
#include "cartseg/losses.hpp"
#include "cartseg/metrics.hpp"
#include "cartseg/preprocess.hpp"
#include "cartseg/schedule.hpp"
#include "cartseg/stats.hpp"
#include "cartseg/unet.hpp"

namespace cartseg {

enum class Precision { standard, mixed };

struct TrainConfig {
    LossKind loss = LossKind::bce_with_logits;
    LossParams loss_params;
    double lr = 6.21e-5; // optimized same-sequence default
    int batch_size = 7;
    int max_epochs = 100;
    PlateauConfig plateau { 50, 0.1, 10, 0.0 };
    std::optional<EarlyStopConfig> early_stop; // fine-tuning only by default
    Precision precision = Precision::standard;
    double threshold = 0.5; // sigmoid binarization
    std::uint64_t seed = 0;

    void validate() const
    {
        if (!(lr > 0.0))
            throw ConfigError("train: lr must be positive");
        if (batch_size < 1)
            throw ConfigError("train: batch_size must be >= 1");
        if (max_epochs < 1)
            throw ConfigError("train: max_epochs must be >= 1");
        plateau.validate();
        if (early_stop)
            early_stop->validate();
        if (!(threshold > 0.0 && threshold < 1.0))
            throw ConfigError("train: threshold must lie in (0, 1)");
    }
};

// fine-tuning protocol constants: reduced lr, smaller batches, early stopping
inline TrainConfig finetune_defaults()
{
    TrainConfig cfg;
    cfg.lr = 1e-5;
    cfg.batch_size = 4;
    cfg.max_epochs = 50;
    cfg.plateau = PlateauConfig { 10, 0.5, 5, 1e-7 };
    cfg.early_stop = EarlyStopConfig { 15, 0.001 };
    return cfg;
}

struct EpochLog {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_dsc = 0.0;
    double lr = 0.0; // learning rate used during this epoch
    bool checkpoint_saved = false;
};

inline void to_json(json& j, const EpochLog& e)
{
    j = json { { "epoch", e.epoch }, { "train_loss", e.train_loss }, { "val_dsc", e.val_dsc },
        { "lr", e.lr }, { "checkpoint_saved", e.checkpoint_saved } };
}
inline void from_json(const json& j, EpochLog& e)
{
    j.at("epoch").get_to(e.epoch);
    j.at("train_loss").get_to(e.train_loss);
    j.at("val_dsc").get_to(e.val_dsc);
    j.at("lr").get_to(e.lr);
    j.at("checkpoint_saved").get_to(e.checkpoint_saved);
}

inline void append_epoch_logs(const std::vector<EpochLog>& logs, const std::filesystem::path& path)
{
    std::ofstream f(path, std::ios::app);
    if (!f)
        throw DataError("cannot write training log " + path.string());
    for (const auto& e : logs) {
        json j = e;
        f << j.dump() << '\n';
    }
}

// training/evaluation bundle: preprocessed slices plus original-space ground truth
struct StudyData {
    SliceDataset slices;
    std::map<std::string, Mask> original_masks;

    const SliceDatasetEntry& entry(const std::string& id) const
    {
        for (const auto& s : slices.subjects)
            if (s.record.id == id)
                return s;
        throw DataError("subject '" + id + "' not found in the slice dataset");
    }
};

struct TrainResult {
    ModelCheckpoint best;
    std::vector<EpochLog> logs;
};

namespace detail {

    inline float stable_sigmoid(float x)
    {
        return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
    }

} // namespace detail

// Slice-wise prediction, 0.5-threshold binarization (configurable), then 3D
// reconstruction back into the subject's original geometry.
inline Mask predict_subject(UNet<float>& net, const SliceDatasetEntry& sub, double threshold,
    int eval_batch = 16)
{
    const auto n = static_cast<std::int64_t>(sub.slices.size());
    const auto h = sub.slices.front().h, w = sub.slices.front().w;
    std::vector<std::vector<std::uint8_t>> preds(static_cast<std::size_t>(n));
    for (std::int64_t start = 0; start < n; start += eval_batch) {
        const auto b = std::min<std::int64_t>(eval_batch, n - start);
        nn::Tensor<float> x({ b, 1, h, w });
        for (std::int64_t i = 0; i < b; ++i)
            std::copy(sub.slices[std::size_t(start + i)].image.begin(),
                sub.slices[std::size_t(start + i)].image.end(),
                x.data.begin() + i * h * w);
        auto logits = net.forward(x, false);
        for (std::int64_t i = 0; i < b; ++i) {
            auto& plane = preds[std::size_t(start + i)];
            plane.resize(std::size_t(h * w));
            const float* li = logits.data.data() + i * h * w;
            for (std::int64_t p = 0; p < h * w; ++p)
                plane[std::size_t(p)] = detail::stable_sigmoid(li[p]) >= threshold ? 1 : 0;
        }
    }
    return reconstruct(preds, sub.prep, sub.original_geometry);
}

inline double subject_dsc(UNet<float>& net, const StudyData& data, const std::string& id,
    double threshold)
{
    const auto& sub = data.entry(id);
    Mask pred = predict_subject(net, sub, threshold);
    return dsc(pred, data.original_masks.at(id));
}

namespace detail {

    struct SliceRef {
        std::size_t subject;
        std::size_t slice;
        std::uint64_t dataset_index; // stable across epochs, keys the augmentation stream
    };

    // Shared epoch loop. Assumes the model is fully set up (weights loaded,
    // encoder frozen when applicable).
    inline TrainResult run_training_loop(UNet<float>& net, const StudyData& data,
        const SplitFold& fold, const TrainConfig& cfg, const AugmentationConfig& aug,
        const std::string& source_sequence)
    {
        cfg.validate();
        aug.validate();
        if (fold.train_ids.empty() || fold.val_ids.empty())
            throw DataError("training: train and validation roles must be non-empty");

        std::set<std::string> train_set(fold.train_ids.begin(), fold.train_ids.end());
        std::vector<SliceRef> refs;
        std::uint64_t dataset_index = 0;
        for (std::size_t s = 0; s < data.slices.subjects.size(); ++s) {
            const bool in_train = train_set.count(data.slices.subjects[s].record.id) > 0;
            for (std::size_t i = 0; i < data.slices.subjects[s].slices.size(); ++i, ++dataset_index)
                if (in_train)
                    refs.push_back({ s, i, dataset_index });
        }
        if (refs.empty())
            throw DataError("training: no slices found for the train split");
        for (const auto& id : fold.train_ids)
            data.entry(id); // raises if a split id is missing from the dataset
        for (const auto& id : fold.val_ids)
            data.entry(id);

        const auto h = data.slices.subjects.front().slices.front().h;
        const auto w = data.slices.subjects.front().slices.front().w;
        net.check_dims(h, w);
        net.set_mixed_precision(cfg.precision == Precision::mixed);

        nn::Adam<float> opt;
        opt.attach(net.trainable_parameters(), cfg.lr);
        PlateauScheduler scheduler(cfg.lr, cfg.plateau);
        std::optional<EarlyStopper> stopper;
        if (cfg.early_stop)
            stopper.emplace(*cfg.early_stop);

        Rng master(cfg.seed, "training");
        TrainResult result;
        double best_dsc = -1.0;
        double current_lr = cfg.lr;

        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            auto order = refs;
            Rng shuffle_rng = master.substream("shuffle", std::uint64_t(epoch));
            shuffle_rng.shuffle(order);
            Rng dropout_rng = master.substream("dropout", std::uint64_t(epoch));

            double loss_sum = 0.0;
            std::int64_t n_batches = 0;
            for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
                const auto b = std::min<std::size_t>(std::size_t(cfg.batch_size), order.size() - start);
                nn::Tensor<float> x({ std::int64_t(b), 1, h, w });
                std::vector<std::uint8_t> target(b * std::size_t(h * w));
                for (std::size_t i = 0; i < b; ++i) {
                    const auto& ref = order[start + i];
                    Slice2D sample = data.slices.subjects[ref.subject].slices[ref.slice];
                    Rng aug_rng = master.substream("aug", std::uint64_t(epoch), ref.dataset_index);
                    augment(sample, aug, aug_rng);
                    std::copy(sample.image.begin(), sample.image.end(),
                        x.data.begin() + std::int64_t(i) * h * w);
                    std::copy(sample.mask.begin(), sample.mask.end(),
                        target.begin() + std::ptrdiff_t(i * std::size_t(h * w)));
                }
                opt.zero_grad();
                auto logits = net.forward(x, true, &dropout_rng);
                nn::Tensor<float> grad;
                const double loss = batch_loss(cfg.loss, logits, target, cfg.loss_params, &grad);
                if (!std::isfinite(loss))
                    throw StageError("training aborted: non-finite loss at epoch "
                        + std::to_string(epoch) + ", batch " + std::to_string(n_batches));
                net.backward(grad);
                opt.step();
                loss_sum += loss;
                ++n_batches;
            }

            // per-subject 3D validation DSC, averaged across validation subjects
            double val_sum = 0.0;
            for (const auto& id : fold.val_ids)
                val_sum += subject_dsc(net, data, id, cfg.threshold);
            const double val_dsc = val_sum / double(fold.val_ids.size());

            EpochLog log;
            log.epoch = epoch;
            log.train_loss = loss_sum / double(std::max<std::int64_t>(1, n_batches));
            log.val_dsc = val_dsc;
            log.lr = current_lr;
            log.checkpoint_saved = val_dsc > best_dsc;
            if (log.checkpoint_saved) {
                best_dsc = val_dsc;
                CheckpointProvenance prov { source_sequence, epoch, best_dsc, cfg.seed };
                result.best = net.to_checkpoint(prov);
            }
            result.logs.push_back(log);

            current_lr = scheduler.observe(epoch, val_dsc);
            opt.lr = current_lr;

            if (stopper && stopper->observe(val_dsc))
                break;
        }
        result.best.provenance.epochs_trained = static_cast<int>(result.logs.size());
        return result;
    }

} // namespace detail

// From-scratch training on one cross-validation fold: Adam, plateau schedule
// from epoch 50, best-validation-DSC checkpoint retained.
inline TrainResult train_same_sequence(const StudyData& data, const SplitFold& fold,
    const UNetConfig& unet_cfg, const TrainConfig& cfg, const AugmentationConfig& aug)
{
    UNet<float> net(unet_cfg, cfg.seed);
    std::string source = data.slices.subjects.empty()
        ? std::string("scratch")
        : to_string(data.slices.subjects.front().record.sequence);
    return detail::run_training_loop(net, data, fold, cfg, aug, source);
}

// Encoder-frozen fine-tuning from a pretrained checkpoint. The encoder
// (weights, norm scale/shift, running statistics) is bit-identical on exit.
inline TrainResult finetune(const ModelCheckpoint& pretrained, const StudyData& data,
    const SplitFold& increment, const TrainConfig& cfg, const AugmentationConfig& aug)
{
    UNet<float> net = UNet<float>::from_checkpoint(pretrained);
    net.freeze_encoder();
    std::string target = data.slices.subjects.empty()
        ? std::string("unknown")
        : to_string(data.slices.subjects.front().record.sequence);
    const std::string tag = pretrained.provenance.source_sequence + "->" + target;
    return detail::run_training_loop(net, data, increment, cfg, aug, tag);
}

inline std::vector<MetricResult> evaluate_subjects(const ModelCheckpoint& cp, const StudyData& data,
    const std::vector<std::string>& ids, double threshold, const std::string& experiment_tag)
{
    UNet<float> net = UNet<float>::from_checkpoint(cp);
    std::vector<MetricResult> out;
    for (const auto& id : ids) {
        const auto& sub = data.entry(id);
        Mask pred = predict_subject(net, sub, threshold);
        const auto& ref = data.original_masks.at(id);
        MetricResult r;
        r.subject_id = id;
        r.experiment = experiment_tag;
        r.sequence = sub.record.sequence;
        r.lesioned = sub.record.lesioned;
        r.dsc = dsc(pred, ref);
        r.asd_mm = asd(pred, ref);
        out.push_back(std::move(r));
    }
    return out;
}

struct IncrementResult {
    std::int64_t train_size = 0;
    double mean_dsc = 0.0;
    double std_dsc = 0.0;
    std::vector<MetricResult> per_subject;
    std::vector<EpochLog> logs;
};

struct ConvergenceStudyResult {
    ConvergenceCurve curve;
    std::vector<IncrementResult> increments;
};

// Each increment fine-tunes from the same pristine pretrained checkpoint, so
// increments are independent and may run in any order; the curve is their
// mean test DSC by training-set size, with the plateau detector applied when
// enough points exist.
inline ConvergenceStudyResult run_convergence_study(const ModelCheckpoint& pretrained,
    const StudyData& data, const SplitPlan& plan, const TrainConfig& ft_cfg,
    const AugmentationConfig& aug, const std::string& experiment_tag,
    double threshold_dsc_delta = 0.003, int window = 4)
{
    if (plan.kind != SplitKind::convergence)
        throw ConfigError("run_convergence_study: plan kind must be convergence");

    ConvergenceStudyResult out;
    out.curve.threshold = threshold_dsc_delta;
    out.curve.window = window;
    for (const auto& increment : plan.folds) {
        auto trained = finetune(pretrained, data, increment, ft_cfg, aug);
        IncrementResult inc;
        inc.train_size = static_cast<std::int64_t>(increment.train_ids.size());
        inc.per_subject = evaluate_subjects(trained.best, data, increment.test_ids,
            ft_cfg.threshold, experiment_tag);
        inc.logs = std::move(trained.logs);
        double sum = 0.0;
        for (const auto& r : inc.per_subject)
            sum += r.dsc;
        inc.mean_dsc = sum / double(inc.per_subject.size());
        double sq = 0.0;
        for (const auto& r : inc.per_subject)
            sq += (r.dsc - inc.mean_dsc) * (r.dsc - inc.mean_dsc);
        inc.std_dsc = inc.per_subject.size() > 1
            ? std::sqrt(sq / double(inc.per_subject.size() - 1))
            : 0.0;
        out.curve.points.push_back({ inc.train_size, inc.mean_dsc, inc.std_dsc });
        out.increments.push_back(std::move(inc));
    }
    if (static_cast<int>(out.curve.points.size()) >= window + 1)
        out.curve.plateau_at = detect_convergence(out.curve.points, threshold_dsc_delta, window);
    return out;
}

// convergence curve CSV: train_size, mean_dsc, std_dsc, converged_flag
inline void write_convergence_csv(const ConvergenceCurve& curve, const std::filesystem::path& path)
{
    std::ofstream f(path);
    if (!f)
        throw DataError("cannot write " + path.string());
    f << "train_size,mean_dsc,std_dsc,converged_flag\n";
    for (const auto& p : curve.points) {
        const bool converged = curve.plateau_at && p.train_size >= *curve.plateau_at;
        f << p.train_size << ',' << p.mean_dsc << ',' << p.std_dsc << ',' << (converged ? 1 : 0) << '\n';
    }
}

inline ConvergenceCurve read_convergence_csv(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw DataError("cannot read " + path.string());
    ConvergenceCurve curve;
    std::string line;
    std::getline(f, line);
    std::optional<std::int64_t> first_converged;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        CurvePoint p;
        int flag = 0;
        if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%d", &p.train_size, &p.mean_dsc, &p.std_dsc, &flag) != 4)
            throw DataError("malformed convergence row: " + line);
        if (flag && !first_converged)
            first_converged = p.train_size;
        curve.points.push_back(p);
    }
    curve.plateau_at = first_converged;
    return curve;
}

} // namespace cartseg
