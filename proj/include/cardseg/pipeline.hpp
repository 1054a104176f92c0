#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardseg/annotations.hpp"
#include "cardseg/feature_grid.hpp"
#include "cardseg/label_ops.hpp"
#include "cardseg/metrics.hpp"
#include "cardseg/nifti.hpp"
#include "cardseg/phantom.hpp"
#include "cardseg/resample.hpp"
#include "cardseg/unet.hpp"

namespace cardseg {

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

enum class Stage {
    UNET1,             // image -> six labels (PA folded into RV)
    REFINE_LABELS,     // deterministic LV/LVMyo correction + RV/PA split
    UNET1_NO_PA,       // image -> six refined labels (PA region background)
    UNET2_EXTRAPOLATE, // six-label one-hot -> seven labels
    UNET3_PARCELLATE,  // LA one-hot crop -> LA sublabels
    FUSE,              // deterministic fusion into the ten-label map
    UNET4,             // image -> ten labels directly
};

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::UNET1: return "unet1";
        case Stage::REFINE_LABELS: return "refine_labels";
        case Stage::UNET1_NO_PA: return "unet1_no_pa";
        case Stage::UNET2_EXTRAPOLATE: return "unet2";
        case Stage::UNET3_PARCELLATE: return "unet3";
        case Stage::FUSE: return "fuse";
        case Stage::UNET4: return "unet4";
    }
    return "?";
}

inline Stage stage_from_string(const std::string& s) {
    if (s == "unet1") return Stage::UNET1;
    if (s == "refine_labels") return Stage::REFINE_LABELS;
    if (s == "unet1_no_pa") return Stage::UNET1_NO_PA;
    if (s == "unet2") return Stage::UNET2_EXTRAPOLATE;
    if (s == "unet3") return Stage::UNET3_PARCELLATE;
    if (s == "fuse") return Stage::FUSE;
    if (s == "unet4") return Stage::UNET4;
    throw data_error("unknown stage: " + s);
}

/// Channel arithmetic and schema transitions per stage.
struct StageSpec {
    Stage stage;
    const LabelSchema* input_schema;   // nullptr for image inputs
    const LabelSchema* output_schema;  // nullptr for deterministic stages
    int in_channels;
    int out_channels;

    static StageSpec of(Stage stage) {
        switch (stage) {
            case Stage::UNET1:
                return {stage, nullptr, &LabelSchema::six(), 1, 7};
            case Stage::UNET1_NO_PA:
                return {stage, nullptr, &LabelSchema::six_no_pa_refined(), 1, 7};
            case Stage::UNET2_EXTRAPOLATE:
                return {stage, &LabelSchema::six_no_pa_refined(), &LabelSchema::seven(), 7, 8};
            case Stage::UNET3_PARCELLATE:
                // background+LA in, background + {LAbody, LPV, RPV, LAA} out
                return {stage, nullptr, &LabelSchema::ten(), 2, 5};
            case Stage::UNET4:
                return {stage, nullptr, &LabelSchema::ten(), 1, 11};
            default:
                return {stage, nullptr, nullptr, 0, 0};
        }
    }
};

// the four LA sublabels in network channel order 1..4
inline const std::array<LabelId, 4>& la_sublabel_ids() {
    static const std::array<LabelId, 4> ids = {
        LabelSchema::ten().id_of("LAbody"), LabelSchema::ten().id_of("LPV"),
        LabelSchema::ten().id_of("RPV"), LabelSchema::ten().id_of("LAA")};
    return ids;
}

// single-object labels subject to largest-component cleanup; the paired
// pulmonary veins may legitimately be several vessels
inline std::vector<LabelId> cleanup_label_ids() {
    const auto& ten = LabelSchema::ten();
    return {ten.id_of("LV"), ten.id_of("LVMyo"),  ten.id_of("RV"), ten.id_of("RA"),
            ten.id_of("AA"), ten.id_of("PA"),     ten.id_of("LAbody"), ten.id_of("LAA")};
}

// ---------------------------------------------------------------------------
// preprocessing and sample construction
// ---------------------------------------------------------------------------

/// Per-volume z-score normalization applied to every network image input.
inline IntensityVolume normalize_intensity(const IntensityVolume& vol) {
    double sum = 0.0, sumsq = 0.0;
    for (float v : vol.data()) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(vol.size());
    const double mean = sum / n;
    const double stddev = std::sqrt(std::max(1e-12, sumsq / n - mean * mean));
    IntensityVolume out = vol;
    for (auto& v : out.data())
        v = static_cast<float>((static_cast<double>(v) - mean) / stddev);
    return out;
}

struct PreprocessResult {
    IntensityVolume intensity;
    LabelVolume labels;
    double final_spacing = 1.0;
};

/// The standard input normalization: resample to 1 mm, center on the heart,
/// grow the voxel size by 10% steps until the labels fit, then crop or pad.
inline PreprocessResult preprocess_case(const IntensityVolume& intensity,
                                        const LabelVolume& labels, Dims3 target,
                                        double base_spacing = 1.0) {
    IntensityVolume ri = resample_isotropic(intensity, base_spacing);
    LabelVolume rl = resample_isotropic(labels, base_spacing);
    auto fit = fit_field_of_view(ri, rl, target);
    return {std::move(fit.intensity), std::move(fit.labels), fit.final_spacing};
}

/// Superior field-of-view truncation: blanks intensity and labels in the top
/// `fraction` of slices, simulating scans that cut off the pulmonary artery.
inline std::pair<IntensityVolume, LabelVolume> simulate_fov_crop(const IntensityVolume& intensity,
                                                                 const LabelVolume& labels,
                                                                 double fraction) {
    if (fraction < 0 || fraction >= 0.5)
        throw data_error("simulate_fov_crop: fraction must be in [0, 0.5)");
    require_same_geometry(intensity, labels, "simulate_fov_crop");
    IntensityVolume iout = intensity;
    LabelVolume lout = labels;
    const auto& d = labels.dims();
    const auto n_crop =
        static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(d.nz)));
    for (std::int64_t z = d.nz - n_crop; z < d.nz; ++z)
        for (std::int64_t y = 0; y < d.ny; ++y)
            for (std::int64_t x = 0; x < d.nx; ++x) {
                iout.at(z, y, x) = 0.0f;
                lout.at(z, y, x) = kBackground;
            }
    return {std::move(iout), std::move(lout)};
}

// ---------------------------------------------------------------------------
// ground-truth construction (programmatic stand-in for manual annotation)
// ---------------------------------------------------------------------------

struct GroundTruth {
    LabelVolume six_no_pa_refined;  // PA voxels blanked to background
    LabelVolume seven;
    LabelVolume ten;
    ReassignResult reassign;        // diagnostics of the LV/LVMyo correction
};

/// From an initial six-label map plus the recorded plane and boxes, derive
/// the refined six-, seven- and ten-label ground truths.
inline GroundTruth build_ground_truth(const IntensityVolume& intensity, const LabelVolume& six,
                                      const CaseAnnotations& ann) {
    if (!ann.plane) throw data_error("build_ground_truth: annotations lack a valve plane");
    GroundTruth gt;
    gt.reassign = lv_myo_reassign(intensity, six);

    const auto& seven_schema = LabelSchema::seven();
    LabelVolume refined7 = gt.reassign.labels.with_schema(seven_schema);
    gt.seven = split_by_plane(refined7, seven_schema.id_of("RV"), *ann.plane,
                              seven_schema.id_of("RV"), seven_schema.id_of("PA"));
    gt.ten = parcellate_la_boxes(gt.seven, ann.boxes);

    gt.six_no_pa_refined = LabelVolume(gt.seven.geometry(), LabelSchema::six_no_pa_refined());
    const LabelId pa = seven_schema.id_of("PA");
    for (std::size_t i = 0; i < gt.seven.size(); ++i) {
        const auto l = static_cast<std::int64_t>(i);
        gt.six_no_pa_refined[l] = (gt.seven[l] == pa) ? kBackground : gt.seven[l];
    }
    return gt;
}

/// Stage ground truths are pure merges of the ten-label map, so a TEN volume
/// (for example a phantom's, possibly resampled) determines all of them.
inline GroundTruth derive_ground_truth_from_ten(const LabelVolume& ten) {
    if (ten.schema().variant() != SchemaVariant::TEN)
        throw data_error("derive_ground_truth_from_ten: expected a ten-label map");
    GroundTruth gt;
    gt.ten = ten;
    gt.seven = ten.merged_to(LabelSchema::seven());
    gt.six_no_pa_refined =
        LabelVolume(ten.geometry(), LabelSchema::six_no_pa_refined());
    const LabelId pa = LabelSchema::seven().id_of("PA");
    for (std::size_t i = 0; i < gt.seven.size(); ++i) {
        const auto l = static_cast<std::int64_t>(i);
        gt.six_no_pa_refined[l] = (gt.seven[l] == pa) ? kBackground : gt.seven[l];
    }
    return gt;
}

// ---------------------------------------------------------------------------
// model bundle
// ---------------------------------------------------------------------------

template <typename T>
struct StageModel {
    StageSpec spec{Stage::UNET1, nullptr, nullptr, 0, 0};
    UNet<T> net;

    StageModel(Stage stage, WidthScale ws)
        : spec(StageSpec::of(stage)),
          net(UNetConfig{spec.in_channels, spec.out_channels, ws}) {}
};

template <typename T>
void save_stage_model(const StageModel<T>& model, const std::string& path) {
    nlohmann::json meta = model.net.config().to_json();
    meta["stage"] = to_string(model.spec.stage);
    save_weights(model.net.weights(), path, meta);
}

template <typename T>
StageModel<T> load_stage_model(const std::string& path) {
    nlohmann::json meta;
    WeightStore<T> store = load_weights<T>(path, &meta);
    const Stage stage = stage_from_string(meta.at("stage").get<std::string>());
    const UNetConfig cfg = UNetConfig::from_json(meta);
    StageModel<T> model(stage, cfg.width_scale);
    if (model.spec.in_channels != cfg.in_channels || model.spec.out_channels != cfg.out_channels)
        throw data_error("stage model channel count disagrees with stage contract: " + path);
    model.net.set_weights(store);
    return model;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

struct InferenceOptions {
    Dims3 la_crop_dims{128, 128, 128};  // U-Net 3 window, centered on the LA
    bool run_cleanup = true;
    Connectivity cleanup_connectivity = Connectivity::VERTEX26;
};

namespace detail {

/// 2-channel one-hot of one label's mask.
template <typename T>
FeatureGrid<T> one_hot_la(const LabelVolume& labels, LabelId la) {
    FeatureGrid<T> grid(1, 2, labels.dims());
    for (std::size_t l = 0; l < labels.size(); ++l) {
        const bool is_la = labels[static_cast<std::int64_t>(l)] == la;
        grid.channel(0, is_la ? 1 : 0)[l] = T(1);
    }
    return grid;
}

/// Decode a 5-channel LA parcellation grid into TEN sublabels.
template <typename T>
LabelVolume decode_la_sublabels(const FeatureGrid<T>& logits, const Geometry& geom) {
    LabelVolume out(geom, LabelSchema::ten());
    const auto& subs = la_sublabel_ids();
    for (std::int64_t v = 0; v < logits.voxels(); ++v) {
        std::int64_t best = 0;
        T best_v = logits.channel(0, 0)[v];
        for (std::int64_t c = 1; c < logits.channels(); ++c)
            if (logits.channel(0, c)[v] > best_v) {
                best_v = logits.channel(0, c)[v];
                best = c;
            }
        out[v] = best == 0 ? kBackground : subs[static_cast<std::size_t>(best - 1)];
    }
    return out;
}

/// Paste `patch` voxels into a same-schema volume, mapping the patch center
/// back to `center` (the inverse of crop_or_pad).
inline void paste_labels(LabelVolume& dst, const LabelVolume& patch, Index3 center) {
    const Index3 patch_center{patch.dims().nz / 2, patch.dims().ny / 2, patch.dims().nx / 2};
    const Index3 shift = center - patch_center;  // patch index + shift = dst index
    for (std::int64_t z = 0; z < patch.dims().nz; ++z)
        for (std::int64_t y = 0; y < patch.dims().ny; ++y)
            for (std::int64_t x = 0; x < patch.dims().nx; ++x) {
                const Index3 d = Index3{z, y, x} + shift;
                if (dst.dims().contains(d) && patch.at(z, y, x) != kBackground)
                    dst.at(d) = patch.at(z, y, x);
            }
}

}  // namespace detail

/// Multi-stage inference on a preprocessed intensity volume:
/// image -> six refined labels -> extrapolated PA -> LA parcellation ->
/// fusion -> largest-component cleanup.  `unet2` and `unet3` are optional;
/// missing stages degrade to an empty PA / an all-body LA.
template <typename T>
LabelVolume run_inference(const IntensityVolume& preprocessed, const StageModel<T>& unet1_no_pa,
                          const StageModel<T>* unet2, const StageModel<T>* unet3,
                          const InferenceOptions& opts = {}) {
    if (unet1_no_pa.spec.stage != Stage::UNET1_NO_PA)
        throw data_error("run_inference: first model must be the unet1_no_pa stage");
    const Geometry geom = preprocessed.geometry();

    // stage: image -> refined six labels
    FeatureGrid<T> image(1, 1, geom.dims);
    {
        const IntensityVolume norm = normalize_intensity(preprocessed);
        for (std::size_t i = 0; i < norm.size(); ++i)
            image.data()[i] = static_cast<T>(norm.data()[i]);
    }
    LabelVolume base = argmax_decode(unet1_no_pa.net.forward(image),
                                     LabelSchema::six_no_pa_refined(), geom);

    // stage: label-to-label PA extrapolation
    LabelVolume extrapolated = base.with_schema(LabelSchema::seven());
    if (unet2) {
        if (unet2->spec.stage != Stage::UNET2_EXTRAPOLATE)
            throw data_error("run_inference: unet2 model has the wrong stage");
        const auto in = one_hot_encode<T>(base, LabelSchema::six_no_pa_refined());
        extrapolated = argmax_decode(unet2->net.forward(in), LabelSchema::seven(), geom);
    }

    // stage: LA parcellation on a crop centered on the LA bounding box
    LabelVolume parcellated(geom, LabelSchema::ten());
    const LabelId la = base.schema().id_of("LA");
    if (unet3 && base.count_of(la) > 0) {
        if (unet3->spec.stage != Stage::UNET3_PARCELLATE)
            throw data_error("run_inference: unet3 model has the wrong stage");
        const BinaryMask la_mask = base.mask_of(la);
        LabelVolume la_only(geom, LabelSchema::six_no_pa_refined());
        for (std::size_t i = 0; i < base.size(); ++i)
            if (la_mask.get(static_cast<std::int64_t>(i)))
                la_only[static_cast<std::int64_t>(i)] = la;
        const Index3 center = heart_center(la_only);
        const LabelVolume crop = crop_or_pad(la_only, opts.la_crop_dims, center);
        const auto in = detail::one_hot_la<T>(crop, la);
        const LabelVolume sub =
            detail::decode_la_sublabels(unet3->net.forward(in), crop.geometry());
        detail::paste_labels(parcellated, sub, center);
    }

    LabelVolume fused = fuse_predictions(base, extrapolated, parcellated);
    if (opts.run_cleanup)
        fused = largest_component_cleanup(fused, cleanup_label_ids(), opts.cleanup_connectivity);
    return fused;
}

/// Single-stage direct path: image -> ten labels.
template <typename T>
LabelVolume run_inference_direct(const IntensityVolume& preprocessed, const StageModel<T>& unet4,
                                 const InferenceOptions& opts = {}) {
    if (unet4.spec.stage != Stage::UNET4)
        throw data_error("run_inference_direct: model must be the unet4 stage");
    const Geometry geom = preprocessed.geometry();
    FeatureGrid<T> image(1, 1, geom.dims);
    const IntensityVolume norm = normalize_intensity(preprocessed);
    for (std::size_t i = 0; i < norm.size(); ++i)
        image.data()[i] = static_cast<T>(norm.data()[i]);
    LabelVolume out = argmax_decode(unet4.net.forward(image), LabelSchema::ten(), geom);
    if (opts.run_cleanup)
        out = largest_component_cleanup(out, cleanup_label_ids(), opts.cleanup_connectivity);
    return out;
}

// ---------------------------------------------------------------------------
// stage training
// ---------------------------------------------------------------------------

/// A fully prepared case: preprocessed intensity plus per-stage ground truth
/// on the same grid, and the annotations mapped to that grid's voxel space.
struct PreparedCase {
    std::string case_id;
    IntensityVolume intensity;
    GroundTruth gt;
};

/// Build the (input, target) pair a given network stage trains on.
/// `fov_crop_fraction` > 0 truncates the superior slices of the INPUT only,
/// which is how the PA extrapolation stage learns to predict beyond the
/// scanned field of view.
template <typename T>
TrainSample<T> make_training_sample(Stage stage, const PreparedCase& pc,
                                    Dims3 la_crop_dims = {128, 128, 128},
                                    double fov_crop_fraction = 0.0) {
    switch (stage) {
        case Stage::UNET1_NO_PA:
        case Stage::UNET1:
        case Stage::UNET4: {
            const IntensityVolume norm = normalize_intensity(pc.intensity);
            FeatureGrid<T> in(1, 1, norm.dims());
            for (std::size_t i = 0; i < norm.size(); ++i)
                in.data()[i] = static_cast<T>(norm.data()[i]);
            LabelVolume target = (stage == Stage::UNET4) ? pc.gt.ten
                                : (stage == Stage::UNET1)
                                    ? pc.gt.seven.merged_to(LabelSchema::six())
                                    : pc.gt.six_no_pa_refined;
            return {std::move(in), std::move(target)};
        }
        case Stage::UNET2_EXTRAPOLATE: {
            LabelVolume in_labels = pc.gt.six_no_pa_refined;
            if (fov_crop_fraction > 0)
                in_labels = degrade_labels(in_labels, DegradeMode::FOV_CROP, fov_crop_fraction);
            return {one_hot_encode<T>(in_labels, LabelSchema::six_no_pa_refined()), pc.gt.seven};
        }
        case Stage::UNET3_PARCELLATE: {
            // crop both input mask and sublabel target around the LA
            const auto& ten = pc.gt.ten;
            const auto& subs = la_sublabel_ids();
            LabelVolume la_only(ten.geometry(), LabelSchema::ten());
            for (std::size_t i = 0; i < ten.size(); ++i) {
                const auto l = static_cast<std::int64_t>(i);
                for (LabelId sid : subs)
                    if (ten[l] == sid) la_only[l] = sid;
            }
            if (la_only.foreground_count() == 0)
                throw data_error("make_training_sample: case has no LA voxels");
            const Index3 center = heart_center(la_only);
            const LabelVolume crop = crop_or_pad(la_only, la_crop_dims, center);

            FeatureGrid<T> in(1, 2, la_crop_dims);
            LabelVolume target(crop.geometry(), LabelSchema::by_variant(SchemaVariant::SIX));
            // target ids are channel indices 0..4: background + the sublabels
            for (std::size_t i = 0; i < crop.size(); ++i) {
                const auto l = static_cast<std::int64_t>(i);
                LabelId ch = 0;
                for (std::size_t k = 0; k < subs.size(); ++k)
                    if (crop[l] == subs[k]) ch = static_cast<LabelId>(k + 1);
                target[l] = ch;
                in.channel(0, crop[l] != kBackground ? 1 : 0)[i] = T(1);
            }
            return {std::move(in), std::move(target)};
        }
        default:
            throw data_error("stage has no trainable network");
    }
}

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffled split with configurable ratios (defaults follow a
/// roughly 77/11.5/11.5 train/val/test division).
inline SplitIndices split_dataset(std::size_t n, std::uint64_t seed, double val_fraction = 0.115,
                                  double test_fraction = 0.115) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed ^ 0x73706c6974ull);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    SplitIndices s;
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_val)
            s.val.push_back(order[i]);
        else if (i < n_val + n_test)
            s.test.push_back(order[i]);
        else
            s.train.push_back(order[i]);
    }
    if (s.train.empty()) throw data_error("split_dataset: empty training split");
    return s;
}

template <typename T>
struct StageTrainResult {
    StageModel<T> model;
    std::vector<double> loss_history;
    std::optional<DiceReport> test_report;
};

/// Train one network stage end to end: build samples, split, fit with Adam,
/// keep the best-validation weights, and score the held-out split.
template <typename T>
StageTrainResult<T> train_stage(Stage stage, const std::vector<PreparedCase>& cases,
                                WidthScale ws, const TrainHyperparams& hp,
                                Dims3 la_crop_dims = {128, 128, 128},
                                double fov_crop_fraction = 0.0,
                                bool holdout_splits = true) {
    if (cases.empty()) throw data_error("train_stage: no cases");
    std::vector<TrainSample<T>> samples;
    samples.reserve(cases.size());
    for (const auto& pc : cases)
        samples.push_back(make_training_sample<T>(stage, pc, la_crop_dims, fov_crop_fraction));

    SplitIndices split;
    if (holdout_splits && cases.size() >= 4) {
        split = split_dataset(cases.size(), hp.seed);
    } else {
        for (std::size_t i = 0; i < cases.size(); ++i) split.train.push_back(i);
    }

    std::vector<TrainSample<T>> train_set, val_set;
    for (auto i : split.train) train_set.push_back(samples[i]);
    for (auto i : split.val) val_set.push_back(samples[i]);

    StageTrainResult<T> res{StageModel<T>(stage, ws), {}, std::nullopt};
    res.model.net.init_weights(hp.seed);
    auto tr = train(res.model.net, train_set, hp, val_set);
    res.model.net.set_weights(tr.weights);
    res.loss_history = std::move(tr.loss_history);

    if (!split.test.empty()) {
        const auto* out_schema = res.model.spec.output_schema;
        std::vector<LabelVolume> preds, refs;
        for (auto i : split.test) {
            auto logits = res.model.net.forward(samples[i].input);
            const Geometry g = samples[i].target.geometry();
            preds.push_back(argmax_decode(logits, *out_schema, g)
                                .with_schema(samples[i].target.schema()));
            refs.push_back(samples[i].target);
        }
        std::vector<std::pair<const LabelVolume*, const LabelVolume*>> pairs;
        for (std::size_t i = 0; i < preds.size(); ++i) pairs.push_back({&preds[i], &refs[i]});
        res.test_report = dice_report(pairs, refs.front().schema());
    }
    return res;
}

}  // namespace cardseg
